"""Complex-capable cylindrical and spherical Bessel/Hankel functions.

Evaluation is delegated to the AMOS routines wrapped by :mod:`scipy.special`,
which handle complex arguments for all families used here.  This module adds
the domain guards, the z = 0 special cases, recurrence-based derivatives, and
a uniform calling convention (integer order, complex argument) relied on by
the Green's-function assembly in :mod:`holoseis.greens`.

Conventions
-----------
    J_n  : Bessel function of the first kind
    Y_n  : Bessel function of the second kind
    H1_n : Hankel function of the first kind, H1_n = J_n + i Y_n
    j_n  : spherical Bessel function,  j_0(z) = sin(z)/z
    h1_n : spherical Hankel function,  h1_0(z) = -i exp(iz)/z

All functions are pure and stateless; they may be called concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special as _sp

from .errors import DomainError, SingularityError, UsageError

__all__ = [
    "SpecialFunctionResult",
    "MAX_ORDER",
    "bessel_j",
    "bessel_y",
    "hankel_h1",
    "spherical_bessel",
    "bessel_j_derivative",
    "bessel_y_derivative",
    "hankel_h1_array",
]

MAX_ORDER: int = 200
OVERFLOW_GUARD: float = 1e4


@dataclass(frozen=True)
class SpecialFunctionResult:
    """Value of one special-function evaluation together with its inputs.

    Attributes
    ----------
    value : complex
        Function value (dimensionless).
    order : int
        Integer order n >= 0.
    argument : complex
        Evaluation point z.
    """

    value: complex
    order: int
    argument: complex


def _check_order(n: int) -> int:
    if int(n) != n or n < 0:
        raise UsageError(f"order must be a non-negative integer, got {n!r}")
    if n > MAX_ORDER:
        raise DomainError(f"order {n} exceeds supported maximum {MAX_ORDER}")
    return int(n)


def _check_argument(z: complex) -> complex:
    z = complex(z)
    if not (np.isfinite(z.real) and np.isfinite(z.imag)):
        raise DomainError(f"argument must be finite, got {z!r}")
    if abs(z) > OVERFLOW_GUARD:
        raise DomainError(
            f"|z| = {abs(z):.3g} exceeds overflow guard {OVERFLOW_GUARD:.0e}"
        )
    return z


def bessel_j(n: int, z: complex) -> complex:
    """Bessel function of the first kind J_n(z) for integer n and complex z.

    Accurate to relative ~1e-12 for |z| <= 100 (AMOS backward
    recurrence/series selection internally).
    """
    n = _check_order(n)
    z = _check_argument(z)
    if z == 0:
        return 1.0 + 0.0j if n == 0 else 0.0 + 0.0j
    return complex(_sp.jv(n, z))


def bessel_y(n: int, z: complex) -> complex:
    """Bessel function of the second kind Y_n(z); singular at z = 0."""
    n = _check_order(n)
    z = _check_argument(z)
    if z == 0:
        raise SingularityError("Y_n is singular at z = 0")
    return complex(_sp.yv(n, z))


def hankel_h1(n: int, z: complex) -> complex:
    """Hankel function of the first kind H1_n(z) = J_n(z) + i Y_n(z).

    Raises
    ------
    SingularityError
        If z = 0 (logarithmic/power singularity).
    """
    n = _check_order(n)
    z = _check_argument(z)
    if z == 0:
        raise SingularityError("H1_n is singular at z = 0")
    return complex(_sp.hankel1(n, z))


def spherical_bessel(kind: str, n: int, z: complex) -> complex:
    """Spherical Bessel (kind='j') or spherical Hankel (kind='h1') function.

    Computed from half-integer cylindrical orders,
    z_n(z) = sqrt(pi / (2 z)) Z_{n + 1/2}(z), with the closed-form anchors
    j_0 = sin(z)/z and h1_0 = -i exp(iz)/z recovered exactly in the limit.
    """
    n = _check_order(n)
    z = _check_argument(z)
    if kind == "j":
        if z == 0:
            return 1.0 + 0.0j if n == 0 else 0.0 + 0.0j
        return complex(np.sqrt(np.pi / (2 * z)) * _sp.jv(n + 0.5, z))
    if kind == "h1":
        if z == 0:
            raise SingularityError("h1_n is singular at z = 0")
        return complex(np.sqrt(np.pi / (2 * z)) * _sp.hankel1(n + 0.5, z))
    raise UsageError(f"kind must be 'j' or 'h1', got {kind!r}")


def bessel_j_derivative(n: int, z: complex) -> complex:
    """d/dz J_n(z) via the recurrence J_n' = J_{n-1} - (n/z) J_n (J_0' = -J_1)."""
    n = _check_order(n)
    z = _check_argument(z)
    if n == 0:
        return -bessel_j(1, z)
    if z == 0:
        raise SingularityError("derivative recurrence needs z != 0 for n >= 1")
    return bessel_j(n - 1, z) - (n / z) * bessel_j(n, z)


def bessel_y_derivative(n: int, z: complex) -> complex:
    """d/dz Y_n(z) via the recurrence Y_n' = Y_{n-1} - (n/z) Y_n (Y_0' = -Y_1)."""
    n = _check_order(n)
    z = _check_argument(z)
    if z == 0:
        raise SingularityError("Y_n' is singular at z = 0")
    if n == 0:
        return -bessel_y(1, z)
    return bessel_y(n - 1, z) - (n / z) * bessel_y(n, z)


def hankel_h1_array(n: int, z: np.ndarray) -> np.ndarray:
    """Vectorized H1_n over an array of complex arguments (no zero entries).

    Used by the dense Green's-matrix assembly; guards are applied on the
    magnitude envelope only, not per element, to keep assembly cheap.
    """
    n = _check_order(n)
    z = np.asarray(z, dtype=np.complex128)
    if np.any(z == 0):
        raise SingularityError("H1_n is singular at z = 0")
    amax = float(np.max(np.abs(z))) if z.size else 0.0
    if amax > OVERFLOW_GUARD:
        raise DomainError(
            f"max |z| = {amax:.3g} exceeds overflow guard {OVERFLOW_GUARD:.0e}"
        )
    return _sp.hankel1(n, z)


def evaluate(family: str, n: int, z: complex) -> SpecialFunctionResult:
    """Evaluate one member of a family and return the tagged result record."""
    if family == "J":
        value = bessel_j(n, z)
    elif family == "Y":
        value = bessel_y(n, z)
    elif family == "H1":
        value = hankel_h1(n, z)
    elif family in ("j", "h1"):
        value = spherical_bessel(family, n, z)
    else:
        raise UsageError(f"unknown family {family!r}")
    return SpecialFunctionResult(value=value, order=int(n), argument=complex(z))
