"""Physical medium model and its recast to Helmholtz form.

A medium is described by sound speed c, density rho, damping gamma >= 0, a
mass-conserving flow u and a source strength S >= 0 on the interior nodes of
a grid; the exterior stays frozen at scalar reference values.  The recast map
produces the (v, A, S) coefficients of the generic wave operator

    -(Laplace + 2i A . grad - v + k^2) psi = s,

    k^2 = (omega^2 + 2i omega gamma_ref) / c_ref^2
    A   = omega u / c^2
    v   = k^2 - (omega^2 + 2i gamma omega)/c^2 + rho^{1/2} Lap(rho^{-1/2})
          - 2i omega f rho (u . grad f),      f := 1/(rho^{1/2} c).

All differential operators are the shared finite-difference stencils of the
grid, so the partial derivatives returned here are the exact derivatives of
the discrete recast for flat backgrounds (and second-order consistent
otherwise), which is what the derivative/adjoint consistency tests require.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import InvalidParameterError, UsageError
from .greens import DeltaOperator, Grid

__all__ = [
    "MediumParams",
    "HelmholtzParams",
    "FrequencyContext",
    "PartialV",
    "frequency_band",
    "recast",
    "partial_v",
    "partial_A",
    "damping_profile",
    "helmholtz_delta",
    "uniform_medium",
    "medium_from_descriptor",
    "flow_divergence_matrix",
    "project_divergence_free",
    "stream_function_flow",
    "DAMPING_GAMMA0",
    "DAMPING_OMEGA0",
]

# damping power law: gamma0/2pi = 4.29 uHz, omega0/2pi = 3 mHz,
# plateau 2pi x 125 uHz above 5.3 mHz
DAMPING_GAMMA0 = 2.0 * np.pi * 4.29e-6
DAMPING_OMEGA0 = 2.0 * np.pi * 3.0e-3
DAMPING_CUTOFF = 2.0 * np.pi * 5.3e-3
DAMPING_PLATEAU = 2.0 * np.pi * 125e-6
DAMPING_EXPONENT = 5.77


@dataclass
class FrequencyContext:
    """One member of the frequency band: omega, source power, band metadata."""

    omega: float
    power: float = 1.0
    n_frequencies: int = 1
    band: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.omega <= 0:
            raise UsageError("omega must be positive")
        if self.power <= 0:
            raise UsageError("source power spectrum must be positive")


def frequency_band(
    n: int, omega_min: float, omega_max: float, power: float = 1.0
) -> List[FrequencyContext]:
    """n evenly spaced frequencies over [omega_min, omega_max], inclusive."""
    if n < 1:
        raise UsageError("need at least one frequency")
    omegas = np.linspace(omega_min, omega_max, n) if n > 1 else np.array([omega_min])
    return [
        FrequencyContext(
            omega=float(w), power=power, n_frequencies=n, band=(omega_min, omega_max)
        )
        for w in omegas
    ]


@dataclass
class MediumParams:
    """Physical fields on the interior nodes; exterior frozen at the reference.

    Attributes
    ----------
    grid : Grid
    c, rho, gamma, S : np.ndarray, shape (n_int,)
        Sound speed, density, damping (>= 0), source strength (>= 0).
    u : np.ndarray or None, shape (n_int, d)
        Flow field; None means flow-free.
    c_ref, rho_ref, gamma_ref : float
        Exterior/reference values; also define the reference wavenumber.
    c_min, rho_min : float
        Admissibility floors.
    """

    grid: Grid
    c: np.ndarray
    rho: np.ndarray
    gamma: np.ndarray
    S: np.ndarray
    u: Optional[np.ndarray] = None
    c_ref: float = 1.0
    rho_ref: float = 1.0
    gamma_ref: float = 0.0
    c_min: float = 1e-12
    rho_min: float = 1e-12

    def validate(self, div_tol: float = 1e-8) -> None:
        n = self.grid.n_interior
        for name in ("c", "rho", "gamma", "S"):
            f = getattr(self, name)
            if f.shape != (n,):
                raise InvalidParameterError(f"{name} must have shape ({n},)")
        if np.min(self.c) < self.c_min or self.c_min <= 0:
            raise InvalidParameterError("sound speed below admissible floor")
        if np.min(self.rho) < self.rho_min or self.rho_min <= 0:
            raise InvalidParameterError("density below admissible floor")
        if np.min(self.gamma) < 0:
            raise InvalidParameterError("damping must be non-negative")
        if np.min(self.S) < 0:
            raise InvalidParameterError("source strength must be non-negative")
        if self.u is not None:
            if self.u.shape != (n, self.grid.dim):
                raise InvalidParameterError(f"u must have shape ({n}, {self.grid.dim})")
            r = flow_divergence_matrix(self.grid, self.rho)
            resid = np.linalg.norm(r @ self.u.ravel(order="F"))
            scale = np.linalg.norm(self.rho[:, None] * self.u)
            if scale > 0 and resid > div_tol * scale:
                raise InvalidParameterError(
                    f"div(rho u) residual {resid:.3e} exceeds {div_tol:.0e} * |rho u|"
                )

    def copy(self) -> "MediumParams":
        return replace(
            self,
            c=self.c.copy(),
            rho=self.rho.copy(),
            gamma=self.gamma.copy(),
            S=self.S.copy(),
            u=None if self.u is None else self.u.copy(),
        )

    def reference_wavenumber(self, freq: FrequencyContext) -> complex:
        """k^2 = (omega^2 + 2i omega gamma_ref)/c_ref^2; principal sqrt.

        The stratification correction 1/(4 H^2) of non-uniform backgrounds is
        not modeled for uniform references.
        """
        k2 = (freq.omega**2 + 2j * freq.omega * self.gamma_ref) / self.c_ref**2
        return complex(np.sqrt(k2))


@dataclass
class HelmholtzParams:
    """Recast coefficients (v, A, S) plus the reference wavenumber."""

    v: np.ndarray  # (n_int,), complex
    A: Optional[np.ndarray]  # (n_int, d) real or None
    S: np.ndarray  # (n_int,), real >= 0
    k_ref: complex
    omega: float

    def sign_condition(self, grid: Grid) -> np.ndarray:
        """Pointwise div A - Im k^2 + Im v (should be <= 0 for admissibility)."""
        value = np.imag(self.v) - np.imag(self.k_ref**2) * np.ones_like(self.v.real)
        if self.A is not None:
            dmats = grid.gradient_matrices()
            div_a = sum(dmats[i] @ self.A[:, i] for i in range(self.A.shape[1]))
            value = value + np.real(div_a)
        return value


def damping_profile(omega: float) -> float:
    """Frequency-dependent damping: power law below 5.3 mHz, plateau above."""
    if omega <= 0:
        raise UsageError("omega must be positive")
    if omega >= DAMPING_CUTOFF:
        return DAMPING_PLATEAU
    return DAMPING_GAMMA0 * abs(omega / DAMPING_OMEGA0) ** DAMPING_EXPONENT


# ---------------------------------------------------------------------------
# Recast and its parameter-wise derivatives
# ---------------------------------------------------------------------------
def recast(params: MediumParams, freq: FrequencyContext) -> HelmholtzParams:
    """Transform physical parameters to the (v, A, S) Helmholtz coefficients."""
    params.validate()
    grid = params.grid
    omega = freq.omega
    k_ref = params.reference_wavenumber(freq)
    v = np.full(grid.n_interior, k_ref**2, dtype=np.complex128)
    v -= (omega**2 + 2j * params.gamma * omega) / params.c**2

    rho = params.rho
    if np.ptp(rho) > 0:  # rho^{1/2} Lap(rho^{-1/2}) vanishes identically if flat
        lap = grid.laplacian_matrix()
        v += np.sqrt(rho) * (lap @ (rho**-0.5))

    a_field = None
    if params.u is not None and np.any(params.u):
        f = 1.0 / (np.sqrt(rho) * params.c)
        dmats = grid.gradient_matrices()
        grad_f = np.column_stack([d @ f for d in dmats])  # (n, dim)
        v -= 2j * omega * f * rho * np.sum(params.u * grad_f, axis=1)
        a_field = omega * params.u / params.c[:, None] ** 2
    return HelmholtzParams(v=v, A=a_field, S=params.S.copy(), k_ref=k_ref, omega=omega)


@dataclass
class PartialV:
    """Coefficients (g0, g1, g2) of [d_q v](dq) = g0 dq + g1 . grad dq + g2 Lap dq.

    For q = 'u', order0 has shape (n, d) and is dotted with the flow
    perturbation; order1/order2 are unused.
    """

    quantity: str
    order0: Optional[np.ndarray]
    order1: Optional[np.ndarray] = None
    order2: Optional[np.ndarray] = None

    def apply(self, dq: np.ndarray, grid: Grid) -> np.ndarray:
        """Evaluate the directional derivative of v for a perturbation dq."""
        if self.quantity == "u":
            if dq.ndim != 2:
                raise UsageError("flow perturbation must be a vector field")
            return np.sum(self.order0 * dq, axis=1).astype(np.complex128)
        out = np.zeros(len(dq), dtype=np.complex128)
        if self.order0 is not None:
            out += self.order0 * dq
        if self.order1 is not None:
            dmats = grid.gradient_matrices()
            for i, d_i in enumerate(dmats):
                out += self.order1[:, i] * (d_i @ dq)
        if self.order2 is not None:
            out += self.order2 * (grid.laplacian_matrix() @ dq)
        return out


def partial_v(
    q_name: str, params: MediumParams, freq: FrequencyContext, dq: Optional[np.ndarray] = None
) -> PartialV:
    """Coefficient fields of the v-derivative for one physical quantity.

    The optional dq is accepted for signature symmetry with apply-style
    callers and is not needed to form the coefficients.
    """
    grid = params.grid
    omega = freq.omega
    c, rho, gamma = params.c, params.rho, params.gamma
    n = grid.n_interior

    if q_name == "gamma":
        return PartialV("gamma", order0=(-2j * omega / c**2).astype(np.complex128))

    if q_name == "c":
        g0 = (2.0 * (omega**2 + 2j * omega * gamma) / c**3).astype(np.complex128)
        g1 = None
        if params.u is not None and np.any(params.u):
            f = 1.0 / (np.sqrt(rho) * c)
            e = -1.0 / (np.sqrt(rho) * c**2)  # df/dc
            dmats = grid.gradient_matrices()
            grad_f = np.column_stack([d @ f for d in dmats])
            grad_e = np.column_stack([d @ e for d in dmats])
            u_dot_gf = np.sum(params.u * grad_f, axis=1)
            u_dot_ge = np.sum(params.u * grad_e, axis=1)
            g0 = g0 - 2j * omega * (e * rho * u_dot_gf + f * rho * u_dot_ge)
            g1 = -2j * omega * (f * rho * e)[:, None] * params.u
        return PartialV("c", order0=g0, order1=g1)

    if q_name == "rho":
        g2 = (-0.5 / rho).astype(np.complex128)
        if np.ptp(rho) == 0 and (params.u is None or not np.any(params.u)):
            return PartialV("rho", order0=None, order1=None, order2=g2)
        lap = grid.laplacian_matrix()
        dmats = grid.gradient_matrices()
        g0 = 0.5 * rho**-0.5 * (lap @ rho**-0.5) - 0.5 * np.sqrt(rho) * (
            lap @ rho**-1.5
        )
        g1 = -np.sqrt(rho)[:, None] * np.column_stack([d @ (rho**-1.5) for d in dmats])
        g0 = g0.astype(np.complex128)
        g1 = g1.astype(np.complex128)
        if params.u is not None and np.any(params.u):
            f = 1.0 / (np.sqrt(rho) * c)
            e = -0.5 / (rho**1.5 * c)  # df/drho
            grad_f = np.column_stack([d @ f for d in dmats])
            grad_e = np.column_stack([d @ e for d in dmats])
            u_dot_gf = np.sum(params.u * grad_f, axis=1)
            u_dot_ge = np.sum(params.u * grad_e, axis=1)
            g0 = g0 - 2j * omega * (e * rho * u_dot_gf + f * u_dot_gf + f * rho * u_dot_ge)
            g1 = g1 - 2j * omega * (f * rho * e)[:, None] * params.u
        return PartialV("rho", order0=g0, order1=g1, order2=g2)

    if q_name == "u":
        f = 1.0 / (np.sqrt(rho) * c)
        dmats = grid.gradient_matrices()
        grad_f = np.column_stack([d @ f for d in dmats])  # zero for flat media
        g0 = (-2j * omega * (f * rho)[:, None] * grad_f).astype(np.complex128)
        return PartialV("u", order0=g0)

    if q_name == "S":
        return PartialV("S", order0=np.zeros(n, dtype=np.complex128))

    raise UsageError(f"unknown quantity {q_name!r}")


def partial_A(
    q_name: str, params: MediumParams, freq: FrequencyContext, dq: Optional[np.ndarray] = None
) -> np.ndarray:
    """Coefficient of the A-derivative: [d_q A](dq) = coeff * dq (pointwise).

    Returns shape (n, d) for q='c' (coeff per component, zero without flow)
    and (n,) for q='u' (the same scalar omega/c^2 scales each component);
    damping and density do not enter A.
    """
    n = params.grid.n_interior
    d = params.grid.dim
    omega = freq.omega
    if q_name == "c":
        if params.u is None:
            return np.zeros((n, d))
        return -omega * params.u / params.c[:, None] ** 3
    if q_name == "u":
        return omega / params.c**2
    if q_name in ("gamma", "rho", "S"):
        return np.zeros((n, d))
    raise UsageError(f"unknown quantity {q_name!r}")


def helmholtz_delta(ref: HelmholtzParams, hp: HelmholtzParams, grid: Grid) -> DeltaOperator:
    """Perturbation operator (L_q - L_0) between two recast parameter sets."""
    dv = hp.v - ref.v
    if hp.A is None and ref.A is None:
        da = None
    else:
        d = grid.dim
        a1 = hp.A if hp.A is not None else np.zeros((grid.n_interior, d))
        a0 = ref.A if ref.A is not None else np.zeros((grid.n_interior, d))
        da = a1 - a0
        if not np.any(da):
            da = None
    # stencils are only needed for first-order (flow) perturbations, and are
    # unavailable on unstructured source grids
    stencil = grid.gradient_matrices() if da is not None else ()
    return DeltaOperator(dv=dv, dA=da, gradient_stencil=stencil)


# ---------------------------------------------------------------------------
# Flow utilities (shared stencil with the inversion constraint)
# ---------------------------------------------------------------------------
def flow_divergence_matrix(grid: Grid, rho: np.ndarray) -> sparse.csr_matrix:
    """Sparse operator u -> div(rho u) on stacked components [u_x; u_y]."""
    dmats = grid.gradient_matrices()
    blocks = [d_i @ sparse.diags(rho) for d_i in dmats]
    return sparse.hstack(blocks, format="csr")


def project_divergence_free(
    grid: Grid, rho: np.ndarray, u: np.ndarray, passes: int = 3
) -> np.ndarray:
    """Euclidean projection of a flow onto the kernel of div(rho .).

    Iterated correction u <- u - R^T (R R^T + eps)^{-1} R u; the small shift
    regularizes near-rank-deficiency of the one-sided boundary closure and
    the extra passes push the residual to the admissibility tolerance.
    """
    r = flow_divergence_matrix(grid, rho)
    gram = (r @ r.T).tocsc()
    scale = abs(gram).max()
    solver = splu(gram + 1e-12 * scale * sparse.identity(gram.shape[0], format="csc"))
    flat = u.ravel(order="F").astype(float)
    for _ in range(passes):
        flat = flat - r.T @ solver.solve(r @ flat)
    return flat.reshape(u.shape, order="F")


def stream_function_flow(
    grid: Grid, psi: np.ndarray, rho: np.ndarray, amplitude: float = 1.0
) -> np.ndarray:
    """Mass-conserving flow from a stream function: u = curl(psi)/rho, projected.

    u_raw = (d psi / dy, -d psi / dx) / rho guarantees div(rho u) = 0 in the
    continuum; the discrete projection removes the stencil commutation error.
    """
    dx, dy = grid.gradient_matrices()
    u_raw = np.column_stack([dy @ psi, -(dx @ psi)]) / rho[:, None]
    u_raw *= amplitude
    return project_divergence_free(grid, rho, u_raw)


# ---------------------------------------------------------------------------
# Presets / descriptors
# ---------------------------------------------------------------------------
def uniform_medium(
    grid: Grid,
    c: float = 1.0,
    rho: float = 1.0,
    gamma: float = 0.0,
    source: float = 0.0,
) -> MediumParams:
    n = grid.n_interior
    return MediumParams(
        grid=grid,
        c=np.full(n, float(c)),
        rho=np.full(n, float(rho)),
        gamma=np.full(n, float(gamma)),
        S=np.full(n, float(source)),
        u=None,
        c_ref=float(c),
        rho_ref=float(rho),
        gamma_ref=float(gamma),
        c_min=1e-8 * float(c),
        rho_min=1e-8 * float(rho),
    )


def _shape_profile(grid: Grid, spec: Dict) -> np.ndarray:
    """Evaluate an analytic perturbation profile on the interior nodes."""
    pts = grid.interior_nodes
    center = np.asarray(spec.get("center", [0.0] * grid.dim), dtype=float)
    hw = float(spec["half_width"])
    amp = float(spec["amplitude"])
    kind = spec.get("shape", "block")
    if kind == "block":
        inside = np.all(np.abs(pts - center[None, :]) <= hw, axis=1)
        return amp * inside.astype(float)
    if kind == "gaussian-blob":
        r2 = np.sum((pts - center[None, :]) ** 2, axis=1)
        return amp * np.exp(-r2 / (2.0 * hw**2))
    raise UsageError(f"unknown perturbation shape {kind!r}")


def medium_from_descriptor(grid: Grid, desc: Dict) -> MediumParams:
    """Build a medium from the JSON descriptor schema.

    Schema::

        {
          "reference": {"c": .., "rho": .., "gamma": ..},
          "source": {"model": "damping" | "uniform" | "zero",
                     "power": .., "value": ..},
          "perturbations": [{"field": "c"|"rho"|"gamma"|"S",
                             "shape": "block"|"gaussian-blob",
                             "center": [..], "half_width": .., "amplitude": ..}],
          "flow": {"model": "stream-gaussian",
                   "center": [..], "half_width": .., "amplitude": ..},
          "fields": {"c": "file.hsm", ...}          # raw binary overrides
        }
    """
    from . import io as _io

    ref = desc.get("reference", {})
    params = uniform_medium(
        grid,
        c=ref.get("c", 1.0),
        rho=ref.get("rho", 1.0),
        gamma=ref.get("gamma", 0.0),
    )
    source = desc.get("source", {"model": "zero"})
    model = source.get("model", "zero")
    if model == "damping":
        power = float(source.get("power", 1.0))
        params.S = power * params.gamma / params.c**2
    elif model == "uniform":
        params.S = np.full(grid.n_interior, float(source.get("value", 1.0)))
    elif model != "zero":
        raise UsageError(f"unknown source model {model!r}")

    for pert in desc.get("perturbations", []):
        fname = pert["field"]
        if fname not in ("c", "rho", "gamma", "S"):
            raise UsageError(f"cannot perturb field {fname!r}")
        setattr(params, fname, getattr(params, fname) + _shape_profile(grid, pert))

    flow = desc.get("flow")
    if flow is not None:
        if flow.get("model", "stream-gaussian") != "stream-gaussian":
            raise UsageError(f"unknown flow model {flow.get('model')!r}")
        center = np.asarray(flow.get("center", [0.0] * grid.dim), dtype=float)
        hw = float(flow["half_width"])
        pts = grid.interior_nodes
        r2 = np.sum((pts - center[None, :]) ** 2, axis=1)
        psi = np.exp(-r2 / (2.0 * hw**2))
        params.u = stream_function_flow(
            grid, psi, params.rho, amplitude=float(flow.get("amplitude", 1.0))
        )

    for fname, path in desc.get("fields", {}).items():
        raw = _io.read_matrix(path)
        if fname == "u":
            params.u = np.real(raw).reshape(grid.n_interior, grid.dim)
        else:
            setattr(params, fname, np.real(raw).reshape(grid.n_interior))

    params.validate()
    return params
