"""Dense Green's operators for uniform reference media and their resolvent updates.

The discrete convention throughout the package: a kernel matrix ``K`` of shape
(n, n) represents the integral operator

    (G s)(x_i) = sum_j K[i, j] s[j] w[j]

with quadrature weights ``w`` attached to the grid nodes, i.e. kernels are
stored *without* weights and every application inserts them explicitly.

A perturbed medium enters through the second-kind identity

    G_q = [Id + G_0 (L_q - L_0)]^{-1} G_0,
    (L_q - L_0) psi = dv * psi - 2i dA . grad(psi),

solved by a pivoted LU factorization restricted to the support of the
perturbation and extended back to the full grid.  The returned operator keeps
the factorization, so receiver-row extraction and the Hermitian products
needed by the propagators stay cheap on large grids; the full dense kernel is
materialized lazily when requested.
"""

from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.linalg import lu_factor, lu_solve
from scipy.linalg.lapack import zgecon
from scipy.special import eval_legendre

from . import io as _io
from .errors import (
    DomainError,
    MemoryBudgetError,
    ResonanceError,
    SingularityError,
    UsageError,
)
from .specfun import hankel_h1, hankel_h1_array, bessel_j, spherical_bessel

logger = logging.getLogger(__name__)

EULER_GAMMA: float = 0.5772156649015328606
DEFAULT_BUDGET_BYTES: int = 4 * 1024**3
CACHE_ENV_VAR: str = "HOLOSEIS_CACHE"

__all__ = [
    "Grid",
    "GreensOperator",
    "DeltaOperator",
    "square_grid",
    "disk_grid",
    "ball_grid_3d",
    "green_uniform",
    "green_diagonal_2d",
    "green_diagonal_3d",
    "green_modal",
    "assemble_green",
    "assemble_receiver_rows",
    "update_green",
]


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------
@dataclass
class Grid:
    """Quadrature grid: interior (volume) nodes plus receiver nodes.

    Attributes
    ----------
    nodes : np.ndarray, shape (n, d)
        Node positions; interior nodes first, then receivers (by convention
        of the factories, not a requirement).
    weights : np.ndarray, shape (n,)
        Quadrature weight per node: cell measure for interior nodes, arc
        (d=2) or surface-patch (d=3) measure for receiver nodes.
    receiver_idx : np.ndarray
        Indices of the receiver nodes (observation hypersurface).
    interior_idx : np.ndarray
        Indices of the volume nodes carrying sources/perturbations.
    wavelength_resolution : float
        Nodes per local wavelength the grid was built for (>= 7).
    interior_shape : tuple or None
        (nx, ny) row-major structure of the interior block; None for
        unstructured interiors (no finite-difference stencils available).
    spacing : float or None
        Lattice spacing of the structured interior.
    domain_measure : float or None
        Expected measure of the interior region, checked by validate().
    """

    nodes: np.ndarray
    weights: np.ndarray
    receiver_idx: np.ndarray
    interior_idx: np.ndarray
    wavelength_resolution: float
    interior_shape: Optional[Tuple[int, ...]] = None
    spacing: Optional[float] = None
    domain_measure: Optional[float] = None
    meta: dict = field(default_factory=dict)
    _stencils: Optional[Tuple[sparse.csr_matrix, ...]] = field(
        default=None, repr=False, compare=False
    )

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_interior(self) -> int:
        return len(self.interior_idx)

    @property
    def n_receivers(self) -> int:
        return len(self.receiver_idx)

    @property
    def interior_nodes(self) -> np.ndarray:
        return self.nodes[self.interior_idx]

    @property
    def receiver_nodes(self) -> np.ndarray:
        return self.nodes[self.receiver_idx]

    @property
    def interior_weights(self) -> np.ndarray:
        return self.weights[self.interior_idx]

    @property
    def receiver_weights(self) -> np.ndarray:
        return self.weights[self.receiver_idx]

    def validate(self) -> None:
        """Check grid invariants; raises UsageError on violation."""
        n = self.n_nodes
        if self.weights.shape != (n,):
            raise UsageError(f"weights shape {self.weights.shape} != ({n},)")
        if np.any(self.weights <= 0):
            raise UsageError("all quadrature weights must be positive")
        if np.intersect1d(self.receiver_idx, self.interior_idx).size:
            raise UsageError("receiver_idx and interior_idx must be disjoint")
        if self.wavelength_resolution < 7.0:
            raise UsageError(
                f"resolution {self.wavelength_resolution:.2f} below 7 nodes "
                "per wavelength"
            )
        if self.domain_measure is not None:
            total = float(np.sum(self.interior_weights))
            rel = abs(total - self.domain_measure) / self.domain_measure
            if rel > 0.01:
                raise UsageError(
                    f"interior weights sum {total:.6g} deviates {rel:.2%} "
                    f"from domain measure {self.domain_measure:.6g}"
                )

    def content_hash(self) -> str:
        """SHA-256 over node positions, weights and index sets."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.nodes).tobytes())
        h.update(np.ascontiguousarray(self.weights).tobytes())
        h.update(np.ascontiguousarray(self.receiver_idx).tobytes())
        h.update(np.ascontiguousarray(self.interior_idx).tobytes())
        return h.hexdigest()

    # -- finite-difference stencils on the structured interior --------------
    def gradient_matrices(self) -> Tuple[sparse.csr_matrix, ...]:
        """Sparse d/dx_i matrices on the interior block (centered, one-sided
        at the block boundary).  Perturbation fields vanish at the boundary of
        the interior region, so the one-sided closure is second-order benign.
        """
        if self._stencils is None:
            if self.interior_shape is None or self.spacing is None:
                raise UsageError("grid has no structured interior block")
            object.__setattr__(
                self, "_stencils", _build_gradients(self.interior_shape, self.spacing)
            )
        return self._stencils

    def laplacian_matrix(self) -> sparse.csr_matrix:
        """Discrete Laplacian composed from the shared gradient stencils
        (sum_i D_i @ D_i), so its transpose is exactly available."""
        mats = self.gradient_matrices()
        lap = mats[0] @ mats[0]
        for d in mats[1:]:
            lap = lap + d @ d
        return lap.tocsr()


def _d1_matrix(m: int, h: float) -> sparse.csr_matrix:
    """1D first derivative: centered interior, 2nd-order one-sided at ends."""
    rows, cols, vals = [], [], []
    for i in range(m):
        if 0 < i < m - 1:
            rows += [i, i]
            cols += [i - 1, i + 1]
            vals += [-0.5 / h, 0.5 / h]
        elif i == 0:
            rows += [0, 0, 0]
            cols += [0, 1, 2]
            vals += [-1.5 / h, 2.0 / h, -0.5 / h]
        else:
            rows += [i, i, i]
            cols += [i, i - 1, i - 2]
            vals += [1.5 / h, -2.0 / h, 0.5 / h]
    return sparse.csr_matrix((vals, (rows, cols)), shape=(m, m))


def _build_gradients(shape: Tuple[int, ...], h: float) -> Tuple[sparse.csr_matrix, ...]:
    if len(shape) != 2:
        raise UsageError("structured stencils implemented for 2D blocks only")
    nx, ny = shape
    dx1 = _d1_matrix(nx, h)
    dy1 = _d1_matrix(ny, h)
    eye_x = sparse.identity(nx, format="csr")
    eye_y = sparse.identity(ny, format="csr")
    # row-major interior ordering: node index = ix * ny + iy
    dx = sparse.kron(dx1, eye_y, format="csr")
    dy = sparse.kron(eye_x, dy1, format="csr")
    return dx, dy


# ---------------------------------------------------------------------------
# Grid factories
# ---------------------------------------------------------------------------
def _circle_receivers(radius: float, n: int, phase: float) -> Tuple[np.ndarray, np.ndarray]:
    theta = phase + 2.0 * np.pi * np.arange(n) / n  # (n,)
    pts = radius * np.column_stack([np.cos(theta), np.sin(theta)])  # (n, 2)
    w = np.full(n, 2.0 * np.pi * radius / n)  # arc measure
    return pts, w


def square_grid(
    half_width: float,
    wavelength: float,
    points_per_wavelength: float = 7.5,
    receiver_radius: float = 1.0,
    n_receivers: int = 40,
    receiver_phase: float = 0.0,
) -> Grid:
    """Square interior block [-a, a]^2 with receivers on a surrounding circle.

    The lattice spacing is snapped so the block tiles exactly; cell weights
    are exact, so the interior quadrature reproduces the block measure to
    machine precision.
    """
    if receiver_radius <= half_width * np.sqrt(2.0):
        raise UsageError(
            "receiver circle must enclose the interior block: "
            f"radius {receiver_radius} <= corner distance "
            f"{half_width * np.sqrt(2.0):.4f}"
        )
    if n_receivers < 2:
        raise UsageError("need at least 2 receivers")
    h_target = wavelength / points_per_wavelength
    nx = max(int(np.ceil(2.0 * half_width / h_target)), 3)
    h = 2.0 * half_width / nx
    centers = -half_width + (np.arange(nx) + 0.5) * h  # (nx,)
    xx, yy = np.meshgrid(centers, centers, indexing="ij")
    interior = np.column_stack([xx.ravel(), yy.ravel()])  # (nx*nx, 2), row-major
    w_int = np.full(len(interior), h * h)

    rec, w_rec = _circle_receivers(receiver_radius, n_receivers, receiver_phase)
    nodes = np.vstack([interior, rec])
    weights = np.concatenate([w_int, w_rec])
    grid = Grid(
        nodes=nodes,
        weights=weights,
        receiver_idx=np.arange(len(interior), len(nodes)),
        interior_idx=np.arange(len(interior)),
        wavelength_resolution=wavelength / h,
        interior_shape=(nx, nx),
        spacing=h,
        domain_measure=(2.0 * half_width) ** 2,
        meta={
            "kind": "square",
            "half_width": half_width,
            "receiver_radius": receiver_radius,
        },
    )
    grid.validate()
    return grid


def disk_grid(
    radius: float,
    wavelength: float,
    points_per_wavelength: float = 7.5,
    receiver_radius: float = 0.5,
    n_receivers: int = 24,
    receiver_phase: float = 0.0,
    n_subsample: int = 16,
) -> Grid:
    """Disk-shaped source volume with receivers on an *interior* circle.

    Boundary cells are clipped by subsampling so the weights reproduce the
    disk area well within the 1% tolerance.  Used for full-space identities
    where sources must surround the receivers; the receiver circle is offset
    from the lattice so no receiver coincides with a source node.
    """
    h_target = wavelength / points_per_wavelength
    m = int(np.ceil(radius / h_target))
    h = radius / m
    centers = (np.arange(-m, m) + 0.5) * h
    xx, yy = np.meshgrid(centers, centers, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    rr = np.hypot(pts[:, 0], pts[:, 1])
    keep = rr < radius + h  # candidates incl. boundary cells

    pts = pts[keep]
    # coverage fraction of each cell by n_subsample^2 midpoint samples
    offs = (np.arange(n_subsample) + 0.5) / n_subsample - 0.5  # (s,)
    ox, oy = np.meshgrid(offs * h, offs * h, indexing="ij")
    sub = np.column_stack([ox.ravel(), oy.ravel()])  # (s*s, 2)
    dist2 = (
        (pts[:, None, 0] + sub[None, :, 0]) ** 2
        + (pts[:, None, 1] + sub[None, :, 1]) ** 2
    )  # (n, s*s)
    frac = np.mean(dist2 < radius**2, axis=1)  # (n,)
    inside = frac > 0
    interior = pts[inside]
    w_int = h * h * frac[inside]

    rec, w_rec = _circle_receivers(receiver_radius, n_receivers, receiver_phase)
    nodes = np.vstack([interior, rec])
    weights = np.concatenate([w_int, w_rec])
    grid = Grid(
        nodes=nodes,
        weights=weights,
        receiver_idx=np.arange(len(interior), len(nodes)),
        interior_idx=np.arange(len(interior)),
        wavelength_resolution=wavelength / h,
        interior_shape=None,
        spacing=h,
        domain_measure=np.pi * radius**2,
        meta={"kind": "disk", "radius": radius, "receiver_radius": receiver_radius},
    )
    grid.validate()
    return grid


def ball_grid_3d(
    radius: float,
    wavelength: float,
    points_per_wavelength: float = 7.5,
    receiver_radius: float = 1.0,
    n_receivers: int = 64,
) -> Grid:
    """Small 3D ball of source nodes with receivers on a Fibonacci sphere."""
    h_target = wavelength / points_per_wavelength
    m = int(np.ceil(radius / h_target))
    h = radius / m
    centers = (np.arange(-m, m) + 0.5) * h
    xx, yy, zz = np.meshgrid(centers, centers, centers, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])
    rr = np.linalg.norm(pts, axis=1)
    interior = pts[rr < radius]
    w_int = np.full(len(interior), h**3)
    measure = len(interior) * h**3  # pixelated ball; validate against itself

    i = np.arange(n_receivers)
    golden = np.pi * (3.0 - np.sqrt(5.0))
    z = 1.0 - 2.0 * (i + 0.5) / n_receivers
    r_xy = np.sqrt(1.0 - z**2)
    rec = receiver_radius * np.column_stack(
        [r_xy * np.cos(golden * i), r_xy * np.sin(golden * i), z]
    )
    w_rec = np.full(n_receivers, 4.0 * np.pi * receiver_radius**2 / n_receivers)

    nodes = np.vstack([interior, rec])
    weights = np.concatenate([w_int, w_rec])
    grid = Grid(
        nodes=nodes,
        weights=weights,
        receiver_idx=np.arange(len(interior), len(nodes)),
        interior_idx=np.arange(len(interior)),
        wavelength_resolution=wavelength / h,
        interior_shape=None,
        spacing=h,
        domain_measure=measure,
        meta={"kind": "ball3d", "radius": radius},
    )
    grid.validate()
    return grid


# ---------------------------------------------------------------------------
# Point evaluations of the uniform-medium Green's function
# ---------------------------------------------------------------------------
def green_uniform(dim: int, k: complex, x: np.ndarray, y: np.ndarray) -> complex:
    """Outgoing free-space Green's function of -(Laplace + k^2).

        d=2:  (i/4) H1_0(k |x-y|)
        d=3:  exp(ik |x-y|) / (4 pi |x-y|)

    Im k >= 0 gives exponential decay.  Raises SingularityError at x = y;
    callers use the regularized cell-averaged diagonal instead.
    """
    r = float(np.linalg.norm(np.asarray(x, float) - np.asarray(y, float)))
    if r == 0.0:
        raise SingularityError("Green's function evaluated at coincident points")
    k = complex(k)
    if dim == 2:
        return 0.25j * hankel_h1(0, k * r)
    if dim == 3:
        return complex(np.exp(1j * k * r) / (4.0 * np.pi * r))
    raise UsageError(f"dim must be 2 or 3, got {dim}")


def green_diagonal_2d(k: complex, cell_radius: float) -> complex:
    """Cell-averaged 2D self-interaction over a disk of given radius.

    Average of the leading log term of (i/4) H1_0(k r),

        (1/(pi a^2)) Int_disk (1/2pi) ln(1/r) dA = (1/2pi)(ln(1/a) + 1/2),

    plus the constant terms i/4 - (1/2pi)(ln(k/2) + EULER_GAMMA) of the
    small-argument expansion (principal branch for complex k).
    """
    if cell_radius <= 0:
        raise UsageError("cell_radius must be positive")
    k = complex(k)
    log_avg = np.log(1.0 / cell_radius) + 0.5
    return complex(
        (log_avg - np.log(k / 2.0) - EULER_GAMMA) / (2.0 * np.pi) + 0.25j
    )


def _green_diagonal_line_2d(k: complex, length: float) -> complex:
    """2D self-interaction averaged along a boundary segment of given length."""
    k = complex(k)
    # (1/L) Int_{-L/2}^{L/2} ln(1/|s|) ds = ln(2/L) + 1
    log_avg = np.log(2.0 / length) + 1.0
    return complex((log_avg - np.log(k / 2.0) - EULER_GAMMA) / (2.0 * np.pi) + 0.25j)


def green_diagonal_3d(k: complex, cell_radius: float) -> complex:
    """Ball-averaged 3D self-interaction: 3/(8 pi a) + ik/(4 pi)."""
    if cell_radius <= 0:
        raise UsageError("cell_radius must be positive")
    return complex(3.0 / (8.0 * np.pi * cell_radius) + 1j * complex(k) / (4.0 * np.pi))


def green_modal(
    dim: int,
    k: complex,
    r_out: float,
    r_in: float,
    angle: float,
    n_max: int,
) -> complex:
    """Truncated separable (modal) expansion of the uniform Green's function.

        d=2:  (i/4) [ H1_0(k r>) J_0(k r<) + 2 sum_n H1_n J_n cos(n theta) ]
        d=3:  ik sum_n (2n+1)/(4pi) h1_n(k r>) j_n(k r<) P_n(cos theta)

    valid for r_in <= r_out; converges to green_uniform as n_max grows.
    (The 2D cylindrical series carries the i/4 normalization of the
    closed form so both evaluations agree in the limit.)
    """
    if r_in >= r_out:
        raise DomainError("modal expansion requires r_in < r_out")
    k = complex(k)
    if dim == 2:
        acc = hankel_h1(0, k * r_out) * bessel_j(0, k * r_in)
        for n in range(1, n_max + 1):
            acc += (
                2.0
                * hankel_h1(n, k * r_out)
                * bessel_j(n, k * r_in)
                * np.cos(n * angle)
            )
        return complex(0.25j * acc)
    if dim == 3:
        mu = np.cos(angle)
        acc = 0.0 + 0.0j
        for n in range(n_max + 1):
            acc += (
                (2 * n + 1)
                / (4.0 * np.pi)
                * spherical_bessel("h1", n, k * r_out)
                * spherical_bessel("j", n, k * r_in)
                * eval_legendre(n, mu)
            )
        return complex(1j * k * acc)
    raise UsageError(f"dim must be 2 or 3, got {dim}")


# ---------------------------------------------------------------------------
# Dense assembly
# ---------------------------------------------------------------------------
def _pairwise_green(
    dim: int, k: complex, xs: np.ndarray, ys: np.ndarray
) -> np.ndarray:
    """Kernel block G(x_i, y_j) for distinct point sets (no coincidences)."""
    diff = xs[:, None, :] - ys[None, :, :]
    r = np.sqrt(np.sum(diff**2, axis=-1))
    if np.any(r == 0.0):
        raise SingularityError("coincident points in off-diagonal block")
    if dim == 2:
        return 0.25j * hankel_h1_array(0, complex(k) * r)
    return np.exp(1j * complex(k) * r) / (4.0 * np.pi * r)


def _diagonal_values(grid: Grid, k: complex, dim: int) -> np.ndarray:
    """Regularized self-interaction per node, by node kind and cell measure."""
    diag = np.empty(grid.n_nodes, dtype=np.complex128)
    w = grid.weights
    if dim == 2:
        int_r = np.sqrt(w[grid.interior_idx] / np.pi)
        diag[grid.interior_idx] = [green_diagonal_2d(k, a) for a in int_r]
        diag[grid.receiver_idx] = [
            _green_diagonal_line_2d(k, ell) for ell in w[grid.receiver_idx]
        ]
    else:
        int_r = np.cbrt(3.0 * w[grid.interior_idx] / (4.0 * np.pi))
        diag[grid.interior_idx] = [green_diagonal_3d(k, a) for a in int_r]
        patch_r = np.sqrt(w[grid.receiver_idx] / np.pi)
        diag[grid.receiver_idx] = (
            1.0 / (2.0 * np.pi * patch_r) + 1j * complex(k) / (4.0 * np.pi)
        )
    return diag


def assemble_green(
    grid: Grid,
    k: complex,
    dim: Optional[int] = None,
    budget_bytes: int = DEFAULT_BUDGET_BYTES,
    use_cache: bool = True,
) -> "GreensOperator":
    """Assemble the dense uniform-medium Green's kernel on all grid nodes.

    Off-diagonal entries are closed-form point evaluations; the diagonal is
    the exact cell average of the leading singularity plus the constant terms
    of the small-argument expansion, which keeps the nodal quadrature
    consistent through the singularity.

    If the HOLOSEIS_CACHE environment variable points to a directory, the
    kernel is cached there keyed by (grid hash, k, dim).
    """
    dim = grid.dim if dim is None else dim
    n = grid.n_nodes
    need = 16 * n * n
    if need > budget_bytes:
        raise MemoryBudgetError(
            f"dense kernel needs {need / 1e9:.2f} GB > budget {budget_bytes / 1e9:.2f} GB"
        )

    cache_dir = os.environ.get(CACHE_ENV_VAR)
    cache_path = None
    if use_cache and cache_dir:
        key = f"{grid.content_hash()}_{complex(k).real:.17g}_{complex(k).imag:.17g}_{dim}d"
        cache_path = os.path.join(cache_dir, key + ".hsm")
        if os.path.exists(cache_path):
            kernel = _io.read_matrix(cache_path)
            logger.debug("Green kernel loaded from cache %s", cache_path)
            return GreensOperator(grid=grid, k_ref=complex(k), dim=dim, _kernel=kernel)

    diff = grid.nodes[:, None, :] - grid.nodes[None, :, :]
    r = np.sqrt(np.sum(diff**2, axis=-1))
    np.fill_diagonal(r, 1.0)  # placeholder; diagonal overwritten below
    if dim == 2:
        kernel = 0.25j * hankel_h1_array(0, complex(k) * r)
    elif dim == 3:
        kernel = np.exp(1j * complex(k) * r) / (4.0 * np.pi * r)
    else:
        raise UsageError(f"dim must be 2 or 3, got {dim}")
    kernel[np.arange(n), np.arange(n)] = _diagonal_values(grid, k, dim)

    if cache_path:
        os.makedirs(cache_dir, exist_ok=True)
        _io.write_matrix(cache_path, kernel)
        logger.debug("Green kernel cached to %s", cache_path)
    return GreensOperator(grid=grid, k_ref=complex(k), dim=dim, _kernel=kernel)


def assemble_receiver_rows(grid: Grid, k: complex, dim: Optional[int] = None) -> np.ndarray:
    """Receiver-row block G(x_r, y_j) for all grid nodes, without the full matrix.

    Receiver self-entries get the line/patch-averaged diagonal.
    """
    dim = grid.dim if dim is None else dim
    rec = grid.receiver_nodes
    diff = rec[:, None, :] - grid.nodes[None, :, :]
    r = np.sqrt(np.sum(diff**2, axis=-1))
    self_pos = (np.arange(grid.n_receivers), grid.receiver_idx)
    r[self_pos] = 1.0
    if dim == 2:
        rows = 0.25j * hankel_h1_array(0, complex(k) * r)
        rows[self_pos] = [
            _green_diagonal_line_2d(k, ell) for ell in grid.receiver_weights
        ]
    else:
        rows = np.exp(1j * complex(k) * r) / (4.0 * np.pi * r)
        patch_r = np.sqrt(grid.receiver_weights / np.pi)
        rows[self_pos] = 1.0 / (2.0 * np.pi * patch_r) + 1j * complex(k) / (4.0 * np.pi)
    return rows


# ---------------------------------------------------------------------------
# Perturbations and the resolvent update
# ---------------------------------------------------------------------------
@dataclass
class DeltaOperator:
    """Zeroth/first-order perturbation (L_q - L_0) on the interior block.

        (L_q - L_0) psi = dv * psi - 2i dA . grad(psi)

    Attributes
    ----------
    dv : np.ndarray, complex, shape (n_int,)
    dA : np.ndarray or None, real, shape (n_int, d)
    gradient_stencil : tuple of sparse matrices
        The shared finite-difference gradients of the grid.
    """

    dv: np.ndarray
    dA: Optional[np.ndarray]
    gradient_stencil: Tuple[sparse.csr_matrix, ...]

    def is_zero(self, tol: float = 0.0) -> bool:
        if np.any(np.abs(self.dv) > tol):
            return False
        return self.dA is None or not np.any(np.abs(self.dA) > tol)

    def operator_matrix(self, grid: Grid) -> sparse.csr_matrix:
        """Sparse (n, n) matrix of (L_q - L_0) acting on full-grid fields."""
        n = grid.n_nodes
        n_int = grid.n_interior
        if self.dv.shape != (n_int,):
            raise UsageError("dv must live on the interior block")
        emb = sparse.csr_matrix(
            (np.ones(n_int), (grid.interior_idx, np.arange(n_int))), shape=(n, n_int)
        )
        block = sparse.diags(self.dv.astype(np.complex128), format="csr")
        if self.dA is not None:
            for i, d_i in enumerate(self.gradient_stencil):
                block = block - 2j * sparse.diags(self.dA[:, i]) @ d_i
        return (emb @ block @ emb.T).tocsr()


class GreensOperator:
    """Green's operator on a grid: dense kernel or a factored resolvent update.

    The factored form stores the base kernel K0 together with the pivoted LU
    factorization of the support-restricted second-kind system, and evaluates
    rows, columns, applications and Hermitian products without materializing
    the full perturbed kernel.
    """

    def __init__(
        self,
        grid: Grid,
        k_ref: complex,
        dim: int,
        _kernel: Optional[np.ndarray] = None,
        _base: Optional["GreensOperator"] = None,
        _supp: Optional[np.ndarray] = None,
        _Z: Optional[np.ndarray] = None,
        _lu=None,
        frequency: Optional[float] = None,
    ):
        self.grid = grid
        self.k_ref = complex(k_ref)
        self.dim = dim
        self.frequency = frequency
        self._kernel = _kernel
        self._base = _base
        self._supp = _supp
        self._Z = _Z  # V @ K0, shape (m, n)
        self._lu = _lu

    # -- representation ------------------------------------------------------
    @property
    def is_factored(self) -> bool:
        return self._kernel is None

    @property
    def kernel(self) -> np.ndarray:
        """Dense kernel matrix; materializes the factored form on demand."""
        if self._kernel is None:
            base = self._base.kernel
            u = self._u_block(np.arange(self.grid.n_nodes))
            self._kernel = base - u @ lu_solve(self._lu, self._Z)
        return self._kernel

    def _u_block(self, idx: np.ndarray) -> np.ndarray:
        """U[idx, :] where U = (K0 W)[:, supp]."""
        w_supp = self.grid.weights[self._supp]
        return self._base.rows(idx)[:, self._supp] * w_supp[None, :]

    # -- products ------------------------------------------------------------
    def rows(self, idx) -> np.ndarray:
        """Dense kernel rows K[idx, :]."""
        idx = np.asarray(idx)
        if self._kernel is not None:
            return self._kernel[idx, :]
        u = self._u_block(idx)  # (k, m)
        corr = lu_solve(self._lu, u.T, trans=1).T  # u @ L^{-1}
        return self._base.rows(idx) - corr @ self._Z

    def cols(self, idx) -> np.ndarray:
        """Dense kernel columns K[:, idx]."""
        idx = np.asarray(idx)
        if self._kernel is not None:
            return self._kernel[:, idx]
        z_cols = lu_solve(self._lu, self._Z[:, idx])  # (m, k)
        u = self._u_block(np.arange(self.grid.n_nodes))  # (n, m)
        return self._base.cols(idx) - u @ z_cols

    def apply(self, source: np.ndarray) -> np.ndarray:
        """Quadrature application (G s)_i = sum_j K[i,j] s_j w_j on full-grid s."""
        sw = np.asarray(source, dtype=np.complex128) * self.grid.weights
        if self._kernel is not None:
            return self._kernel @ sw
        base = self._base.apply(source)
        zc = lu_solve(self._lu, self._Z @ sw)
        u = self._u_block(np.arange(self.grid.n_nodes))
        return base - u @ zc

    def mul_kernel_hermitian(self, m_block: np.ndarray, out_idx, in_idx) -> np.ndarray:
        """Product M @ (K[out_idx, in_idx])^H without forming the kernel block.

        M has shape (p, len(in_idx)); the result has shape (p, len(out_idx)).
        This is the workhorse of the ingression-propagator assembly.
        """
        out_idx = np.asarray(out_idx)
        in_idx = np.asarray(in_idx)
        if self._kernel is not None:
            return m_block @ self._kernel[np.ix_(out_idx, in_idx)].conj().T
        base = self._base.rows(out_idx)[:, in_idx]  # (n_out, n_in)
        term0 = m_block @ base.conj().T
        t1 = m_block @ self._Z[:, in_idx].conj().T  # (p, m)
        # K piece: - U[out] L^{-1} Z[:, in]; its ^H gives - Z^H L^{-H} U^H
        t2 = lu_solve(self._lu, t1.conj().T, trans=0).conj().T  # t1 @ L^{-H}
        u = self._u_block(out_idx)  # (n_out, m)
        return term0 - t2 @ u.conj().T


def update_green(
    g0: GreensOperator,
    delta: DeltaOperator,
    cond_limit: float = 1e12,
) -> GreensOperator:
    """Perturbed Green's operator G_q = [Id + G_0 (L_q - L_0)]^{-1} G_0.

    The second-kind system is restricted to the support of the perturbation:
    with U = (K0 W)[:, supp] and V the supported rows of (L_q - L_0),

        K_q = K0 - U (I_m + V U)^{-1} V K0,

    factorized by pivoted LU of the m x m core.  A reciprocal-condition
    estimate guards against wavenumbers at interior resonances.

    For a vanishing perturbation the base kernel is returned unchanged
    (bit-identical copy).
    """
    grid = g0.grid
    if delta.is_zero():
        return GreensOperator(
            grid=grid,
            k_ref=g0.k_ref,
            dim=g0.dim,
            _kernel=g0.kernel.copy(),
            frequency=g0.frequency,
        )
    m_full = delta.operator_matrix(grid)  # sparse (n, n)
    row_nnz = np.diff(m_full.indptr)
    supp = np.flatnonzero(row_nnz)
    v = m_full[supp, :]  # (m, n) sparse
    z = np.asarray(v @ g0.kernel)  # (m, n)
    m = len(supp)
    core = np.eye(m, dtype=np.complex128) + z[:, supp] * grid.weights[supp][None, :]
    lu = lu_factor(core)
    anorm = np.linalg.norm(core, 1)
    rcond, info = zgecon(lu[0], anorm, norm="1")
    if info != 0 or rcond == 0.0 or 1.0 / rcond > cond_limit:
        raise ResonanceError(
            f"second-kind system nearly singular: condition estimate "
            f"{(1.0 / rcond if rcond else np.inf):.3e} exceeds {cond_limit:.1e}"
        )
    return GreensOperator(
        grid=grid,
        k_ref=g0.k_ref,
        dim=g0.dim,
        _base=g0,
        _supp=supp,
        _Z=z,
        _lu=lu,
        frequency=g0.frequency,
    )
