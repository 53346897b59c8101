"""Reference covariances, comparison bases and the integrated squared error.

The ISE of a low-rank covariance ``f(s)' M f(s*)`` against a target ``C0`` is
approximated on a tensor trapezoid grid:

    ISE(f, M) ~= sum_ij w_i w_j (f(g_i)' M f(g_j) - C0(g_i, g_j))^2
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import CollinearBasisError, MrtsError, ShapeError
from .prediction import lattice
from .tps import LocationSet, radial_kernel

EXAMPLE1_M = np.diag([17.0, 14.0, 11.0, 8.0, 5.0, 2.0])
COLLINEAR_RTOL = 1e-12


# --------------------------------------------------------------------------
# bisquare functions
# --------------------------------------------------------------------------


def bisquare(s, center, radius: float) -> float:
    """``(1 - |s - b|^2 / r^2)^2`` inside the ball of radius ``r``, else 0."""
    if radius <= 0:
        raise MrtsError("radius must be positive")
    h = np.linalg.norm(np.atleast_1d(np.asarray(s, float)) - np.atleast_1d(np.asarray(center, float)))
    return float((1.0 - h * h / radius**2) ** 2) if h < radius else 0.0


def bisquare_matrix(sites, centers, radii) -> np.ndarray:
    """Bisquare functions evaluated at ``sites``; one column per center."""
    sites = np.asarray(sites, dtype=float)
    centers = np.asarray(centers, dtype=float)
    if sites.ndim == 1:
        sites = sites[:, None]
    if centers.ndim == 1:
        centers = centers[:, None]
    radii = np.broadcast_to(np.asarray(radii, dtype=float), (centers.shape[0],))
    if np.any(radii <= 0):
        raise MrtsError("radii must be positive")
    u = cdist(sites, centers) / radii
    return np.where(u < 1.0, (1.0 - u * u) ** 2, 0.0)


@dataclass(frozen=True)
class BisquareBasis:
    """A set of bisquare functions with fixed centers and radii."""

    centers: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        r = np.broadcast_to(np.asarray(self.radii, dtype=float), (c.shape[0],)).copy()
        if np.any(r <= 0):
            raise MrtsError("radii must be positive")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "radii", r)

    @property
    def K(self) -> int:
        return self.centers.shape[0]

    @property
    def d(self) -> int:
        return self.centers.shape[1]

    def evaluate(self, sites) -> np.ndarray:
        return bisquare_matrix(sites, self.centers, self.radii)

    def to_dict(self) -> dict:
        return {
            "format": "bisquare-basis",
            "version": 1,
            "centers": self.centers.tolist(),
            "radii": self.radii.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> BisquareBasis:
        return cls(np.array(obj["centers"], dtype=float), np.array(obj["radii"], dtype=float))


# Alias kept for readability where a layout (centers + radii) is meant.
BisquareLayout = BisquareBasis


def example1_basis(radius: float = 0.5, shift: float = 0.0, count: int = 6) -> BisquareBasis:
    """1-D bisquare family with centers ``0.2 (k - 1) + shift``."""
    centers = 0.2 * np.arange(count) + shift
    return BisquareBasis(centers[:, None], np.full(count, radius))


def poor_basis_f1() -> BisquareBasis:
    """Nine narrow functions: centers ``0.11 (k - 1) + 0.06``, radius 0.165."""
    return BisquareBasis((0.11 * np.arange(9) + 0.06)[:, None], np.full(9, 0.165))


def poor_basis_f2() -> BisquareBasis:
    """Six functions: centers ``0.18 (k - 1) + 0.05``, radius 0.27."""
    return BisquareBasis((0.18 * np.arange(6) + 0.05)[:, None], np.full(6, 0.27))


def _square(values):
    v = np.asarray(values, dtype=float)
    return np.array([(a, b) for a in v for b in v])


_CENTRE = np.array([[0.5, 0.5]])
_LAYOUT_SPECS = {
    # name: (coarse centers, coarse radius, fine centers, fine radius)
    "layout1": (_square([0, 1]), 1.5, _square([0.25, 0.75]), 0.75),
    "layout2": (_square([1 / 6, 5 / 6]), 1.0, _square([0, 0.5, 1]), 1.5),
    "layout3": (np.vstack([_square([1 / 6, 5 / 6]), _CENTRE]), np.sqrt(2) / 2, _square([0, 0.5, 1]), 1.5),
    "layout4": (_square([0, 0.5, 1]), 0.75, _square([1 / 6, 0.5, 5 / 6]), 0.5),
    "layout5": (_square([1 / 6, 5 / 6]), 1.0, _square([0, 1 / 3, 2 / 3, 1]), 0.5),
    "layout6": (np.vstack([_square([1 / 6, 5 / 6]), _CENTRE]), np.sqrt(2) / 2, _square([0, 1 / 3, 2 / 3, 1]), 0.5),
}
LAYOUT_NAMES = tuple(_LAYOUT_SPECS)


def bisquare_layout(name: str) -> BisquareBasis:
    """Two-resolution bisquare layout on ``[0, 1]^2`` (presets ``layout1``..``layout6``).

    Radii are as tabulated, including the fine radii of 3/2 in layouts 2 and 3.
    """
    try:
        cc, cr, fc, fr = _LAYOUT_SPECS[name]
    except KeyError:
        raise MrtsError(f"unknown layout {name!r}; choose from {LAYOUT_NAMES}") from None
    centers = np.vstack([cc, fc])
    radii = np.concatenate([np.full(len(cc), cr), np.full(len(fc), fr)])
    return BisquareBasis(centers, radii)


# --------------------------------------------------------------------------
# conventional thin-plate spline family
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TpsGridBasis:
    """``1, x_1, x_2`` and 2-D TPS kernels centred on an ``L x L`` lattice."""

    L: int
    centers: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.L < 1:
            raise MrtsError("L must be at least 1")
        object.__setattr__(self, "centers", _square(np.arange(1, self.L + 1) / (self.L + 1)))

    @property
    def K(self) -> int:
        return self.L * self.L + 3

    def evaluate(self, sites) -> np.ndarray:
        sites = np.asarray(sites, dtype=float)
        if sites.ndim != 2 or sites.shape[1] != 2:
            raise ShapeError("TPS grid basis is defined on R^2")
        return np.column_stack(
            [np.ones(len(sites)), sites, radial_kernel(cdist(sites, self.centers), 2)]
        )


def conventional_tps_basis(L: int) -> TpsGridBasis:
    return TpsGridBasis(L)


# --------------------------------------------------------------------------
# reference covariances
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ReferenceCovariance:
    """Analytic covariance functions used as targets.

    ``kind`` is one of ``example1``, ``deformed_exponential``,
    ``exponential2d`` or ``exponential_generic``.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        defaults = {
            "example1": {"radius": 0.5},
            "deformed_exponential": {"rate": 2.0, "exponent": -1.5, "offset": 0.5},
            "exponential2d": {"sill": 20.0, "rate": 0.4},
            "exponential_generic": {"sill": 1.0, "range": 1.0},
        }
        if self.kind not in defaults:
            raise MrtsError(f"unknown reference covariance {self.kind!r}")
        object.__setattr__(self, "params", {**defaults[self.kind], **dict(self.params)})

    def matrix(self, A, B=None) -> np.ndarray:
        A = np.asarray(A, dtype=float)
        A = A[:, None] if A.ndim == 1 else A
        B = A if B is None else np.asarray(B, dtype=float)
        B = B[:, None] if B.ndim == 1 else B
        p = self.params
        if self.kind == "example1":
            fa = example1_basis(p["radius"]).evaluate(A)
            fb = example1_basis(p["radius"]).evaluate(B)
            return fa @ EXAMPLE1_M @ fb.T
        if self.kind == "deformed_exponential":
            ga = (A[:, 0] + p["offset"]) ** p["exponent"]
            gb = (B[:, 0] + p["offset"]) ** p["exponent"]
            return np.exp(-p["rate"] * np.abs(ga[:, None] - gb[None, :]))
        h = cdist(A, B)
        if self.kind == "exponential2d":
            return p["sill"] * np.exp(-p["rate"] * h)
        return p["sill"] * np.exp(-h / p["range"])

    def __call__(self, s, s_star) -> float:
        s = np.atleast_1d(np.asarray(s, float))[None, :]
        s_star = np.atleast_1d(np.asarray(s_star, float))[None, :]
        return float(self.matrix(s, s_star)[0, 0])


def reference_covariance(name: str, **params) -> ReferenceCovariance:
    return ReferenceCovariance(name, params)


# --------------------------------------------------------------------------
# quadrature and ISE
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureGrid:
    """Tensor trapezoid rule: nodes and weights over a box."""

    points: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return self.points.shape[0]


def trapezoid_grid(d: int, size: int, lower=0.0, upper=1.0) -> QuadratureGrid:
    """``size`` equally spaced nodes per axis with trapezoid weights."""
    if size < 2:
        raise MrtsError("quadrature grid needs at least 2 points per axis")
    lower = np.broadcast_to(np.asarray(lower, float), (d,))
    upper = np.broadcast_to(np.asarray(upper, float), (d,))
    w1 = []
    for a, b in zip(lower, upper):
        w = np.full(size, (b - a) / (size - 1))
        w[[0, -1]] *= 0.5
        w1.append(w)
    points = lattice(lower, upper, size)
    weights = w1[0]
    for w in w1[1:]:
        weights = np.outer(weights, w).ravel()
    return QuadratureGrid(points, weights)


def default_grid(d: int) -> QuadratureGrid:
    return trapezoid_grid(d, 201 if d == 1 else 41)


def _target(C0, grid: QuadratureGrid) -> np.ndarray:
    if hasattr(C0, "matrix"):
        return C0.matrix(grid.points)
    C = np.asarray(C0, dtype=float)
    if C.shape != (grid.size, grid.size):
        raise ShapeError("target covariance does not match the grid")
    return C


def ise(basis_eval, M, C0, grid: QuadratureGrid) -> float:
    """Quadrature approximation of the integrated squared error.

    Parameters
    ----------
    basis_eval : ndarray, shape (N, K)
        Basis functions evaluated at the grid nodes.
    M : ndarray, shape (K, K)
    C0 : ReferenceCovariance or ndarray, shape (N, N)
    grid : QuadratureGrid
    """
    F = np.asarray(basis_eval, dtype=float)
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeError(f"M must be square, got shape {M.shape}")
    if F.shape != (grid.size, M.shape[0]):
        raise ShapeError(f"basis values have shape {F.shape}, expected ({grid.size}, {M.shape[0]})")
    E = F @ M @ F.T - _target(C0, grid)
    w = grid.weights
    return float(np.einsum("i,ij,j->", w, E * E, w))


def best_M_ise(basis_eval, C0, grid: QuadratureGrid, return_ise: bool = False):
    """PSD matrix minimising the discretised ISE.

    The unconstrained minimiser is ``G^{-1} B G^{-1}`` with ``G = F'WF`` and
    ``B = F'W C0 W F``; it is projected onto the PSD cone in the metric
    induced by ``G`` (eigenvalues of ``G^{1/2} M G^{1/2}`` clipped at zero),
    which is the exact constrained optimum. Computed through the thin SVD of
    ``W^{1/2} F`` for stability.
    """
    F = np.asarray(basis_eval, dtype=float)
    if F.ndim != 2 or F.shape[0] != grid.size:
        raise ShapeError(f"basis values have shape {F.shape}, expected ({grid.size}, K)")
    sw = np.sqrt(grid.weights)
    Ct = sw[:, None] * _target(C0, grid) * sw[None, :]
    U, s, Vt = np.linalg.svd(sw[:, None] * F, full_matrices=False)
    if s.size == 0 or s[-1] <= COLLINEAR_RTOL * s[0]:
        raise CollinearBasisError("basis functions are linearly dependent on the grid")
    N = U.T @ Ct @ U
    ev, Ev = np.linalg.eigh(0.5 * (N + N.T))
    ev = np.clip(ev, 0.0, None)
    A = (Vt.T / s) @ Ev
    M = (A * ev) @ A.T
    M = 0.5 * (M + M.T)
    if not return_ise:
        return M
    return M, ise(F, M, C0, grid)


def integrated_square(C0, grid: QuadratureGrid) -> float:
    """``sum_ij w_i w_j C0(g_i, g_j)^2``: the ISE of the zero matrix."""
    C = _target(C0, grid)
    w = grid.weights
    return float(np.einsum("i,ij,j->", w, C * C, w))


def unit_controls_1d(n: int = 50) -> LocationSet:
    """Control points ``i / n``, ``i = 1..n``."""
    return LocationSet((np.arange(1, n + 1) / n)[:, None])


def unit_controls_2d(m: int = 18) -> LocationSet:
    """Control points ``((2j_1 - 1) / 2m, (2j_2 - 1) / 2m)``."""
    return LocationSet(_square((2 * np.arange(1, m + 1) - 1) / (2 * m)))
