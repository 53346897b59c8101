"""Thin-plate spline building blocks.

The radial kernels, the polynomial design matrix and the projected kernel
matrix ``Q Phi Q`` that the multi-resolution basis is extracted from.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .errors import (
    ConstraintViolationError,
    DegenerateGeometryError,
    DimensionError,
    DuplicateLocationError,
    ShapeError,
)

#: Relative tolerance used for exact-algebra identities (projector, constraints).
DEFAULT_TOL = 1e-10

_SUPPORTED_DIMS = (1, 2, 3)


def radial_kernel(r, d: int) -> np.ndarray:
    """Thin-plate spline kernel as a function of distance.

    Parameters
    ----------
    r : array_like
        Non-negative distances.
    d : int
        Spatial dimension, one of 1, 2, 3.

    Returns
    -------
    numpy.ndarray
        ``r**3 / 12`` (d=1), ``r**2 log(r) / (8 pi)`` (d=2, zero at r=0) or
        ``-r / 8`` (d=3).
    """
    r = np.asarray(r, dtype=float)
    if d == 1:
        return r**3 / 12.0
    if d == 2:
        out = np.zeros_like(r)
        pos = r > 0
        rp = r[pos]
        out[pos] = rp * rp * np.log(rp) / (8.0 * np.pi)
        return out
    if d == 3:
        return -r / 8.0
    raise DimensionError(f"unsupported dimension d={d}; expected one of {_SUPPORTED_DIMS}")


def tps_kernel(s, s_i, d: int | None = None) -> float:
    """Kernel value ``phi_i(s)`` between two points."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    s_i = np.atleast_1d(np.asarray(s_i, dtype=float))
    if d is None:
        d = s.size
    if s.shape != (d,) or s_i.shape != (d,):
        if d not in _SUPPORTED_DIMS:
            raise DimensionError(f"unsupported dimension d={d}")
        raise ShapeError(f"points must have {d} coordinates, got {s.shape} and {s_i.shape}")
    return float(radial_kernel(np.linalg.norm(s - s_i), d))


def kernel_matrix(sites: np.ndarray, controls: np.ndarray) -> np.ndarray:
    """Matrix with entry ``(i, j) = phi_j(sites[i])``."""
    d = controls.shape[1]
    return radial_kernel(cdist(sites, controls), d)


def design_matrix(coords: np.ndarray) -> np.ndarray:
    """Linear polynomial design ``[1, x_1, ..., x_d]``."""
    coords = np.asarray(coords, dtype=float)
    return np.column_stack([np.ones(coords.shape[0]), coords])


@dataclass(frozen=True)
class LocationSet:
    """``n`` distinct control points in R^d, d in {1, 2, 3}."""

    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        if c.ndim != 2:
            raise ShapeError(f"coordinates must be an n x d array, got shape {c.shape}")
        n, d = c.shape
        if d not in _SUPPORTED_DIMS:
            raise DimensionError(f"unsupported dimension d={d}; expected one of {_SUPPORTED_DIMS}")
        if not np.all(np.isfinite(c)):
            raise ShapeError("coordinates must be finite")
        if n <= d + 1:
            raise DegenerateGeometryError(f"need n > d + 1 control points, got n={n}, d={d}")
        uniq, counts = np.unique(c, axis=0, return_counts=True)
        if uniq.shape[0] != n:
            dup = uniq[counts > 1][0]
            raise DuplicateLocationError(f"duplicate control point {dup.tolist()}")
        if np.linalg.matrix_rank(design_matrix(c)) < d + 1:
            raise DegenerateGeometryError("control points are affinely dependent (rank X < d + 1)")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def d(self) -> int:
        return self.coords.shape[1]

    def index_of(self) -> dict:
        """Map exact coordinate tuples to row indices."""
        return {tuple(row): i for i, row in enumerate(self.coords.tolist())}


def read_coords(path) -> np.ndarray:
    """Numeric rows of a CSV file with an optional header line."""
    rows = []
    with open(Path(path), newline="") as fh:
        for k, rec in enumerate(csv.reader(fh)):
            if not rec or all(not x.strip() for x in rec):
                continue
            try:
                rows.append([float(x) for x in rec])
            except ValueError:
                if k == 0 and not rows:
                    continue  # header
                raise ShapeError(f"{path}: non-numeric entry on line {k + 1}") from None
    if not rows:
        raise ShapeError(f"{path}: no locations found")
    if len({len(r) for r in rows}) != 1:
        raise ShapeError(f"{path}: ragged rows")
    return np.array(rows)


def read_locations(path) -> LocationSet:
    """Read control points from a CSV file (one row per site, header optional)."""
    return LocationSet(read_coords(path))


@dataclass(frozen=True)
class TpsSystem:
    """Thin-plate spline matrices for a :class:`LocationSet`.

    Attributes
    ----------
    locs : LocationSet
    X : ndarray, shape (n, d+1)
        Polynomial design matrix.
    Phi : ndarray, shape (n, n)
        Kernel matrix, ``Phi[i, j] = phi_j(s_i)``.
    Xtilde : ndarray, shape (d+1, n)
        ``(X'X)^{-1} X'``.
    QPhiQ : ndarray, shape (n, n)
        Projected kernel matrix, symmetrised.
    """

    locs: LocationSet
    X: np.ndarray
    Phi: np.ndarray
    Xtilde: np.ndarray
    QPhiQ: np.ndarray
    tol: float = field(default=DEFAULT_TOL)

    @property
    def n(self) -> int:
        return self.locs.n

    @property
    def d(self) -> int:
        return self.locs.d

    @cached_property
    def Q(self) -> np.ndarray:
        """Projector onto the orthogonal complement of ``col(X)``."""
        Q = -self.X @ self.Xtilde
        Q[np.diag_indices_from(Q)] += 1.0
        return Q


def build_system(locs: LocationSet, tol: float = DEFAULT_TOL) -> TpsSystem:
    """Assemble ``X``, ``Phi`` and ``Q Phi Q`` in O(n^2 d).

    ``Q Phi Q`` is formed as ``Qt - Xt' (X' Qt)`` with ``Xt = (X'X)^{-1} X'``
    and ``Qt = Phi - (Phi X) Xt``, so no n x n by n x n product is needed.
    """
    if not isinstance(locs, LocationSet):
        locs = LocationSet(locs)
    c = locs.coords
    X = design_matrix(c)
    Phi = kernel_matrix(c, c)
    Phi = 0.5 * (Phi + Phi.T)
    Xtilde = np.linalg.solve(X.T @ X, X.T)
    Qt = Phi - (Phi @ X) @ Xtilde
    QPhiQ = Qt - Xtilde.T @ (X.T @ Qt)
    QPhiQ = 0.5 * (QPhiQ + QPhiQ.T)
    for a in (X, Phi, Xtilde, QPhiQ):
        a.setflags(write=False)
    return TpsSystem(locs=locs, X=X, Phi=Phi, Xtilde=Xtilde, QPhiQ=QPhiQ, tol=tol)


def roughness(alpha, system: TpsSystem, tol: float | None = None) -> float:
    """Bending energy ``J(f) = alpha' Phi alpha`` of a natural spline.

    Raises
    ------
    ConstraintViolationError
        If ``X' alpha`` is not zero within the relative tolerance.
    """
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (system.n,):
        raise ShapeError(f"alpha must have length {system.n}, got shape {alpha.shape}")
    tol = system.tol if tol is None else tol
    bound = np.abs(system.X).max() * np.abs(alpha).sum()
    if np.abs(system.X.T @ alpha).max() > tol * max(bound, np.finfo(float).tiny):
        raise ConstraintViolationError("X' alpha != 0: alpha is not a natural spline coefficient")
    return float(alpha @ system.Phi @ alpha)
