"""Ordered multi-resolution thin-plate spline (MRTS) basis.

The first ``d + 1`` functions are ``1, x_1, ..., x_d``. Function ``d + 1 + k``
is the natural thin-plate spline

    f(s) = lambda_k^{-1} (phi(s) - Phi X (X'X)^{-1} x(s))' v_k

built from the k-th leading eigenpair ``(lambda_k, v_k)`` of ``Q Phi Q``. At
the control points these functions reproduce the orthonormal eigenvectors, and
their bending energies ``1 / lambda_k`` increase with ``k``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .errors import BasisRangeError, RankExhaustedError, SerializationError, ShapeError
from .tps import LocationSet, TpsSystem, build_system, design_matrix, kernel_matrix

BASIS_FORMAT = "mrts-basis"
BASIS_VERSION = 1

#: Above this size the top eigenpairs come from Lanczos instead of dense LAPACK.
DENSE_EIGEN_LIMIT = 500
#: Eigenvalues closer than this (relative to the largest) are reported as ties.
TIE_RTOL = 1e-8
_RANK_RTOL = 1e-10
_RESIDUAL_RTOL = 1e-8
_EVAL_CHUNK = 2048


def _fix_signs(V: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude entry of each column positive (first one on ties)."""
    if V.size == 0:
        return V
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def top_eigenpairs(A: np.ndarray, k: int, dense_limit: int = DENSE_EIGEN_LIMIT):
    """Leading ``k`` eigenpairs of a symmetric PSD matrix, in descending order.

    Small problems go to LAPACK with an index subset; larger ones use ARPACK's
    implicitly restarted Lanczos on matrix-vector products. Residuals are
    checked against ``1e-8 * lambda_1`` and the dense path is used if Lanczos
    misses it.

    Returns
    -------
    w : ndarray, shape (k,)
    V : ndarray, shape (n, k)
        Orthonormal columns with the sign convention of :func:`_fix_signs`.
    """
    n = A.shape[0]
    if k <= 0:
        return np.empty(0), np.empty((n, 0))
    if k > n:
        raise BasisRangeError(f"cannot extract {k} eigenpairs from an {n} x {n} matrix")

    def dense():
        return scipy.linalg.eigh(A, subset_by_index=[n - k, n - 1])

    if n <= dense_limit or k >= n // 2:
        w, V = dense()
    else:
        v0 = np.random.default_rng(0).standard_normal(n)
        op = scipy.sparse.linalg.aslinearoperator(A)
        w, V = scipy.sparse.linalg.eigsh(op, k=k, which="LA", tol=0.0, v0=v0)
        resid = np.linalg.norm(A @ V - V * w, axis=0)
        if resid.max() > _RESIDUAL_RTOL * max(abs(w).max(), np.finfo(float).tiny):
            w, V = dense()
    order = np.argsort(w)[::-1]
    return w[order], _fix_signs(V[:, order])


@dataclass(frozen=True)
class MrtsBasis:
    """Ordered basis ``f_1, ..., f_K`` over a set of control points.

    Attributes
    ----------
    locs : LocationSet
        Control points.
    K : int
        Number of basis functions, ``d + 1 <= K <= n``.
    eigvals : ndarray, shape (K - d - 1,)
        Leading eigenvalues of ``Q Phi Q``, descending and positive.
    eigvecs : ndarray, shape (n, K - d - 1)
        Matching orthonormal eigenvectors.
    proj_coeffs : ndarray, shape (d + 1, K - d - 1)
        ``(X'X)^{-1} X' Phi V``, the polynomial part of each function.
    ties : tuple of (int, int)
        Pairs of eigen-indices (0-based) whose eigenvalues coincide within
        ``TIE_RTOL``. Index ``K - d - 1`` refers to the first eigenvalue left out.
    """

    locs: LocationSet
    K: int
    eigvals: np.ndarray
    eigvecs: np.ndarray
    proj_coeffs: np.ndarray
    ties: tuple = field(default=())

    @property
    def n(self) -> int:
        return self.locs.n

    @property
    def d(self) -> int:
        return self.locs.d

    def evaluate(self, sites, K: int | None = None) -> np.ndarray:
        """Evaluate the first ``K`` basis functions at arbitrary sites.

        Parameters
        ----------
        sites : array_like, shape (m, d)
            Evaluation sites (a 1-D array is accepted when d = 1).
        K : int, optional
            Number of leading functions to return; defaults to all.

        Returns
        -------
        ndarray, shape (m, K)
        """
        K = self.K if K is None else K
        if not self.d + 1 <= K <= self.K:
            raise BasisRangeError(f"K={K} outside [{self.d + 1}, {self.K}]")
        sites = _as_sites(sites, self.d)
        k = K - self.d - 1
        xs = design_matrix(sites)
        out = np.empty((sites.shape[0], K))
        out[:, : self.d + 1] = xs
        if k:
            V = self.eigvecs[:, :k]
            P = self.proj_coeffs[:, :k]
            lam = self.eigvals[:k]
            controls = self.locs.coords
            for lo in range(0, sites.shape[0], _EVAL_CHUNK):
                hi = lo + _EVAL_CHUNK
                phi = kernel_matrix(sites[lo:hi], controls)
                out[lo:hi, self.d + 1 :] = (phi @ V - xs[lo:hi] @ P) / lam
        return out

    def at_controls(self, K: int | None = None) -> np.ndarray:
        """``F_K``: the basis evaluated at the control points."""
        return self.evaluate(self.locs.coords, K)

    def gram_at_controls(self, K: int | None = None) -> np.ndarray:
        """``F_K' F_K`` at the control points."""
        F = self.at_controls(K)
        return F.T @ F

    def truncate(self, K: int) -> MrtsBasis:
        """The nested basis made of the first ``K`` functions."""
        if not self.d + 1 <= K <= self.K:
            raise BasisRangeError(f"K={K} outside [{self.d + 1}, {self.K}]")
        k = K - self.d - 1
        ties = tuple(t for t in self.ties if t[1] <= k)
        return replace(
            self,
            K=K,
            eigvals=self.eigvals[:k],
            eigvecs=self.eigvecs[:, :k],
            proj_coeffs=self.proj_coeffs[:, :k],
            ties=ties,
        )

    def to_dict(self) -> dict:
        return {
            "format": BASIS_FORMAT,
            "version": BASIS_VERSION,
            "d": self.d,
            "n": self.n,
            "K": self.K,
            "control_points": self.locs.coords.tolist(),
            "eigvals": self.eigvals.tolist(),
            "eigvecs": self.eigvecs.tolist(),
            "proj_coeffs": self.proj_coeffs.tolist(),
            "ties": [list(t) for t in self.ties],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> MrtsBasis:
        if obj.get("format") != BASIS_FORMAT:
            raise SerializationError(f"not an {BASIS_FORMAT} container")
        if obj.get("version") != BASIS_VERSION:
            raise SerializationError(f"unsupported basis version {obj.get('version')}")
        locs = LocationSet(np.array(obj["control_points"], dtype=float))
        k = obj["K"] - locs.d - 1
        V = np.array(obj["eigvecs"], dtype=float).reshape(locs.n, k)
        P = np.array(obj["proj_coeffs"], dtype=float).reshape(locs.d + 1, k)
        return cls(
            locs=locs,
            K=int(obj["K"]),
            eigvals=np.array(obj["eigvals"], dtype=float).reshape(k),
            eigvecs=V,
            proj_coeffs=P,
            ties=tuple(tuple(t) for t in obj.get("ties", [])),
        )

    def save(self, path) -> None:
        from .io import atomic_write_text

        atomic_write_text(path, json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> MrtsBasis:
        with open(Path(path)) as fh:
            return cls.from_dict(json.load(fh))


def _as_sites(sites, d: int) -> np.ndarray:
    sites = np.asarray(sites, dtype=float)
    if sites.ndim == 1:
        sites = sites[:, None] if d == 1 else sites[None, :]
    if sites.ndim != 2 or sites.shape[1] != d:
        raise ShapeError(f"sites must be an m x {d} array, got shape {sites.shape}")
    return sites


def compute_basis(system: TpsSystem | LocationSet, K: int, dense_limit: int = DENSE_EIGEN_LIMIT) -> MrtsBasis:
    """Build the first ``K`` MRTS functions from the leading eigenpairs of ``Q Phi Q``.

    Only ``K - d - 1`` eigenpairs (plus one more, to detect a tie at the cut)
    are computed.
    """
    if isinstance(system, LocationSet):
        system = build_system(system)
    n, d = system.n, system.d
    if not d + 1 <= K <= n:
        raise BasisRangeError(f"K={K} outside [{d + 1}, {n}]")
    k = K - d - 1
    rank = n - d - 1
    k_solve = min(k + 1, rank) if k else 0
    w, V = top_eigenpairs(system.QPhiQ, k_solve, dense_limit=dense_limit)
    if k:
        if w[0] <= 0 or w[k - 1] < _RANK_RTOL * w[0]:
            raise RankExhaustedError(
                f"eigenvalue {k} of Q Phi Q is numerically zero ({w[k - 1]:.3e} vs {w[0]:.3e})"
            )
    ties = tuple(
        (i, i + 1) for i in range(len(w) - 1) if w[i] - w[i + 1] <= TIE_RTOL * w[0]
    )
    w, V = w[:k].copy(), V[:, :k].copy()
    P = system.Xtilde @ (system.Phi @ V)
    for a in (w, V, P):
        a.setflags(write=False)
    return MrtsBasis(locs=system.locs, K=K, eigvals=w, eigvecs=V, proj_coeffs=P, ties=ties)
