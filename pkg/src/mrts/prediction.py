"""Fixed rank kriging with the structured Moore-Penrose inverse.

With ``L = F (F'F)^{-1/2}``, ``R = L P`` (orthonormal columns) and
``tau = sigma_xi^2 + sigma_eps^2``, the fitted covariance at the data sites is
``Sigma = R diag(d_hat) R' + tau I``, so

* ``tau > 0``:  ``Sigma^- = (I - R diag(d_hat / (d_hat + tau)) R') / tau``
* ``tau = 0``:  ``Sigma^- = R diag(d_hat)^- R'``

and applying it to a vector costs O(nK).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .estimation import SreFit
from .io import write_csv

POSITIVE_NOISE = "positive-noise"
ZERO_NOISE = "zero-noise"
PINV_RTOL = 1e-12
_T_BLOCK = 256


@dataclass(frozen=True)
class KrigingOperator:
    """Cached factors of ``Sigma^-`` for a fitted model."""

    fit: SreFit
    L: np.ndarray = field(repr=False)
    R: np.ndarray = field(repr=False)
    shrink: np.ndarray
    branch: str
    tau: float

    @property
    def n(self) -> int:
        return self.R.shape[0]

    def apply(self, v) -> np.ndarray:
        """``Sigma^- v`` for a vector or an ``n x p`` block, in O(n K p)."""
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n:
            raise ShapeError(f"expected {self.n} rows, got {v.shape[0]}")
        Rv = self.R.T @ v
        scale = self.shrink if v.ndim == 1 else self.shrink[:, None]
        if self.branch == POSITIVE_NOISE:
            return (v - self.R @ (scale * Rv)) / self.tau
        return self.R @ (scale * Rv)

    def dense(self) -> np.ndarray:
        """Materialise ``Sigma^-`` (testing and small problems only)."""
        return self.apply(np.eye(self.n))


def build_operator(fit: SreFit) -> KrigingOperator:
    """Cache ``R = F (F'F)^{-1/2} P`` and the diagonal factors of ``Sigma^-``."""
    L = fit.F @ fit.gram_inv_sqrt
    R = L @ fit.P
    tau = fit.nugget
    if tau > 0:
        shrink = fit.d_hat / (fit.d_hat + tau)
        branch = POSITIVE_NOISE
    else:
        d = fit.d_hat
        cut = PINV_RTOL * (d.max() if d.size else 0.0)
        shrink = np.zeros_like(d)
        keep = d > cut
        shrink[keep] = 1.0 / d[keep]
        branch = ZERO_NOISE
    for a in (L, R, shrink):
        a.setflags(write=False)
    return KrigingOperator(fit=fit, L=L, R=R, shrink=shrink, branch=branch, tau=float(tau))


def krige(op: KrigingOperator, z, sites) -> np.ndarray:
    """Plug-in BLUP ``{f(s)' M F' + sigma_xi^2 e(s)'} Sigma^- z``.

    Parameters
    ----------
    op : KrigingOperator
    z : array_like, shape (n,) or (n, T)
        Observations aligned with the control points.
    sites : array_like, shape (m, d)
        Prediction sites. ``e(s)`` is the indicator of an exact coordinate
        match with a control point.

    Returns
    -------
    ndarray, shape (m,) or (m, T)
    """
    fit = op.fit
    z = np.asarray(z, dtype=float)
    vector = z.ndim == 1
    Z = z[:, None] if vector else z
    if Z.ndim != 2 or Z.shape[0] != op.n:
        raise ShapeError(f"z must have {op.n} rows, got shape {z.shape}")
    fs = fit.features(sites)
    W = fs @ fit.M_hat  # m x K; avoids the m x n product f(s)' M F'
    match = None
    if fit.sigma_xi2_hat:
        index = fit.locs.index_of()
        sites_arr = np.asarray(sites, dtype=float).reshape(fs.shape[0], -1)
        hits = [(r, index.get(tuple(row))) for r, row in enumerate(sites_arr.tolist())]
        match = [(r, i) for r, i in hits if i is not None]
    out = np.empty((fs.shape[0], Z.shape[1]))
    for lo in range(0, Z.shape[1], _T_BLOCK):
        u = op.apply(Z[:, lo : lo + _T_BLOCK])
        block = W @ (fit.F.T @ u)
        if match:
            rows, idx = (list(x) for x in zip(*match))
            block[rows] += fit.sigma_xi2_hat * u[idx]
        out[:, lo : lo + _T_BLOCK] = block
    return out[:, 0] if vector else out


def lattice(lower, upper, size) -> np.ndarray:
    """Regular lattice with ``size`` points per axis over a box, x_1 varying slowest."""
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    axes = [np.linspace(a, b, size) for a, b in zip(lower, upper)]
    return np.array(list(itertools.product(*axes)))


def write_predictions(path, sites, yhat, times=None) -> None:
    """Write ``x1..xd, t, yhat`` rows, one per site and time point."""
    sites = np.asarray(sites, dtype=float)
    if sites.ndim == 1:
        sites = sites[:, None]
    yhat = np.asarray(yhat, dtype=float)
    if yhat.ndim == 1:
        yhat = yhat[:, None]
    times = list(range(yhat.shape[1])) if times is None else list(times)
    header = [f"x{j + 1}" for j in range(sites.shape[1])] + ["t", "yhat"]
    rows = (
        [*sites[i].tolist(), times[t], yhat[i, t]]
        for t in range(yhat.shape[1])
        for i in range(sites.shape[0])
    )
    write_csv(path, header, rows)
