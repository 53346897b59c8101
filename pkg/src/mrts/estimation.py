"""Closed-form maximum likelihood for the spatial random-effects model.

Model at the control points, for replicates ``t = 1..T``::

    z_t ~ N(0, F M F' + (sigma_xi^2 + sigma_eps^2) I)

with ``F`` the ``n x K`` basis matrix, ``M`` PSD and ``sigma_eps^2`` known.
Given the nugget, the optimal ``M`` comes from the eigendecomposition of
``(F'F)^{-1/2} F' S F (F'F)^{-1/2}``; the nugget itself minimises a scalar
profile likelihood that is piecewise of the form ``R / tau + c log tau`` and
is minimised exactly, segment by segment.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .basis import MrtsBasis, _as_sites, compute_basis
from .errors import (
    BasisRangeError,
    MrtsError,
    RankDeficientError,
    SerializationError,
    ShapeError,
    SingularProfileError,
)
from .tps import LocationSet, TpsSystem

log = logging.getLogger(__name__)

FIT_FORMAT = "mrts-fit"
FIT_VERSION = 1
GRAM_FLOOR = 1e-12


def sample_moment(Z) -> np.ndarray:
    """Second moment about zero, ``S = sum_t z_t z_t' / T``."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.ndim != 2 or Z.size == 0:
        raise ShapeError("panel must be a non-empty n x T matrix")
    S = Z @ Z.T / Z.shape[1]
    return 0.5 * (S + S.T)


@dataclass(frozen=True)
class DataPanel:
    """Replicated observations ``Z`` (column ``t`` is ``z_t``) at ``locs``."""

    Z: np.ndarray
    locs: LocationSet

    def __post_init__(self):
        Z = np.asarray(self.Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        if Z.ndim != 2 or Z.shape[1] == 0:
            raise ShapeError("panel must be a non-empty n x T matrix")
        if Z.shape[0] != self.locs.n:
            raise ShapeError(f"panel has {Z.shape[0]} rows but there are {self.locs.n} locations")
        if not np.all(np.isfinite(Z)):
            raise ShapeError("panel contains non-finite values")
        object.__setattr__(self, "Z", Z)

    @classmethod
    def from_values(cls, Z, locs: LocationSet, mean=None) -> DataPanel:
        """Build a panel, optionally subtracting a known mean surface.

        ``mean`` is either an ``n``-vector (constant in time) or an ``n x T``
        array evaluated at the data sites.
        """
        Z = np.asarray(Z, dtype=float)
        if mean is not None:
            mean = np.asarray(mean, dtype=float)
            Z = Z - (mean[:, None] if mean.ndim == 1 else mean)
        return cls(Z, locs)

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def T(self) -> int:
        return self.Z.shape[1]

    @cached_property
    def S(self) -> np.ndarray:
        return sample_moment(self.Z)

    @cached_property
    def trace_S(self) -> float:
        return float(np.sum(self.Z * self.Z) / self.T)


def read_panel(path, locs: LocationSet, mean=None) -> DataPanel:
    """Load a ``site_id, t, value`` CSV aligned with ``locs``."""
    from .io import read_panel_matrix

    Z, _ = read_panel_matrix(path, locs.n)
    return DataPanel.from_values(Z, locs, mean=mean)


def profile_negloglik(sigma_xi2, d_K, trace_S, sigma_eps2, n, K=None) -> float:
    """Profile of ``log|Sigma| + tr(S Sigma^{-1})`` over ``M`` at a given nugget.

    With ``tau = sigma_xi2 + sigma_eps2`` and ``dh_k = max(d_k - tau, 0)``::

        tr(S)/tau + sum_k {log(dh_k + tau) - d_k dh_k / ((dh_k + tau) tau)}
                  + (n - K) log(tau)

    The ``nT log(2 pi)`` constant is left out and no factor ``T`` is applied.
    """
    d_K = np.asarray(d_K, dtype=float)
    K = d_K.size if K is None else K
    tau = float(sigma_xi2) + float(sigma_eps2)
    if not tau > 0:
        raise SingularProfileError("sigma_xi2 + sigma_eps2 must be positive")
    dh = np.maximum(d_K - tau, 0.0)
    terms = np.log(dh + tau) - d_K * dh / ((dh + tau) * tau)
    return float(trace_S / tau + terms.sum() + (n - K) * np.log(tau))


def _minimize_profile(d_K, trace_S, sigma_eps2, n, upper):
    """Exact global minimiser of the profile over ``sigma_xi2 in [0, upper]``.

    Between consecutive eigenvalues the profile equals ``R/tau + (n - m) log tau
    + c`` where ``m`` counts the untruncated ``d_k``; its stationary point is
    ``tau = R / (n - m)``. Candidates are those points clipped to each segment
    plus the segment ends. Returns ``(sigma_xi2, value)``; ``value`` is
    ``-inf`` when the likelihood is unbounded as ``tau -> 0``. Ties go to the
    smaller ``sigma_xi2``.
    """
    lo, hi = float(sigma_eps2), float(sigma_eps2) + float(upper)
    d = np.sort(np.asarray(d_K, dtype=float))[::-1]
    if hi <= 0:
        return 0.0, -np.inf
    if hi == lo:
        return 0.0, profile_negloglik(0.0, d, trace_S, lo, n, d.size)
    cuts = np.unique(np.concatenate([[lo, hi], d[(d > lo) & (d < hi)]]))
    tiny = 1e-13 * max(trace_S, np.finfo(float).tiny)
    cands = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        above = d > 0.5 * (a + b)
        m = int(above.sum())
        R = trace_S - d[above].sum()
        R = 0.0 if R <= tiny else R
        const = np.log(d[above]).sum() + m
        if a == 0.0 and R == 0.0:
            if n > m:
                return 0.0, -np.inf
            cands.append((const, 0.0))
        pts = [a, b]
        if n > m and R > 0:
            pts.append(min(max(R / (n - m), a), b))
        for tau in pts:
            if tau > 0:
                with np.errstate(over="ignore"):  # tau near 0 with R > 0 is +inf, never chosen
                    cands.append((R / tau + (n - m) * np.log(tau) + const, tau))
    v_min = min(v for v, _ in cands)
    slack = 1e-12 * max(abs(v_min), 1.0)
    tau = min(t for v, t in cands if v <= v_min + slack)
    return max(tau - lo, 0.0), float(v_min)


@dataclass(frozen=True)
class SreFit:
    """Fitted spatial random-effects model.

    Attributes
    ----------
    basis : MrtsBasis or any object with ``locs`` and ``evaluate(sites)``
    K : int
        Number of basis functions in use.
    M_hat : ndarray, shape (K, K)
    sigma_xi2_hat, sigma_eps2 : float
    P : ndarray, shape (K, K)
        Eigenvectors of ``(F'F)^{-1/2} F' S F (F'F)^{-1/2}``.
    d : ndarray, shape (K,)
        Matching eigenvalues, descending.
    d_hat : ndarray, shape (K,)
        ``max(d - sigma_xi2_hat - sigma_eps2, 0)``.
    negloglik : float
        Twice the negative log-likelihood of all ``T`` replicates, without
        the ``n T log(2 pi)`` constant.
    aic : float
    aic_trace : tuple of dict
        One record per candidate ``K`` when produced by :func:`select_K`.
    """

    basis: object
    K: int
    M_hat: np.ndarray
    sigma_xi2_hat: float
    sigma_eps2: float
    P: np.ndarray
    d: np.ndarray
    d_hat: np.ndarray
    negloglik: float
    aic: float
    n: int
    T: int
    trace_S: float
    locs: LocationSet = field(repr=False)
    F: np.ndarray = field(repr=False)
    gram_inv_sqrt: np.ndarray = field(repr=False)
    aic_trace: tuple = field(default=(), repr=False)

    @property
    def nugget(self) -> float:
        return self.sigma_xi2_hat + self.sigma_eps2

    def features(self, sites) -> np.ndarray:
        """Basis vector ``f(s)`` (first ``K`` functions) at each site."""
        return _evaluate(self.basis, sites, self.K)

    def covariance_matrix(self, A, B=None) -> np.ndarray:
        """``C(a_i, b_j) = f(a_i)' M f(b_j) + sigma_xi2 I(a_i = b_j)``."""
        A = np.asarray(A, dtype=float)
        FA = self.features(A)
        if B is None:
            B, FB = A, FA
        else:
            B = np.asarray(B, dtype=float)
            FB = self.features(B)
        C = FA @ self.M_hat @ FB.T
        if self.sigma_xi2_hat:
            dim = self.locs.d
            a = _as_sites(A, dim)
            b = _as_sites(B, dim)
            eq = np.all(a[:, None, :] == b[None, :, :], axis=2)
            C = C + self.sigma_xi2_hat * eq
        return C

    def sigma_hat(self) -> np.ndarray:
        """Dense ``F M F' + (sigma_xi2 + sigma_eps2) I`` at the control points."""
        return self.F @ self.M_hat @ self.F.T + self.nugget * np.eye(self.n)

    def to_dict(self) -> dict:
        basis_dict = self.basis.to_dict() if hasattr(self.basis, "to_dict") else None
        return {
            "format": FIT_FORMAT,
            "version": FIT_VERSION,
            "K": self.K,
            "n": self.n,
            "T": self.T,
            "M_hat": self.M_hat.tolist(),
            "sigma_xi2_hat": self.sigma_xi2_hat,
            "sigma_eps2": self.sigma_eps2,
            "P": self.P.tolist(),
            "d": self.d.tolist(),
            "d_hat": self.d_hat.tolist(),
            "trace_S": self.trace_S,
            "locations": self.locs.coords.tolist(),
            "negloglik": _json_float(self.negloglik),
            "aic": _json_float(self.aic),
            "aic_trace": [{k: _json_float(v) for k, v in r.items()} for r in self.aic_trace],
            "metadata": {
                "negloglik": "twice the negative log-likelihood, n T log(2 pi) omitted",
                "aic": "negloglik + K^2 + K + 2",
            },
            "basis": basis_dict,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> SreFit:
        if obj.get("format") != FIT_FORMAT:
            raise SerializationError(f"not an {FIT_FORMAT} container")
        if obj.get("version") != FIT_VERSION:
            raise SerializationError(f"unsupported fit version {obj.get('version')}")
        basis = basis_from_dict(obj["basis"])
        K = int(obj["K"])
        locs = LocationSet(np.array(obj["locations"], dtype=float))
        F = _evaluate(basis, locs.coords, K)
        return cls(
            basis=basis,
            K=K,
            M_hat=np.array(obj["M_hat"], dtype=float).reshape(K, K),
            sigma_xi2_hat=float(obj["sigma_xi2_hat"]),
            sigma_eps2=float(obj["sigma_eps2"]),
            P=np.array(obj["P"], dtype=float).reshape(K, K),
            d=np.array(obj["d"], dtype=float),
            d_hat=np.array(obj["d_hat"], dtype=float),
            negloglik=float(obj["negloglik"]),
            aic=float(obj["aic"]),
            n=int(obj["n"]),
            T=int(obj["T"]),
            trace_S=float(obj["trace_S"]),
            locs=locs,
            F=F,
            gram_inv_sqrt=gram_inv_sqrt(F.T @ F),
            aic_trace=tuple(obj.get("aic_trace", ())),
        )

    def save(self, path) -> None:
        from .io import atomic_write_text

        atomic_write_text(path, json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> SreFit:
        with open(Path(path)) as fh:
            return cls.from_dict(json.load(fh))


def _json_float(v):
    if isinstance(v, float) and not np.isfinite(v):
        return repr(v)  # "inf" / "-inf" / "nan"
    return v


def basis_from_dict(obj):
    if obj is None:
        raise SerializationError("fit carries no basis")
    if obj.get("format") == "bisquare-basis":
        from .covlab import BisquareBasis

        return BisquareBasis.from_dict(obj)
    return MrtsBasis.from_dict(obj)


def _evaluate(basis, sites, K):
    if isinstance(basis, MrtsBasis):
        return basis.evaluate(sites, K)
    F = basis.evaluate(sites)
    if F.shape[1] != K:
        raise BasisRangeError(f"basis has {F.shape[1]} functions, fit expects {K}")
    return F


def gram_inv_sqrt(G: np.ndarray) -> np.ndarray:
    """``G^{-1/2}`` by symmetric eigendecomposition with a relative eigenvalue floor."""
    w, U = np.linalg.eigh(0.5 * (G + G.T))
    if w.size == 0 or w[-1] <= 0 or w[0] < GRAM_FLOOR * w[-1]:
        raise RankDeficientError("basis matrix F_K is rank deficient at the control points")
    return (U / np.sqrt(w)) @ U.T


def _fit_design(F, FtZ, trace_S, T, sigma_eps2, basis, K, locs) -> SreFit:
    n = F.shape[0]
    Gmh = gram_inv_sqrt(F.T @ F)
    Y = Gmh @ FtZ
    B = Y @ Y.T / T
    w, P = np.linalg.eigh(0.5 * (B + B.T))
    d = np.maximum(w[::-1], 0.0)
    P = P[:, ::-1]
    upper = max(d[0], trace_S / n)
    sxi, h = _minimize_profile(d, trace_S, sigma_eps2, n, upper)
    d_hat = np.maximum(d - sxi - sigma_eps2, 0.0)
    A = Gmh @ P
    M = (A * d_hat) @ A.T
    M = 0.5 * (M + M.T)
    negloglik = T * h
    aic_value = negloglik + K * K + K + 2
    return SreFit(
        basis=basis,
        K=K,
        M_hat=M,
        sigma_xi2_hat=float(sxi),
        sigma_eps2=float(sigma_eps2),
        P=P,
        d=d,
        d_hat=d_hat,
        negloglik=float(negloglik),
        aic=float(aic_value),
        n=n,
        T=T,
        trace_S=float(trace_S),
        locs=locs,
        F=F,
        gram_inv_sqrt=Gmh,
    )


def _check_eps(sigma_eps2):
    if not np.isfinite(sigma_eps2) or sigma_eps2 < 0:
        raise MrtsError(f"sigma_eps2 must be a finite non-negative number, got {sigma_eps2}")


def fit_ml(panel: DataPanel, basis, sigma_eps2: float, K: int | None = None) -> SreFit:
    """ML estimates of ``M`` and ``sigma_xi^2`` for a fixed basis.

    Parameters
    ----------
    panel : DataPanel
    basis : MrtsBasis or basis-like
        Anything with ``locs`` and ``evaluate(sites)``; for an
        :class:`MrtsBasis` the first ``K`` functions are used.
    sigma_eps2 : float
        Known measurement-error variance (0 folds all nugget into ``sigma_xi^2``).
    K : int, optional
        Number of leading MRTS functions; defaults to ``basis.K``.
    """
    _check_eps(sigma_eps2)
    if isinstance(basis, MrtsBasis):
        K = basis.K if K is None else K
        F = basis.at_controls(K)
    else:
        F = basis.evaluate(panel.locs.coords)
        K = F.shape[1]
    if F.shape[0] != panel.n:
        raise ShapeError("basis and panel use different location sets")
    return _fit_design(F, F.T @ panel.Z, panel.trace_S, panel.T, sigma_eps2, basis, K, panel.locs)


def aic(fit: SreFit) -> float:
    """``T log|Sigma| + T tr(S Sigma^{-1}) + K^2 + K + 2``."""
    return fit.negloglik + fit.K * fit.K + fit.K + 2


def select_K(panel: DataPanel, system, K_range, sigma_eps2: float) -> SreFit:
    """Fit every ``K`` in ``[K_min, K_max]`` and keep the AIC minimiser.

    ``system`` may be a :class:`TpsSystem`, a :class:`LocationSet` or an
    :class:`MrtsBasis` with at least ``K_max`` functions; the basis is built
    once at ``K_max`` and its leading columns reused. Ties go to the smaller K.
    """
    _check_eps(sigma_eps2)
    K_min, K_max = (int(k) for k in K_range)
    if K_min > K_max:
        raise BasisRangeError(f"empty K range [{K_min}, {K_max}]")
    if isinstance(system, MrtsBasis):
        basis = system
        if basis.K < K_max:
            raise BasisRangeError(f"basis has only {basis.K} functions, K_max={K_max}")
    else:
        if isinstance(system, (LocationSet, TpsSystem)):
            d, n = system.d, system.n
        else:
            raise TypeError("system must be a TpsSystem, LocationSet or MrtsBasis")
        if not d + 1 <= K_min <= K_max <= n:
            raise BasisRangeError(f"K range [{K_min}, {K_max}] outside [{d + 1}, {n}]")
        basis = compute_basis(system, K_max)
    if K_min < basis.d + 1:
        raise BasisRangeError(f"K_min={K_min} below d + 1 = {basis.d + 1}")
    F_all = basis.at_controls(K_max)
    FtZ_all = F_all.T @ panel.Z
    fits, trace = [], []
    for K in range(K_min, K_max + 1):
        f = _fit_design(
            F_all[:, :K], FtZ_all[:K], panel.trace_S, panel.T, sigma_eps2, basis, K, panel.locs
        )
        fits.append(f)
        trace.append({"K": K, "aic": f.aic, "negloglik": f.negloglik, "sigma_xi2_hat": f.sigma_xi2_hat})
    best = min(range(len(fits)), key=lambda i: (fits[i].aic, i))
    log.debug("AIC selected K=%d from [%d, %d]", fits[best].K, K_min, K_max)
    return replace(fits[best], aic_trace=tuple(trace))


def model_covariance(fit: SreFit, s, s_star) -> float:
    """``f(s)' M f(s*) + sigma_xi^2 I(s = s*)`` for a single pair."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    s_star = np.atleast_1d(np.asarray(s_star, dtype=float))
    fs = fit.features(s[None, :])[0]
    ft = fit.features(s_star[None, :])[0]
    c = float(fs @ fit.M_hat @ ft)
    if np.array_equal(s, s_star):
        c += fit.sigma_xi2_hat
    return c
