"""Simulation harness, competitor fits, loss metrics and named reproductions.

Random numbers come from NumPy's PCG64 generator. A run seeded with ``seed``
gives replicate ``r`` the generator ``Generator(PCG64(SeedSequence(seed).spawn(R)[r]))``;
child ``r`` does not depend on ``R``, so a 50-replicate run is a prefix of the
200-replicate run with the same seed.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize
from scipy.spatial.distance import cdist, pdist

from . import covlab
from .basis import compute_basis
from .errors import MrtsError, NotPositiveDefiniteError, RankDeficientError, ShapeError
from .estimation import GRAM_FLOOR, DataPanel, fit_ml, select_K
from .prediction import build_operator, krige
from .tps import LocationSet, build_system

log = logging.getLogger(__name__)


def replicate_rngs(seed: int, count: int) -> list[np.random.Generator]:
    """Independent PCG64 streams, one per replicate."""
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


# --------------------------------------------------------------------------
# generative model
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CosineBasis:
    """Radial cosine waves ``cos(freq * pi * |s - c|)``."""

    centers: np.ndarray
    freqs: np.ndarray

    def evaluate(self, sites) -> np.ndarray:
        sites = np.asarray(sites, dtype=float)
        return np.cos(np.pi * np.asarray(self.freqs) * cdist(sites, np.asarray(self.centers)))


def two_cosine_basis() -> CosineBasis:
    """``cos(pi |s - (0, 1)|)`` and ``cos(2 pi |s - (3/4, 1/4)|)``."""
    return CosineBasis(np.array([[0.0, 1.0], [0.75, 0.25]]), np.array([1.0, 2.0]))


@dataclass(frozen=True)
class LowRankCovariance:
    """``f(s)' M f(s*) + nugget I(s = s*)`` for a known basis."""

    basis: object
    M: np.ndarray
    nugget: float = 0.0

    def matrix(self, A, B=None) -> np.ndarray:
        FA = self.basis.evaluate(A)
        FB = FA if B is None else self.basis.evaluate(B)
        C = FA @ self.M @ FB.T
        if self.nugget and B is None:
            C = C + self.nugget * np.eye(C.shape[0])
        return C


@dataclass(frozen=True)
class ExponentialCovariance:
    """``sill * exp(-|s - s*| / range)``; ``flagged`` marks a boundary or failed fit."""

    sill: float
    range: float
    flagged: bool = False
    negloglik: float = float("nan")

    def matrix(self, A, B=None) -> np.ndarray:
        A = np.asarray(A, dtype=float)
        B = A if B is None else np.asarray(B, dtype=float)
        return self.sill * np.exp(-cdist(A, B) / self.range)


@dataclass(frozen=True)
class SimulationSpec:
    """Seeded draw from ``z_t = F w_t + xi_t + eps_t`` on ``[0, 1]^d``.

    ``truth`` defaults to the two radial cosines with ``w_t ~ N(0, diag(25, 9))``.
    """

    n: int = 100
    T: int = 50
    sigma_eps2: float = 3.0
    sigma_xi2: float = 0.0
    sampling: str = "uniform-random"
    seed: int = 0
    grid_size: int = 41
    truth_basis: object = field(default_factory=two_cosine_basis)
    truth_M: np.ndarray = field(default_factory=lambda: np.diag([25.0, 9.0]))
    d: int = 2

    def __post_init__(self):
        if self.n < 1 or self.T < 1:
            raise MrtsError("n and T must be positive")
        if self.sampling not in ("uniform-random", "fixed-grid"):
            raise MrtsError(f"unknown sampling scheme {self.sampling!r}")


@dataclass(frozen=True)
class SimulatedData:
    panel: DataPanel
    grid: covlab.QuadratureGrid
    y_grid: np.ndarray  # N x T noiseless process on the grid
    w: np.ndarray  # K x T random effects
    truth: LowRankCovariance


def simulate_panel(spec: SimulationSpec, rng: np.random.Generator | None = None) -> SimulatedData:
    """Draw sites, random effects, white noise and measurement error, in that order."""
    rng = np.random.Generator(np.random.PCG64(spec.seed)) if rng is None else rng
    if spec.sampling == "uniform-random":
        sites = rng.uniform(size=(spec.n, spec.d))
    else:
        m = int(round(spec.n ** (1.0 / spec.d)))
        if m**spec.d != spec.n:
            raise MrtsError(f"fixed-grid sampling needs n to be a perfect power, got {spec.n}")
        sites = covlab.trapezoid_grid(spec.d, m).points
    locs = LocationSet(sites)
    M = np.asarray(spec.truth_M, dtype=float)
    chol = np.linalg.cholesky(M)
    w = chol @ rng.standard_normal((M.shape[0], spec.T))
    F = spec.truth_basis.evaluate(locs.coords)
    y = F @ w
    if spec.sigma_xi2:
        y = y + np.sqrt(spec.sigma_xi2) * rng.standard_normal(y.shape)
    z = y + np.sqrt(spec.sigma_eps2) * rng.standard_normal(y.shape) if spec.sigma_eps2 else y
    grid = covlab.trapezoid_grid(spec.d, spec.grid_size)
    y_grid = spec.truth_basis.evaluate(grid.points) @ w
    truth = LowRankCovariance(spec.truth_basis, M)
    return SimulatedData(DataPanel(z, locs), grid, y_grid, w, truth)


# --------------------------------------------------------------------------
# competitors
# --------------------------------------------------------------------------


def _gauss_negloglik(Sigma, S, T) -> float:
    """``T (log|Sigma| + tr(S Sigma^{-1}))``; ``inf`` if Sigma is not PD."""
    try:
        c = scipy.linalg.cho_factor(Sigma, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return np.inf
    logdet = 2.0 * np.log(np.diag(c[0])).sum()
    return float(T * (logdet + np.trace(scipy.linalg.cho_solve(c, S, check_finite=False))))


def exponential_bounds(panel: DataPanel):
    """Box for ``(sill, range)`` scaled to the data."""
    v = panel.trace_S / panel.n
    v = v if v > 0 else 1.0
    diam = float(pdist(panel.locs.coords).max())
    return (1e-6 * v, 100.0 * v), (1e-3 * diam, 10.0 * diam)


def exponential_negloglik(sill, rng_, panel: DataPanel, sigma_eps2: float, D=None) -> float:
    D = cdist(panel.locs.coords, panel.locs.coords) if D is None else D
    Sigma = sill * np.exp(-D / rng_) + sigma_eps2 * np.eye(panel.n)
    return _gauss_negloglik(Sigma, panel.S, panel.T)


def fit_exponential_ml(panel: DataPanel, sigma_eps2: float, grid_points: int = 15) -> ExponentialCovariance:
    """ML fit of ``sill * exp(-h / range)`` plus known noise ``sigma_eps2``.

    A log-spaced grid search over the bounds seeds an L-BFGS-B polish in
    log-parameters. The result is flagged when it sits on a bound or the
    optimiser reports failure.
    """
    (s_lo, s_hi), (r_lo, r_hi) = exponential_bounds(panel)
    D = cdist(panel.locs.coords, panel.locs.coords)
    bounds = [(np.log(s_lo), np.log(s_hi)), (np.log(r_lo), np.log(r_hi))]

    def obj(theta):
        return exponential_negloglik(np.exp(theta[0]), np.exp(theta[1]), panel, sigma_eps2, D)

    g0 = np.linspace(*bounds[0], grid_points)
    g1 = np.linspace(*bounds[1], grid_points)
    vals = np.array([[obj((a, b)) for b in g1] for a in g0])
    i, j = np.unravel_index(np.argmin(vals), vals.shape)
    x0 = np.array([g0[i], g1[j]])
    res = scipy.optimize.minimize(obj, x0, method="L-BFGS-B", bounds=bounds)
    x, fx = (res.x, res.fun) if res.fun <= vals[i, j] else (x0, vals[i, j])
    on_bound = any(np.isclose(x[k], bounds[k][e], atol=1e-6) for k in range(2) for e in range(2))
    return ExponentialCovariance(
        sill=float(np.exp(x[0])),
        range=float(np.exp(x[1])),
        flagged=bool(on_bound or not res.success),
        negloglik=float(fx),
    )


def simple_kriging(cov, sites, Z, pred_sites, sigma_eps2: float) -> np.ndarray:
    """Dense simple kriging ``c(s)' (C + sigma_eps2 I)^{-1} z`` for each column of ``Z``."""
    Sigma = cov.matrix(sites) + sigma_eps2 * np.eye(len(sites))
    c = scipy.linalg.cho_factor(Sigma, lower=True)
    return cov.matrix(pred_sites, sites) @ scipy.linalg.cho_solve(c, Z)


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------


def mspe(predictions, truth, weights=None) -> float:
    """Replicate average of the quadrature mean squared error.

    ``predictions`` and ``truth`` are ``N x T`` (grid node by replicate);
    ``weights`` are quadrature weights (uniform ``1/N`` if omitted).
    """
    P = np.asarray(predictions, dtype=float)
    Y = np.asarray(truth, dtype=float)
    if P.shape != Y.shape:
        raise ShapeError(f"prediction shape {P.shape} != truth shape {Y.shape}")
    if P.ndim == 1:
        P, Y = P[:, None], Y[:, None]
    w = np.full(P.shape[0], 1.0 / P.shape[0]) if weights is None else np.asarray(weights, float)
    return float((w @ (P - Y) ** 2).mean())


def frobenius_loss(Sigma_hat, S_test) -> float:
    """``||Sigma_hat - S_test||_F``."""
    A = np.asarray(Sigma_hat, dtype=float)
    B = np.asarray(S_test, dtype=float)
    if A.shape != B.shape or A.ndim != 2:
        raise ShapeError(f"shape mismatch {A.shape} vs {B.shape}")
    return float(np.linalg.norm(A - B, "fro"))


def kl_loss(Sigma_hat, S_test) -> float:
    """``(tr(Sigma_hat^{-1} S_test) + log|Sigma_hat| - log|S_test| - n) / 2``."""
    A = np.asarray(Sigma_hat, dtype=float)
    B = np.asarray(S_test, dtype=float)
    if A.shape != B.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"shape mismatch {A.shape} vs {B.shape}")
    try:
        ca = np.linalg.cholesky(A)
        cb = np.linalg.cholesky(B)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError("both matrices must be positive definite") from None
    logdet_a = 2.0 * np.log(np.diag(ca)).sum()
    logdet_b = 2.0 * np.log(np.diag(cb)).sum()
    tr = np.trace(scipy.linalg.cho_solve((ca, True), B))
    return float(0.5 * (tr + logdet_a - logdet_b - A.shape[0]))


# --------------------------------------------------------------------------
# reproductions
# --------------------------------------------------------------------------

DEFAULTS = {
    "fig1": {"quad_points": 201, "controls": 50, "K": 6},
    "fig2a": {"quad_points": 201, "r_min": 0.25, "r_max": 0.9, "r_steps": 27},
    "fig2b": {"quad_points": 201, "delta_min": -0.2, "delta_max": 0.0, "delta_steps": 21},
    "table1": {"quad_points": 41, "control_side": 18, "L_values": [3, 5, 7, 9, 11, 13]},
    "multires_demo": {"quad_points": 201, "controls": 50, "K_values": [8, 15, 30]},
    "table3": {
        "seed": 271828,
        "replicates": 50,
        "n": 100,
        "T": 50,
        "sigma_eps2": 3.0,
        "grid": 41,
        "K_min": 3,
        "K_max": 20,
        "layouts": list(covlab.LAYOUT_NAMES),
    },
}
REPRODUCTIONS = tuple(DEFAULTS)


@dataclass
class ReproductionResult:
    """Per-case rows, summary rows and the arrays needed for figures."""

    name: str
    config: dict
    header: list
    rows: list
    summary_header: list = field(default_factory=list)
    summary: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)
    elapsed: float = 0.0

    def manifest(self) -> dict:
        import platform

        import scipy

        from . import __version__

        return {
            "name": self.name,
            "config": self.config,
            "config_hash": config_hash(self.name, self.config),
            "versions": {
                "mrts": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": platform.python_version(),
            },
            "elapsed_seconds": self.elapsed,
        }


def config_hash(name: str, config: dict) -> str:
    blob = json.dumps({"name": name, **config}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def resolve_config(name: str, overrides: dict | None = None) -> dict:
    if name not in DEFAULTS:
        raise MrtsError(f"unknown reproduction {name!r}; choose from {REPRODUCTIONS}")
    cfg = json.loads(json.dumps(DEFAULTS[name]))
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k not in cfg:
            raise MrtsError(f"unknown option {k!r} for {name}")
        cfg[k] = v
    return cfg


def load_config(path) -> tuple[str, dict]:
    """Read an experiment config (JSON object with ``name`` plus options)."""
    with open(path) as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict) or "name" not in obj:
        raise MrtsError(f"{path}: config must be a JSON object with a 'name' key")
    name = obj.pop("name")
    return name, resolve_config(name, obj)


def run_reproduction(name: str, config: dict | None = None, workers: int = 1) -> ReproductionResult:
    """Run a named experiment: ``fig1``, ``fig2a``, ``fig2b``, ``table1``,
    ``table3`` or ``multires_demo``."""
    cfg = resolve_config(name, config)
    t0 = time.perf_counter()
    runner = {
        "fig1": _run_fig1,
        "fig2a": _run_fig2a,
        "fig2b": _run_fig2b,
        "table1": _run_table1,
        "table3": _run_table3,
        "multires_demo": _run_multires,
    }[name]
    result = runner(cfg, workers) if name == "table3" else runner(cfg)
    result.elapsed = time.perf_counter() - t0
    return result


def _sweep(values, make_basis, C0, grid):
    out = []
    for v in values:
        F = make_basis(v).evaluate(grid.points)
        _, e = covlab.best_M_ise(F, C0, grid, return_ise=True)
        out.append(e)
    return out


def _run_fig2a(cfg):
    grid = covlab.trapezoid_grid(1, cfg["quad_points"])
    C0 = covlab.reference_covariance("example1")
    rs = np.round(np.linspace(cfg["r_min"], cfg["r_max"], cfg["r_steps"]), 12)
    vals = _sweep(rs, lambda r: covlab.example1_basis(radius=r), C0, grid)
    rows = [[float(r), v] for r, v in zip(rs, vals)]
    i = int(np.argmin(vals))
    return ReproductionResult(
        "fig2a", cfg, ["radius", "ise"], rows, ["argmin_radius", "min_ise"], [[float(rs[i]), vals[i]]]
    )


def _run_fig2b(cfg):
    grid = covlab.trapezoid_grid(1, cfg["quad_points"])
    C0 = covlab.reference_covariance("example1")
    ds = np.round(np.linspace(cfg["delta_min"], cfg["delta_max"], cfg["delta_steps"]), 12)
    vals = _sweep(ds, lambda dl: covlab.example1_basis(shift=dl, count=7), C0, grid)
    rows = [[float(dl), v] for dl, v in zip(ds, vals)]
    i = int(np.argmin(vals))
    return ReproductionResult(
        "fig2b", cfg, ["shift", "ise"], rows, ["argmin_shift", "min_ise"], [[float(ds[i]), vals[i]]]
    )


def _run_fig1(cfg):
    grid = covlab.trapezoid_grid(1, cfg["quad_points"])
    C0 = covlab.reference_covariance("example1")
    mrts = compute_basis(covlab.unit_controls_1d(cfg["controls"]), cfg["K"])
    bases = {
        "true": covlab.example1_basis(),
        "narrow_bisquare": covlab.poor_basis_f1(),
        "wide_bisquare": covlab.poor_basis_f2(),
        "mrts": mrts,
    }
    rows, surfaces = [], {"target": C0.matrix(grid.points)}
    for label, b in bases.items():
        F = b.evaluate(grid.points)
        M, e = covlab.best_M_ise(F, C0, grid, return_ise=True)
        rows.append([label, F.shape[1], e])
        surfaces[label] = F @ M @ F.T
    return ReproductionResult(
        "fig1", cfg, ["basis", "K", "ise"], rows, extras={"grid": grid.points[:, 0], "surfaces": surfaces}
    )


def _run_multires(cfg):
    grid = covlab.trapezoid_grid(1, cfg["quad_points"])
    C0 = covlab.reference_covariance("deformed_exponential")
    Ks = [int(k) for k in cfg["K_values"]]
    basis = compute_basis(covlab.unit_controls_1d(cfg["controls"]), max(Ks))
    Fall = basis.evaluate(grid.points)
    rows, surfaces = [], {"target": C0.matrix(grid.points)}
    for K in Ks:
        F = Fall[:, :K]
        M, e = covlab.best_M_ise(F, C0, grid, return_ise=True)
        rows.append([K, e])
        surfaces[f"K={K}"] = F @ M @ F.T
    return ReproductionResult(
        "multires_demo", cfg, ["K", "ise"], rows, extras={"grid": grid.points[:, 0], "surfaces": surfaces}
    )


def _run_table1(cfg):
    grid = covlab.trapezoid_grid(2, cfg["quad_points"])
    C0 = covlab.reference_covariance("exponential2d").matrix(grid.points)
    Ls = [int(v) for v in cfg["L_values"]]
    Kmax = max(L * L + 3 for L in Ls)
    basis = compute_basis(covlab.unit_controls_2d(cfg["control_side"]), Kmax)
    Fall = basis.evaluate(grid.points)
    rows = []
    for L in Ls:
        K = L * L + 3
        _, e_tps = covlab.best_M_ise(covlab.conventional_tps_basis(L).evaluate(grid.points), C0, grid, True)
        _, e_mrts = covlab.best_M_ise(Fall[:, :K], C0, grid, True)
        rows.append([K, L, e_tps, e_mrts])
    ties = [t for t in basis.ties]
    return ReproductionResult(
        "table1", cfg, ["n_functions", "L", "tps", "proposed"], rows, extras={"ties": ties}
    )


@dataclass(frozen=True)
class ColumnSpaceBasis:
    """Orthonormal reparameterisation ``f(s)' V diag(1/sv)`` of a basis on its
    column space at the data sites.

    ``{F M F' : M >= 0}`` and ``{U N U' : N >= 0}`` describe the same
    covariances, so fitting on the reduced basis is exact when ``F`` has
    numerically dependent columns.
    """

    base: object
    transform: np.ndarray

    @property
    def K(self) -> int:
        return self.transform.shape[1]

    def evaluate(self, sites) -> np.ndarray:
        return self.base.evaluate(sites) @ self.transform


def column_space_basis(basis, coords) -> ColumnSpaceBasis:
    """Drop directions of ``F`` whose squared singular value is below the Gram floor."""
    _, sv, Vt = np.linalg.svd(basis.evaluate(coords), full_matrices=False)
    keep = sv**2 > GRAM_FLOOR * sv[0] ** 2
    return ColumnSpaceBasis(basis, Vt[keep].T / sv[keep])


def table3_replicate(cfg: dict, rep: int) -> dict:
    """One replicate of the prediction comparison; returns MSPE per method and K-hat."""
    rng = replicate_rngs(cfg["seed"], rep + 1)[rep]
    spec = SimulationSpec(n=cfg["n"], T=cfg["T"], sigma_eps2=cfg["sigma_eps2"], grid_size=cfg["grid"])
    sim = simulate_panel(spec, rng)
    panel, grid = sim.panel, sim.grid
    sites, Z, eps2 = panel.locs.coords, panel.Z, cfg["sigma_eps2"]
    out = {"replicate": rep}

    def score(pred):
        return mspe(pred, sim.y_grid, grid.weights)

    out["true"] = score(simple_kriging(sim.truth, sites, Z, grid.points, eps2))
    expo = fit_exponential_ml(panel, eps2)
    out["exponential"] = score(simple_kriging(expo, sites, Z, grid.points, eps2))
    fit = select_K(panel, build_system(panel.locs), (cfg["K_min"], cfg["K_max"]), eps2)
    out["proposed"] = score(krige(build_operator(fit), Z, grid.points))
    out["K_hat"] = fit.K
    for name in cfg["layouts"]:
        layout = covlab.bisquare_layout(name)
        try:
            f = fit_ml(panel, layout, eps2)
        except RankDeficientError:
            f = fit_ml(panel, column_space_basis(layout, sites), eps2)
        out[name] = score(krige(build_operator(f), Z, grid.points))
    return out


def _run_table3(cfg, workers=1):
    reps = range(int(cfg["replicates"]))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(table3_replicate, [cfg] * len(reps), reps))
    else:
        results = [table3_replicate(cfg, r) for r in reps]
    results.sort(key=lambda r: r["replicate"])
    methods = ["true", "exponential", "proposed", *cfg["layouts"]]
    header = ["replicate", *methods, "K_hat"]
    rows = [[r["replicate"], *(r[m] for m in methods), r["K_hat"]] for r in results]
    summary = []
    for m in methods:
        v = np.array([r[m] for r in results])
        se = v.std(ddof=1) / np.sqrt(v.size) if v.size > 1 else float("nan")
        summary.append([m, float(v.mean()), float(se)])
    k = np.array([r["K_hat"] for r in results])
    q1, q3 = np.percentile(k, [25, 75])
    return ReproductionResult(
        "table3",
        cfg,
        header,
        rows,
        ["method", "mean_mspe", "std_error"],
        summary,
        extras={"K_hat": k, "K_hat_quartiles": (float(q1), float(q3))},
    )


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("MRTS_THREADS", "1")))
    except ValueError:
        return 1
