"""Command-line front end.

Subcommands: ``basis``, ``fit``, ``predict``, ``ise``, ``simulate`` and
``reproduce``. Usage errors exit with status 2 and data errors with status 1;
either way a one-line JSON error record goes to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, covlab, experiments, plotting
from .basis import MrtsBasis, compute_basis
from .errors import MrtsError
from .estimation import SreFit, read_panel, select_K
from .io import atomic_write_text, write_csv, write_locations, write_panel
from .prediction import build_operator, krige, lattice, write_predictions
from .tps import read_coords, read_locations


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _error_record(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message, "exit_code": code}), file=sys.stderr)
    return code


def _write_manifest(path, command: str, args: dict, outputs, started: float, extra=None):
    if not path:
        return
    import scipy

    rec = {
        "command": command,
        "arguments": args,
        "outputs": [str(p) for p in outputs],
        "versions": {"mrts": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
        "elapsed_seconds": time.perf_counter() - started,
    }
    if extra:
        rec.update(extra)
    atomic_write_text(path, json.dumps(rec, indent=2, default=str) + "\n")


def _k_range(text: str):
    parts = text.replace(":", ",").split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected KMIN,KMAX")
    try:
        lo, hi = (int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not integers: {text!r}") from None
    return lo, hi


def _values(text: str) -> list[float]:
    """``a,b,c`` or ``start:stop:num`` (inclusive, ``num`` points)."""
    try:
        if ":" in text:
            a, b, num = text.split(":")
            return np.round(np.linspace(float(a), float(b), int(num)), 12).tolist()
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad value list {text!r}") from None


def _nonneg(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not np.isfinite(v) or v < 0:
        raise argparse.ArgumentTypeError(f"must be finite and non-negative: {text!r}")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1: {text!r}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mrts", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"mrts {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = _Parser(add_help=False)
    common.add_argument("--manifest", type=Path, help="write a JSON run manifest here")
    common.add_argument(
        "--threads",
        type=_positive_int,
        default=None,
        help="worker cap (default: $MRTS_THREADS or 1)",
    )

    b = sub.add_parser("basis", parents=[common], help="build an MRTS basis from control points")
    b.add_argument("--locations", type=Path, required=True, help="CSV of control points")
    b.add_argument("--K", type=int, required=True, help="number of basis functions")
    b.add_argument("--out", type=Path, required=True, help="basis JSON")

    f = sub.add_parser("fit", parents=[common], help="ML fit with AIC selection of K")
    f.add_argument("--locations", type=Path, required=True)
    f.add_argument("--panel", type=Path, required=True, help="CSV with site_id,t,value")
    f.add_argument("--sigma-eps2", type=_nonneg, required=True, help="known measurement-error variance")
    g = f.add_mutually_exclusive_group(required=True)
    g.add_argument("--K", type=int, help="fixed number of basis functions")
    g.add_argument("--K-range", type=_k_range, help="KMIN,KMAX for AIC selection")
    f.add_argument("--basis", type=Path, help="precomputed basis JSON (default: build from locations)")
    f.add_argument("--mean", type=Path, help="CSV of mean values per site (one column) to subtract")
    f.add_argument("--out", type=Path, required=True, help="fit JSON")
    f.add_argument("--aic-trace", type=Path, help="CSV of K, aic, negloglik, sigma_xi2_hat")

    pr = sub.add_parser("predict", parents=[common], help="kriging predictions from a fitted model")
    pr.add_argument("--fit", type=Path, required=True)
    pr.add_argument("--panel", type=Path, required=True)
    where = pr.add_mutually_exclusive_group(required=True)
    where.add_argument("--sites", type=Path, help="CSV of prediction sites")
    where.add_argument(
        "--grid",
        type=float,
        nargs=3,
        metavar=("LOWER", "UPPER", "SIZE"),
        help="regular lattice on [LOWER, UPPER]^d with SIZE points per axis",
    )
    pr.add_argument("--out", type=Path, required=True)

    i = sub.add_parser("ise", parents=[common], help="ISE sweep over a basis family")
    i.add_argument(
        "--target",
        required=True,
        choices=["example1", "deformed_exponential", "exponential2d"],
        help="reference covariance",
    )
    i.add_argument(
        "--family",
        required=True,
        choices=["radius", "shift", "mrts", "tps", "layout"],
        help="radius/shift: bisquare families in 1-D; mrts: K values; tps: L values; layout: presets",
    )
    i.add_argument("--values", type=_values, help="a,b,c or start:stop:num (layout: ignored)")
    i.add_argument("--grid", type=_positive_int, help="quadrature points per axis")
    i.add_argument("--locations", type=Path, help="control points for --family mrts")
    i.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("simulate", parents=[common], help="seeded panel from the two-cosine model")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--n", type=_positive_int, default=100)
    s.add_argument("--T", type=_positive_int, default=50)
    s.add_argument("--sigma-eps2", type=_nonneg, default=3.0)
    s.add_argument("--sampling", choices=["uniform-random", "fixed-grid"], default="uniform-random")
    s.add_argument("--grid", type=_positive_int, default=41, help="truth grid points per axis")
    s.add_argument("--out-dir", type=Path, required=True)

    r = sub.add_parser("reproduce", parents=[common], help="run a named experiment")
    r.add_argument("name", choices=experiments.REPRODUCTIONS)
    r.add_argument("--config", type=Path, help="JSON config (name plus options)")
    r.add_argument("--seed", type=int)
    r.add_argument("--replicates", type=_positive_int)
    r.add_argument("--full", action="store_true", help="table3: 200 replicates")
    r.add_argument("--grid", type=_positive_int, help="quadrature / MSPE grid points per axis")
    r.add_argument("--out-dir", type=Path, required=True)
    r.add_argument("--no-figures", action="store_true")
    return p


def _threads(args) -> int:
    return args.threads if args.threads else experiments.default_workers()


def cmd_basis(args):
    locs = read_locations(args.locations)
    basis = compute_basis(locs, args.K)
    basis.save(args.out)
    return [args.out]


def _read_mean(path, n):
    if path is None:
        return None
    vals = np.loadtxt(path, delimiter=",", ndmin=1, comments="#")
    if vals.ndim != 1 or vals.size != n:
        raise MrtsError(f"{path}: expected {n} mean values, one per line")
    return vals


def cmd_fit(args):
    locs = read_locations(args.locations)
    panel = read_panel(args.panel, locs, mean=_read_mean(args.mean, locs.n))
    if args.basis is not None:
        basis = MrtsBasis.load(args.basis)
        if not np.array_equal(basis.locs.coords, locs.coords):
            raise MrtsError("basis control points differ from --locations")
    else:
        K_top = args.K if args.K is not None else args.K_range[1]
        basis = compute_basis(locs, K_top)
    if args.K is not None:
        fit = select_K(panel, basis, (args.K, args.K), args.sigma_eps2)
    else:
        fit = select_K(panel, basis, args.K_range, args.sigma_eps2)
    fit.save(args.out)
    outputs = [args.out]
    if args.aic_trace:
        rows = ([r["K"], r["aic"], r["negloglik"], r["sigma_xi2_hat"]] for r in fit.aic_trace)
        write_csv(args.aic_trace, ["K", "aic", "negloglik", "sigma_xi2_hat"], rows)
        outputs.append(args.aic_trace)
    return outputs


def cmd_predict(args):
    fit = SreFit.load(args.fit)
    panel = read_panel(args.panel, fit.locs)
    if args.sites is not None:
        sites = read_sites(args.sites, fit.locs.d)
    else:
        lo, hi, size = args.grid
        if size < 1 or size != int(size):
            raise UsageError("--grid SIZE must be a positive integer")
        sites = lattice([lo] * fit.locs.d, [hi] * fit.locs.d, int(size))
    yhat = krige(build_operator(fit), panel.Z, sites)
    write_predictions(args.out, sites, yhat)
    return [args.out]


def read_sites(path, d) -> np.ndarray:
    """Prediction sites; unlike control points, duplicates are allowed."""
    arr = read_coords(path)
    if arr.shape[1] != d:
        raise MrtsError(f"{path}: expected {d} coordinate columns, got {arr.shape[1]}")
    return arr


def cmd_ise(args):
    C0 = covlab.reference_covariance(args.target)
    d = 2 if args.target == "exponential2d" else 1
    if args.family in ("radius", "shift") and d != 1:
        raise UsageError(f"--family {args.family} is one-dimensional")
    if args.family == "tps" and d != 2:
        raise UsageError("--family tps needs a two-dimensional target")
    if args.family == "layout" and d != 2:
        raise UsageError("--family layout needs a two-dimensional target")
    if args.family != "layout" and not args.values:
        raise UsageError(f"--values is required for --family {args.family}")
    size = args.grid or (201 if d == 1 else 41)
    grid = covlab.trapezoid_grid(d, size)
    rows = []
    if args.family == "radius":
        for r in args.values:
            F = covlab.example1_basis(radius=r).evaluate(grid.points)
            rows.append([r, covlab.best_M_ise(F, C0, grid, return_ise=True)[1]])
    elif args.family == "shift":
        for dl in args.values:
            F = covlab.example1_basis(shift=dl, count=7).evaluate(grid.points)
            rows.append([dl, covlab.best_M_ise(F, C0, grid, return_ise=True)[1]])
    elif args.family == "tps":
        for L in args.values:
            F = covlab.conventional_tps_basis(int(L)).evaluate(grid.points)
            rows.append([int(L), covlab.best_M_ise(F, C0, grid, return_ise=True)[1]])
    elif args.family == "layout":
        for name in covlab.LAYOUT_NAMES:
            F = covlab.bisquare_layout(name).evaluate(grid.points)
            rows.append([name, covlab.best_M_ise(F, C0, grid, return_ise=True)[1]])
    else:
        if args.locations is not None:
            locs = read_locations(args.locations)
        else:
            locs = covlab.unit_controls_1d() if d == 1 else covlab.unit_controls_2d()
        Ks = [int(k) for k in args.values]
        Fall = compute_basis(locs, max(Ks)).evaluate(grid.points)
        for K in Ks:
            rows.append([K, covlab.best_M_ise(Fall[:, :K], C0, grid, return_ise=True)[1]])
    param = {"radius": "radius", "shift": "shift", "tps": "L", "mrts": "K", "layout": "layout"}
    write_csv(args.out, [param[args.family], "ise"], rows)
    return [args.out]


def cmd_simulate(args):
    spec = experiments.SimulationSpec(
        n=args.n,
        T=args.T,
        sigma_eps2=args.sigma_eps2,
        sampling=args.sampling,
        seed=args.seed,
        grid_size=args.grid,
    )
    sim = experiments.simulate_panel(spec)
    out = args.out_dir
    paths = [out / "locations.csv", out / "panel.csv", out / "truth_grid.csv"]
    write_locations(paths[0], sim.panel.locs.coords)
    write_panel(paths[1], sim.panel.Z)
    write_predictions(paths[2], sim.grid.points, sim.y_grid)
    return paths


def cmd_reproduce(args):
    if args.config is not None:
        name, cfg = experiments.load_config(args.config)
        if name != args.name:
            raise UsageError(f"config is for {name!r}, not {args.name!r}")
    else:
        cfg = experiments.resolve_config(args.name)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.full:
        overrides["replicates"] = 200
    if args.replicates is not None:
        overrides["replicates"] = args.replicates
    if args.grid is not None:
        overrides["grid" if args.name == "table3" else "quad_points"] = args.grid
    cfg = experiments.resolve_config(args.name, {**cfg, **overrides})
    result = experiments.run_reproduction(args.name, cfg, workers=_threads(args))
    out = args.out_dir
    paths = [out / f"{args.name}.csv"]
    write_csv(paths[0], result.header, result.rows)
    if result.summary:
        paths.append(out / f"{args.name}_summary.csv")
        write_csv(paths[-1], result.summary_header, result.summary)
    if not args.no_figures:
        paths.extend(plotting.render(result, out))
    manifest = args.manifest or out / f"{args.name}_manifest.json"
    rec = result.manifest()
    rec["outputs"] = [str(p) for p in paths]
    atomic_write_text(manifest, json.dumps(rec, indent=2, default=str) + "\n")
    args.manifest = None  # already written
    return paths + [manifest]


COMMANDS = {
    "basis": cmd_basis,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "ise": cmd_ise,
    "simulate": cmd_simulate,
    "reproduce": cmd_reproduce,
}


def run(argv=None) -> int:
    """Parse ``argv`` and execute; returns the process exit code."""
    started = time.perf_counter()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        return _error_record("usage", str(exc), 2)
    if args.verbose:
        import logging

        logging.basicConfig(level=logging.DEBUG, format="%(levelname)s %(name)s: %(message)s")
    try:
        outputs = COMMANDS[args.command](args)
    except UsageError as exc:
        return _error_record("usage", str(exc), 2)
    except (MrtsError, OSError, ValueError) as exc:
        return _error_record(type(exc).__name__, str(exc), 1)
    if args.manifest:
        record = {k: v for k, v in vars(args).items() if k not in ("manifest",)}
        _write_manifest(args.manifest, args.command, record, outputs, started)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
