"""Command-line surface: generate / fit / ioc / predict / eval / repro.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import __version__
from .data import (TrajectoryBatch, atomic_write_text, dump_json, load_batch,
                   load_trajectory_csv, save_batch, save_trajectory_csv)
from .edmdc import (PINV_REL_TOL, fit_bilinear, fit_linear, load_model,
                    save_model)
from .errors import (BilqrError, DegenerateDataError, DimensionMismatchError,
                     DivergenceError, GenerationError, InvalidInputError,
                     LineSearchStalledError)
from .ioc import DIAG_REL_TOL, UNACTUATED_REL_TOL, estimate_cost, load_cost, save_cost
from .lifting import Dictionary
from .optctrl import generate_batch, predict
from .systems import make_system

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(BilqrError):
    pass


# -- small parsers --------------------------------------------------------------

def parse_params(text: str | None) -> dict:
    """Parse ``key=value,key=value`` into a dict of floats/ints."""
    out: dict = {}
    if not text:
        return out
    for piece in text.split(","):
        if "=" not in piece:
            raise UsageError(f"bad --params entry {piece!r} (expected key=value)")
        k, v = piece.split("=", 1)
        out[k.strip()] = int(v) if v.strip().isdigit() else float(v)
    return out


def parse_weights(text: str | None):
    if not text:
        return None
    return tuple(float(v) for v in text.split(","))


def parse_box(text: str | None, n: int) -> np.ndarray | None:
    """Parse ``lo:hi,lo:hi,...`` (one pair per coordinate, or one for all)."""
    if not text:
        return None
    pairs = []
    for piece in text.split(","):
        lo, hi = piece.split(":")
        pairs.append((float(lo), float(hi)))
    if len(pairs) == 1:
        pairs = pairs * n
    if len(pairs) != n:
        raise UsageError(f"--x0-box needs 1 or {n} lo:hi pairs")
    return np.array(pairs)


def load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def dictionary_from_config(cfg: dict) -> Dictionary:
    sec = cfg.get("dictionary")
    if not sec:
        raise UsageError("config file has no [dictionary] section")
    return Dictionary.from_list(sec["terms"], int(sec["n"]))


def solver_opts(cfg: dict) -> dict:
    sec = cfg.get("solver", {})
    return {
        "grad_tol": float(sec.get("grad_tol", 1e-8)),
        "max_iter": int(sec.get("max_iter", 2000)),
    }


def ioc_opts(cfg: dict) -> dict:
    sec = cfg.get("ioc", {})
    return {
        "pinv_rel_tol": float(sec.get("pinv_rel_tol", PINV_REL_TOL)),
        "diag_rel_tol": float(sec.get("diag_rel_tol", DIAG_REL_TOL)),
        "tol_unact": float(sec.get("tol_unact", UNACTUATED_REL_TOL)),
    }


def _load_x0(text: str) -> np.ndarray:
    """Initial state from a trajectory CSV path or inline comma list."""
    p = Path(text)
    if p.exists():
        states, _ = load_trajectory_csv(p)
        return states[0]
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise UsageError(f"--x0 {text!r}: not a file and not a number list")


def write_svg_lines(path: Path | str, series: list[np.ndarray],
                    labels: list[str], width: int = 640, height: int = 360) -> None:
    """Minimal SVG line plot of one or more scalar time series."""
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    all_vals = np.concatenate(series)
    lo, hi = float(all_vals.min()), float(all_vals.max())
    if hi - lo < 1e-12:
        hi = lo + 1.0
    pad = 30
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    for idx, (ys, label) in enumerate(zip(series, labels)):
        xs = np.linspace(pad, width - pad, len(ys))
        ysc = height - pad - (ys - lo) / (hi - lo) * (height - 2 * pad)
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ysc))
        color = colors[idx % len(colors)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     'stroke-width="1.5"/>')
        parts.append(f'<text x="{pad}" y="{15 + 14 * idx}" fill="{color}" '
                     f'font-size="12">{label}</text>')
    parts.append("</svg>")
    atomic_write_text(path, "\n".join(parts) + "\n")


# -- subcommands ----------------------------------------------------------------

def cmd_generate(args) -> int:
    if args.n_traj < 1:
        raise UsageError("--n-traj must be >= 1")
    system = make_system(args.system, parse_params(args.params), args.dt)
    weights = parse_weights(args.weights) or system.default_weights
    box = parse_box(args.x0_box, system.n)
    try:
        batch = generate_batch(system, weights, args.n_traj, args.horizon,
                               args.seed, x0_box=box)
    except GenerationError as exc:
        raise GenerationError(f"generation failed: {exc}") from exc
    save_batch(batch, args.out, {
        "system": system.name,
        "params": system.params,
        "seed": args.seed,
        "weights": list(weights),
    })
    print(f"wrote {batch.n_traj} trajectories (T = {batch.horizon}, "
          f"dt = {batch.dt}) to {args.out}")
    return EXIT_OK


def _resolve_dictionary(args, data_dir: Path) -> Dictionary:
    cfg = load_config(args.dict)
    if cfg:
        return dictionary_from_config(cfg)
    meta = json.loads((data_dir / "meta.json").read_text())
    if "system" not in meta:
        raise UsageError("no --dict config given and data has no system tag")
    system = make_system(meta["system"],
                         {k: v for k, v in meta.get("params", {}).items()},
                         meta["dt"])
    return system.dictionary


def cmd_fit(args) -> int:
    data = load_batch(args.data, truncate_to_shortest=args.truncate)
    dictionary = _resolve_dictionary(args, Path(args.data))
    cfg = load_config(args.config)
    rel_tol = ioc_opts(cfg)["pinv_rel_tol"]
    if args.linear:
        model = fit_linear(data, dictionary, rel_tol)
    else:
        model = fit_bilinear(data, dictionary, rel_tol)
    save_model(model, args.out)
    print(f"fit residual: {model.residual:.6e}")
    for w in model.warnings:
        print(f"warning: {w}")
    if not args.linear:
        from .ioc import detect_unactuated
        unact = detect_unactuated(model)
        if unact:
            print(f"warning: estimated unactuated lifted coordinates: {unact}")
    return EXIT_OK


def cmd_ioc(args) -> int:
    data = load_batch(args.data)
    model = load_model(args.model)
    if not hasattr(model, "B") or isinstance(model.B, np.ndarray):
        raise UsageError("ioc needs a bilinear model file")
    R = None
    if args.r_matrix:
        R = np.array(json.loads(Path(args.r_matrix).read_text()))
    cfg = load_config(args.config)
    opts = ioc_opts(cfg)
    est = estimate_cost(model, data, R=R, psd_project=args.psd_project, **opts)
    save_cost(est, args.out)
    d = est.diagnostics
    print(f"ls_residual: {est.ls_residual:.6e}")
    print(f"rank {d.numerical_rank}/{d.cols} "
          f"(rows {d.rows}, cond {d.condition_number:.3e})")
    print(f"lemma5: {d.lemma5_satisfied}  lemma6: {d.lemma6_satisfied}  "
          f"nullspace_dim: {d.nullspace_dim}")
    for w in est.warnings:
        print(f"warning: {w}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_model(args.model)
    cost = load_cost(args.cost)
    x0 = _load_x0(args.x0)
    cfg = load_config(args.config)
    sol = predict(model, cost, x0, args.horizon, **solver_opts(cfg))
    save_trajectory_csv(args.out, sol.states, sol.controls)
    dump_json({
        "converged": sol.converged,
        "objective": sol.objective,
        "grad_norm": sol.grad_norm,
        "iterations": sol.iterations,
    }, str(args.out) + ".meta.json")
    if args.plot:
        write_svg_lines(str(args.out) + ".svg",
                        [sol.states[:, j] for j in range(sol.states.shape[1])],
                        [f"x_{j+1}" for j in range(sol.states.shape[1])])
    if not sol.converged:
        print("solver did not converge", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _trajectory_metrics(actual_x, actual_u, pred_x, pred_u) -> dict:
    n_pos = min(actual_x.shape[1], 2)
    dx = pred_x - actual_x
    du = pred_u - actual_u
    seg = np.diff(actual_x[:, :n_pos], axis=0)
    path_len = float(np.sum(np.linalg.norm(seg, axis=1)))
    return {
        "state_rmse": float(np.sqrt(np.mean(np.sum(dx**2, axis=1)))),
        "position_rmse": float(np.sqrt(np.mean(np.sum(dx[:, :n_pos] ** 2, axis=1)))),
        "control_rmse": float(np.sqrt(np.mean(np.sum(du**2, axis=1)))),
        "path_length": path_len,
    }


def cmd_eval(args) -> int:
    data = load_batch(args.data)
    model = load_model(args.model)
    cost = load_cost(args.cost)
    cfg = load_config(args.config)
    opts = solver_opts(cfg)
    entries = []
    for i in range(data.n_traj):
        sol = predict(model, cost, data.states[i, 0], data.horizon, **opts)
        entry = _trajectory_metrics(data.states[i], data.controls[i],
                                    sol.states, sol.controls)
        entry["trajectory"] = i
        entry["converged"] = sol.converged
        entries.append(entry)
    report = {
        "n_trajectories": data.n_traj,
        "trajectories": entries,
        "aggregate": {
            key: float(np.mean([e[key] for e in entries]))
            for key in ("state_rmse", "position_rmse", "control_rmse")
        },
    }
    dump_json(report, args.report)
    print(f"mean state RMSE: {report['aggregate']['state_rmse']:.6e} "
          f"over {data.n_traj} trajectories")
    return EXIT_OK


# -- one-command study reproduction ----------------------------------------------

def _check(name: str, ok: bool, detail: str, lines: list[str]) -> bool:
    lines.append(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
    return ok


def repro_example2(out_dir: Path, seed: int = 0) -> dict:
    """Generate / fit / recover / re-solve for the planar benchmark study.

    Writes data, model, cost and a summary into ``out_dir`` and returns the
    metrics used for the pass/fail lines.
    """
    system = make_system("example2")
    weights = system.default_weights
    lines: list[str] = []
    ok = True

    batch = generate_batch(system, weights, 40, 100, seed)
    save_batch(batch, out_dir / "data", {"system": "example2", "seed": seed})
    model = fit_bilinear(batch, system.dictionary)
    save_model(model, out_dir / "model.json")
    A_true, Bs_true = system.analytic_bilinear
    errA = float(np.linalg.norm(model.A - A_true))
    errB = [float(np.linalg.norm(Bi - Bt)) for Bi, Bt in zip(model.B, Bs_true)]
    lines.append(f"      |A - A_analytic|_F = {errA:.3e}, "
                 + ", ".join(f"|B{i+1} - analytic| = {e:.3e}"
                             for i, e in enumerate(errB)))
    ok &= _check("bilinear fit residual <= 1e-2", model.residual <= 1e-2,
                 f"residual = {model.residual:.3e}", lines)

    est = estimate_cost(model, batch)
    save_cost(est, out_dir / "cost.json")
    diag = np.diag(est.Q)
    lines.append("      recovered diag(Q) = "
                 + np.array2string(diag, precision=4))
    ok &= _check("diag(Q) pattern (increasing, zero constant entry)",
                 bool(diag[0] < diag[1] < diag[2]) and abs(diag[3]) <= 1e-6,
                 f"diag = {np.round(diag, 4).tolist()}", lines)

    # held-out round trip: true system + true cost vs fitted model + Q_hat
    Q_true, R_true = system.lifted_cost(weights)
    rng = np.random.default_rng([seed, 10_000])
    worst = 0.0
    from .optctrl import sample_x0, solve, system_problem
    for _ in range(5):
        x0 = sample_x0(system.x0_box, rng)
        truth = solve(system_problem(system, Q_true, R_true, x0, 100))
        pred = predict(model, est, x0, 100)
        rmse = float(np.sqrt(np.mean(
            np.sum((pred.states - truth.states) ** 2, axis=1))))
        amplitude = float(np.max(np.linalg.norm(truth.states, axis=1)))
        worst = max(worst, rmse / amplitude)
    ok &= _check("held-out state RMSE <= 1% of amplitude", worst <= 0.01,
                 f"worst relative RMSE = {worst:.3e}", lines)

    atomic_write_text(out_dir / "summary.txt", "\n".join(lines) + "\n")
    return {
        "ok": bool(ok),
        "lines": lines,
        "fit_residual": model.residual,
        "err_A": errA,
        "err_B": errB,
        "diag_Q": diag,
        "held_out_rel_rmse": worst,
        "estimate": est,
    }


def repro_unicycle(out_dir: Path, seed: int = 0) -> dict:
    """44/4 train/test study on the unicycle; see ``repro_example2``."""
    system = make_system("unicycle")
    weights = system.default_weights
    lines: list[str] = []
    ok = True

    batch = generate_batch(system, weights, 48, 60, seed)
    train = TrajectoryBatch(batch.states[:44], batch.controls[:44], batch.dt)
    test = TrajectoryBatch(batch.states[44:], batch.controls[44:], batch.dt)
    save_batch(train, out_dir / "train", {"system": "unicycle", "seed": seed})
    save_batch(test, out_dir / "test", {"system": "unicycle", "seed": seed})

    model = fit_bilinear(train, system.dictionary)
    save_model(model, out_dir / "model.json")
    ok &= _check("bilinear fit residual <= 1e-3", model.residual <= 1e-3,
                 f"residual = {model.residual:.3e}", lines)

    est = estimate_cost(model, train)
    save_cost(est, out_dir / "cost.json")
    lines.append("      recovered diag(Q) = "
                 + np.array2string(np.diag(est.Q), precision=4))
    lines.append(f"      nullspace_dim = {est.diagnostics.nullspace_dim}")

    worst = 0.0
    entries = []
    for i in range(test.n_traj):
        sol = predict(model, est, test.states[i, 0], test.horizon)
        metrics = _trajectory_metrics(test.states[i], test.controls[i],
                                      sol.states, sol.controls)
        entries.append(metrics)
        worst = max(worst, metrics["position_rmse"] / metrics["path_length"])
    dump_json({"trajectories": entries}, out_dir / "report.json")
    ok &= _check("test position RMSE <= 5% of path length", worst <= 0.05,
                 f"worst ratio = {worst:.3e}", lines)

    atomic_write_text(out_dir / "summary.txt", "\n".join(lines) + "\n")
    return {
        "ok": bool(ok),
        "lines": lines,
        "fit_residual": model.residual,
        "test_metrics": entries,
        "worst_position_ratio": worst,
        "estimate": est,
    }


def cmd_repro(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.target == "example2":
        result = repro_example2(out_dir, args.seed)
    else:
        result = repro_unicycle(out_dir, args.seed)
    print("\n".join(result["lines"]))
    return EXIT_OK if result["ok"] else 1


# -- argument plumbing ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bilqr",
                                description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate optimal trajectory data")
    g.add_argument("--system", required=True)
    g.add_argument("--params", default=None)
    g.add_argument("--weights", default=None)
    g.add_argument("--n-traj", type=int, required=True)
    g.add_argument("--horizon", type=int, required=True)
    g.add_argument("--dt", type=float, default=0.01)
    g.add_argument("--x0-box", default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="fit a lifted model from trajectory data")
    f.add_argument("--data", required=True)
    f.add_argument("--dict", default=None, help="TOML config with [dictionary]")
    f.add_argument("--config", default=None)
    f.add_argument("--out", required=True)
    f.add_argument("--linear", action="store_true")
    f.add_argument("--truncate", action="store_true",
                   help="truncate ragged trajectories to the shortest")
    f.set_defaults(func=cmd_fit)

    i = sub.add_parser("ioc", help="recover the quadratic state cost")
    i.add_argument("--data", required=True)
    i.add_argument("--model", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--r-matrix", default=None)
    i.add_argument("--psd-project", action="store_true")
    i.add_argument("--config", default=None)
    i.set_defaults(func=cmd_ioc)

    pr = sub.add_parser("predict", help="predict a trajectory from model+cost")
    pr.add_argument("--model", required=True)
    pr.add_argument("--cost", required=True)
    pr.add_argument("--x0", required=True,
                    help="trajectory CSV (first state) or comma list")
    pr.add_argument("--horizon", type=int, required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--config", default=None)
    pr.add_argument("--plot", action="store_true")
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="compare predictions against held-out data")
    e.add_argument("--data", required=True)
    e.add_argument("--model", required=True)
    e.add_argument("--cost", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--config", default=None)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("repro", help="reproduce a benchmark study end to end")
    r.add_argument("target", choices=["example2", "unicycle"])
    r.add_argument("--out", default="repro-out")
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=cmd_repro)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DegenerateDataError, DimensionMismatchError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, GenerationError, LineSearchStalledError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
