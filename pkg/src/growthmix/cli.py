"""Command-line interface: simulate, fit, classify, summarize.

Every command is a pure function of its inputs and seed; outputs are
byte-reproducible (the manifest's wall-clock timing field aside).  Exit
codes: 0 success, 2 invalid input or configuration, 1 internal error.
"""

from __future__ import annotations

import argparse
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import clustering, report
from .io import (ValidationError, parse_kv_config, read_cohort_csv,
                 read_draws, read_truth_csv, sha256_file, write_cohort_csv,
                 write_draws, write_manifest, write_table, write_truth_csv)
from .mcmc import ChainConfig, run_chain
from .simulate import SimSpec, generate_paired_cohorts

_FIT_DEFAULTS = {
    "iters": 100_000, "burnin": 50_000, "thin": 20, "seed": 0,
    "knots": "random", "k": 3, "horizon": 1.0, "allow_outliers": False,
    "fixed_knots": None,
}
_PRESETS = {
    "paper": {"iters": 100_000, "burnin": 50_000, "thin": 20, "k": 2},
    "ci": {"iters": 20_000, "burnin": 10_000, "thin": 10, "k": 2},
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="growthmix",
        description="Bayesian broken-stick growth modelling with "
                    "nonparametric velocity clustering",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate the paired synthetic cohorts")
    p_sim.add_argument("--n", type=int, default=400, help="number of children")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.set_defaults(func=cmd_simulate)

    p_fit = sub.add_parser("fit", help="run the MCMC sampler on a cohort CSV")
    p_fit.add_argument("data", help="cohort CSV (child_id,age_years,haz)")
    p_fit.add_argument("--config", help="key = value configuration file")
    p_fit.add_argument("--preset", choices=sorted(_PRESETS),
                       help="named schedule preset (sets iters/burnin/thin/k)")
    p_fit.add_argument("--seed", type=int, default=None)
    p_fit.add_argument("--iters", type=int, default=None)
    p_fit.add_argument("--burnin", type=int, default=None)
    p_fit.add_argument("--thin", type=int, default=None)
    p_fit.add_argument("--knots", choices=["fixed", "random"], default=None)
    p_fit.add_argument("--k", type=int, default=None, help="number of change points")
    p_fit.add_argument("--horizon", type=float, default=None)
    p_fit.add_argument("--allow-outliers", action="store_true", default=None,
                       help="keep HAZ values outside [-6, 6]")
    p_fit.add_argument("--out", required=True)
    p_fit.set_defaults(func=cmd_fit)

    p_cls = sub.add_parser("classify", help="PEAR-optimal clustering from draws")
    p_cls.add_argument("draws", help="draws.bin produced by fit")
    p_cls.add_argument("--truth", help="truth sidecar CSV for an ARI report")
    p_cls.add_argument("--workers", type=int, default=1)
    p_cls.add_argument("--out", required=True)
    p_cls.set_defaults(func=cmd_classify)

    p_sum = sub.add_parser("summarize", help="tables and figures from a fit directory")
    p_sum.add_argument("rundir", help="directory holding draws.bin (and classify outputs)")
    p_sum.add_argument("--out", default=None,
                       help="report directory (default: <rundir>/report)")
    p_sum.set_defaults(func=cmd_summarize)
    return parser


def _ensure_outdir(path_str: str) -> Path:
    path = Path(path_str)
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-probe"
        probe.touch()
        probe.unlink()
    except OSError as exc:
        raise ValidationError(f"{path}: not a writable directory ({exc})") from exc
    return path


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    if args.n < 1:
        raise ValidationError("--n must be a positive integer")
    outdir = _ensure_outdir(args.out)
    sim = generate_paired_cohorts(SimSpec(n_children=args.n), args.seed)
    write_cohort_csv(outdir / "d_fixed.csv", sim.d_fixed)
    write_cohort_csv(outdir / "d_random.csv", sim.d_random)
    write_truth_csv(outdir / "truth.csv", sim)
    write_manifest(
        outdir, "simulate", {"n": args.n}, args.seed, {},
        ["d_fixed.csv", "d_random.csv", "truth.csv"],
        time.perf_counter() - started)
    return 0


def _resolve_fit_settings(args) -> dict:
    settings = dict(_FIT_DEFAULTS)
    if args.preset:
        settings.update(_PRESETS[args.preset])
    if args.config:
        file_conf = parse_kv_config(args.config)
        unknown = set(file_conf) - set(_FIT_DEFAULTS)
        if unknown:
            raise ValidationError(
                f"{args.config}: unknown keys {sorted(unknown)}")
        settings.update(file_conf)
    for key in ("seed", "iters", "burnin", "thin", "knots", "k", "horizon"):
        value = getattr(args, key)
        if value is not None:
            settings[key] = value
    if args.allow_outliers is not None:
        settings["allow_outliers"] = True
    if settings["knots"] not in ("fixed", "random"):
        raise ValidationError("knots must be 'fixed' or 'random'")
    for key in ("iters", "burnin", "thin", "k"):
        if int(settings[key]) != settings[key] or settings[key] < 0:
            raise ValidationError(f"{key} must be a non-negative integer")
        settings[key] = int(settings[key])
    if settings["k"] < 1:
        raise ValidationError("k must be at least 1")
    if not settings["horizon"] > 0:
        raise ValidationError("horizon must be positive")
    return settings


def cmd_fit(args) -> int:
    started = time.perf_counter()
    settings = _resolve_fit_settings(args)
    outdir = _ensure_outdir(args.out)

    cohort, ingest = read_cohort_csv(
        args.data, settings["horizon"], settings["k"],
        allow_outliers=settings["allow_outliers"])
    try:
        config = ChainConfig(
            iterations=settings["iters"], burnin=settings["burnin"],
            thin=settings["thin"], seed=settings["seed"],
            knot_mode=settings["knots"],
            fixed_knots=(tuple(settings["fixed_knots"])
                         if settings["fixed_knots"] else None),
        )
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc

    output = run_chain(cohort, config)
    write_draws(outdir / "draws.bin", output)

    retained = np.zeros(config.iterations, dtype=int)
    kept_at = np.arange(config.burnin + config.thin, config.iterations + 1,
                        config.thin)
    retained[kept_at - 1] = 1
    write_table(outdir / "g_trace.csv", ["sweep", "n_components", "retained"],
                ((i + 1, int(g), int(r)) for i, (g, r) in
                 enumerate(zip(output.g_trace, retained))))
    write_table(outdir / "acceptance.csv", ["child_id", "knot_accept_rate"],
                ((cid, float(rate)) for cid, rate in
                 zip(output.child_ids, output.knot_accept)))
    write_manifest(
        outdir, "fit", settings, settings["seed"], {"data": args.data},
        ["draws.bin", "g_trace.csv", "acceptance.csv"],
        time.perf_counter() - started,
        extra={"ingest": ingest, "n_retained": output.n_draws,
               "runtime_chain_s": output.runtime_s})
    return 0


def cmd_classify(args) -> int:
    started = time.perf_counter()
    outdir = _ensure_outdir(args.out)
    if args.workers < 1:
        raise ValidationError("--workers must be >= 1")
    arrays, meta = read_draws(args.draws)
    if arrays["s"].shape[0] < 1:
        raise ValidationError(f"{args.draws}: contains no retained draws")
    child_ids = meta["child_ids"]

    s_hat, pear = clustering.maximize_pear(arrays["s"], workers=args.workers)
    psm = clustering.psm_from_draws(arrays["s"])

    write_table(outdir / "assignments.csv", ["child_id", "group"],
                ((cid, int(g) + 1) for cid, g in zip(child_ids, s_hat)))
    write_table(outdir / "psm.csv", ["child_id"] + list(child_ids),
                ((cid, *map(float, row)) for cid, row in zip(child_ids, psm)))
    (outdir / "pear.txt").write_text(repr(float(pear)) + "\n", encoding="utf-8")

    grid, curves, sizes = report.posterior_group_curves(
        arrays, s_hat, meta["horizon"])
    write_table(outdir / "group_trajectories.csv", ["group", "age_years", "haz"],
                ((g + 1, float(t), float(curves[g, j]))
                 for g in range(curves.shape[0])
                 for j, t in enumerate(grid)))

    outputs = ["assignments.csv", "psm.csv", "pear.txt", "group_trajectories.csv"]
    extra = {"pear": float(pear), "n_groups": int(s_hat.max()) + 1,
             "group_sizes": sizes.tolist()}
    inputs = {"draws": args.draws}
    if args.truth:
        truth_map = read_truth_csv(args.truth)
        missing = [cid for cid in child_ids if cid not in truth_map]
        if missing:
            raise ValidationError(
                f"{args.truth}: missing children {missing[:5]}...")
        s_true = np.array([truth_map[cid] for cid in child_ids])
        ari_true = clustering.ari(s_hat, s_true)
        (outdir / "ari_true.txt").write_text(repr(float(ari_true)) + "\n",
                                             encoding="utf-8")
        outputs.append("ari_true.txt")
        extra["ari_true"] = float(ari_true)
        inputs["truth"] = args.truth

    write_manifest(outdir, "classify", {"workers": args.workers}, None,
                   inputs, outputs, time.perf_counter() - started, extra=extra)
    return 0


def cmd_summarize(args) -> int:
    started = time.perf_counter()
    rundir = Path(args.rundir)
    draws_path = rundir / "draws.bin"
    if not draws_path.exists():
        raise ValidationError(f"{rundir}: no draws.bin (run fit first)")
    outdir = _ensure_outdir(args.out if args.out else rundir / "report")

    arrays, meta = read_draws(draws_path)
    if arrays["s"].shape[0] < 1:
        raise ValidationError(f"{draws_path}: contains no retained draws")
    write_table(outdir / "summary.csv",
                ["parameter", "mean", "sd", "q05", "median", "q95"],
                report.posterior_scalar_summary(arrays))
    report.save_g_posterior_figure(arrays["g"], outdir / "g_posterior.png")
    report.save_trace_figure(arrays, outdir / "traces.png")
    outputs = ["summary.csv", "g_posterior.png", "traces.png"]

    traj_csv = rundir / "group_trajectories.csv"
    assign_csv = rundir / "assignments.csv"
    if traj_csv.exists() and assign_csv.exists():
        rows = np.genfromtxt(traj_csv, delimiter=",", skip_header=1)
        groups = rows[:, 0].astype(int)
        sizes = np.genfromtxt(assign_csv, delimiter=",", skip_header=1,
                              usecols=(1,), dtype=int)
        counts = np.bincount(sizes)[1:]
        n_groups = groups.max()
        grid = rows[groups == 1, 1]
        curves = np.vstack([rows[groups == g + 1, 2] for g in range(n_groups)])
        report.save_group_trajectory_figure(grid, curves, counts,
                                            outdir / "group_trajectories.png")
        outputs.append("group_trajectories.png")

    write_manifest(outdir, "summarize", {"rundir": str(rundir)}, None,
                   {"draws": draws_path}, outputs,
                   time.perf_counter() - started)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:  # pragma: no cover - defensive
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
