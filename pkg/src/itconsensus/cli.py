"""Command-line entry point.

    itconsensus design           [config] [--override k=v ...]
    itconsensus certify-schedule [config] [--seed S]
    itconsensus simulate         [config] [--seed S] [--out-dir D]
    itconsensus montecarlo       [config] [--runs R] [--seed S] [--out-dir D]
    itconsensus report           [config] --trace D/trace.csv [--out-dir D]

Exit codes: 0 success, 2 invalid input, 3 infeasible design or schedule,
4 divergence, 5 stability certification failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, calibration, engine, plotting
from .config import ConfigError, ExperimentConfig, load
from .controller import ControllerError
from .design import DesignError
from .graph import GraphError
from .schedule import ScheduleError, certify, schedule_rows
from .virtual_layer import DivergenceError, LeaderRef

log = logging.getLogger("itconsensus")

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_DIVERGED, EXIT_UNCERTIFIED = 0, 2, 3, 4, 5


def _write_csv(path: Path, rows: list[dict]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def _fmt_matrix(m) -> str:
    return "\n".join("    " + "  ".join(f"{v:10.4f}" for v in row) for row in np.atleast_2d(m))


def design_report(lam: float, out, res, c0: int) -> str:
    lines = [
        "Consensus gain design",
        f"  lambda_min(L+B)      = {lam:.6f}",
        f"  c0 * lambda_min      = {c0 * lam:.4f}  (>= 1 required)",
        "  P =",
        _fmt_matrix(out.P),
        f"  K                    = [{'  '.join(f'{v:.4f}' for v in out.K.reshape(-1))}]",
        f"  ||P|| (spectral)     = {out.norm_P:.4f}",
        f"  c_alpha1             = {out.c_alpha1:.4f}",
        f"  delta_alpha          = {out.delta_alpha:.4f}",
        f"  delta_beta           = {out.delta_beta:.4f}",
        f"  c_beta               = {out.c_beta:.4f}",
        f"  max OFF / ON ratio   = {out.max_off_ratio:.4f}  ({100 * out.max_off_ratio:.1f} %)",
        f"  residual eig max     = {res.riccati_max_eig:.3e} (Riccati), {res.growth_max_eig:.3e} (growth)",
    ]
    return "\n".join(lines)


def cmd_design(cfg: ExperimentConfig, out_dir: Path) -> int:
    lam, out, res = engine.run_design(cfg.sim)
    print(design_report(lam, out, res, cfg.sim.design.c0))
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {"lambda_min": lam, **out.as_dict(),
              "residual_riccati_max": res.riccati_max_eig, "residual_growth_max": res.growth_max_eig}
    (out_dir / "design.json").write_text(json.dumps(record, indent=2))
    return EXIT_OK


def cmd_certify_schedule(cfg: ExperimentConfig, out_dir: Path) -> int:
    _, out, _ = engine.run_design(cfg.sim)
    sched = engine.make_schedule(cfg.sim, out)
    certs, lam, ok = certify(sched, out)
    rows = schedule_rows(sched, certs)
    _write_csv(out_dir / "schedule.csv", rows)
    print(f"{'k':>3} {'tau_on':>9} {'tau_off':>9} {'tau_next':>9} {'Lambda_k':>10}")
    for r in rows:
        print(f"{r['kappa']:>3} {r['tau_on']:9.3f} {r['tau_off']:9.3f} {r['tau_next']:9.3f} {r['lambda_k']:10.5f}")
    print(f"global Lambda = {lam:.5f}, T = {sched.T_max:.3f} s, {'feasible' if ok else 'INFEASIBLE'}")
    return EXIT_OK if ok else EXIT_INFEASIBLE


def cmd_simulate(cfg: ExperimentConfig, out_dir: Path) -> int:
    setup = engine.prepare(cfg.sim)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "schedule.csv", schedule_rows(setup.schedule, setup.certificates))
    if setup.n_steps == 0:
        engine.empty_trace(setup).to_csv(out_dir / "trace.csv", cfg.report.log_noise)
        print("zero horizon: wrote header-only trace")
        return EXIT_OK
    trace = engine.run(cfg.sim, setup=setup)
    trace.to_csv(out_dir / "trace.csv", cfg.report.log_noise)
    env = analysis.check_envelopes(trace.t, trace.Ve, setup.design, setup.schedule)
    summary = env.summary()
    _write_csv(out_dir / "envelope.csv", [
        {"kappa": p.kappa, "on_margin": p.on_margin, "off_margin": p.off_margin,
         "on_violations": p.on_violations, "off_violations": p.off_violations}
        for p in env.periods
    ])
    metrics = analysis.consensus_metrics(trace.tracking_error[None], trace.t)
    lines = [f"rows: {trace.t.size}", f"envelope violations: {env.violations}"]
    lines += [f"  {k} = {v}" for k, v in summary.items()]
    lines += [f"final-window mean |z_{i + 1} - z_r| = {v:.4f}" for i, v in enumerate(metrics["mean"])]
    if trace.diverged_at is not None:
        lines.append(trace.message)
    text = "\n".join(lines)
    (out_dir / "summary.txt").write_text(text + "\n")
    print(text)
    if cfg.report.figures:
        bound = env.envelope.bound(trace.t) if env.envelope else None
        plotting.trace_figures(trace, out_dir, bound)
    return EXIT_DIVERGED if trace.diverged_at is not None else EXIT_OK


def _band(cfg: ExperimentConfig):
    if cfg.report.band is not None:
        return analysis.BandFunction(float(cfg.report.band))
    return calibration.band_function()


def cmd_montecarlo(cfg: ExperimentConfig, out_dir: Path, runs: int) -> int:
    ens = engine.run_ensemble(cfg.sim, runs, keep_traces=False, workers=cfg.report.workers)
    t = ens.t
    band = _band(cfg)
    rep = analysis.certify_nsps(np.abs(ens.track_err), t, cfg.report.l0, band, ens.diverged_at, min_runs=1)
    xi = engine.noise_paths(ens.setup, ens.runs)
    analysis.noise_diagnostics(rep, xi, ens.setup.controller.params)
    metrics = analysis.consensus_metrics(ens.track_err, t)
    stat = analysis.run_statistic(ens.track_err, t)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "ensemble_runs.csv", [
        {"run": r, "diverged_at": "" if d is None else d, "worst_mean_err_final": float(s),
         **{f"mean_err_{i + 1}": float(v) for i, v in enumerate(pm)},
         "theta_norm_max": float(ens.theta_norm[k].max())}
        for k, (r, d, s, pm) in enumerate(zip(ens.runs, ens.diverged_at, stat, metrics["per_run_mean"]))
    ])
    step = max(1, t.size // 2000)
    _write_csv(out_dir / "nsps.csv", [
        {"t": float(t[k]), "band": float(band(t[k])), "fraction_inside": float(rep.fraction_inside[k])}
        for k in range(0, t.size, step)
    ])
    _write_csv(out_dir / "agents.csv", [
        {"agent": i + 1, "mean_err_final": float(metrics["mean"][i]), "max_err_final": float(metrics["max"][i]),
         "xi_star": float(rep.xi_star[i]), "l_a_xi_star": float(rep.varpi_noise[i])}
        for i in range(len(metrics["mean"]))
    ])
    mean_band = calibration.MEAN_BAND
    below = float(np.mean(stat <= mean_band)) if mean_band is not None else float("nan")
    lines = [
        f"runs: {runs}, diverged: {sum(d is not None for d in ens.diverged_at)}",
        f"min fraction inside band: {rep.min_fraction:.3f} (need >= {1 - cfg.report.l0:.3f}) -> "
        f"{'PASS' if rep.passed else 'FAIL'}",
        f"fraction of runs with final-window mean error below {mean_band}: {below:.3f}",
        f"c_gamma = {rep.c_gamma:.3f}, l_a = {rep.l_a:.3f}",
    ]
    text = "\n".join(lines)
    (out_dir / "montecarlo.txt").write_text(text + "\n")
    print(text)
    if cfg.report.figures:
        plotting.plot_ensemble(t, ens.on.astype(int), np.abs(ens.track_err), band(t), rep.fraction_inside,
                               out_dir / "ensemble.png")
    if any(d is not None for d in ens.diverged_at):
        return EXIT_DIVERGED
    return EXIT_OK if rep.passed else EXIT_UNCERTIFIED


def read_trace_csv(path: Path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        data = np.zeros((0, len(header)))
    return {name: data[:, k] for k, name in enumerate(header)}


def cmd_report(cfg: ExperimentConfig, out_dir: Path, trace_path: Path) -> int:
    cols = read_trace_csv(trace_path)
    N, n = cfg.sim.graph.n_followers, cfg.sim.plant.order
    t, mode = cols["t"], cols["mode"].astype(int)
    x = np.stack([[cols[f"x{i}_{q}"] for q in range(1, n + 1)] for i in range(1, N + 1)]).transpose(2, 0, 1)
    eta = np.stack([[cols[f"eta{i}_{q}"] for q in range(1, n + 1)] for i in range(1, N + 1)]).transpose(2, 0, 1)
    lc = cfg.sim.leader
    leader = LeaderRef(lc.amplitude, lc.omega, lc.phase)
    zbar = np.stack([leader.derivative(t, l) for l in range(n)], axis=1)
    out_dir.mkdir(parents=True, exist_ok=True)
    plotting.plot_virtual_tracking(t, mode, eta, zbar, out_dir / "virtual_tracking.png")
    plotting.plot_output_tracking(t, mode, x, cols["z_r"], out_dir / "output_tracking.png")
    plotting.plot_lyapunov(t, mode, cols["V_e"], None, out_dir / "lyapunov.png")
    err = x[:, :, 0] - cols["z_r"][:, None]
    metrics = analysis.consensus_metrics(err[None], t)
    rows = [{"agent": i + 1, "mean_err_final": float(metrics["mean"][i]), "max_err_final": float(metrics["max"][i])}
            for i in range(N)]
    _write_csv(out_dir / "report.csv", rows)
    for r in rows:
        print(f"agent {r['agent']}: mean |z - z_r| = {r['mean_err_final']:.4f}, max = {r['max_err_final']:.4f}")
    return EXIT_OK


def resolve_config(name):
    if name == "paper":
        return Path(__file__).with_name("configs") / "paper.yaml"
    return name


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="itconsensus", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("design", "certify-schedule", "simulate", "montecarlo", "report"):
        s = sub.add_parser(name)
        s.add_argument("config", nargs="?",
                       help="YAML experiment file, or 'paper' for the bundled published setup "
                            "(default: built-in defaults with the Riccati solver)")
        s.add_argument("--override", "-o", action="append", default=[], metavar="KEY=VALUE",
                       help="e.g. --override sim.horizon=5")
        s.add_argument("--seed", type=int)
        s.add_argument("--out-dir")
        s.add_argument("--runs", type=int)
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "report":
            s.add_argument("--trace", required=True, help="trace CSV written by 'simulate'")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"sim.seed={args.seed}")
    if args.out_dir is not None:
        overrides.append(f"report.out_dir={args.out_dir}")
    if args.runs is not None:
        overrides.append(f"report.runs={args.runs}")
    try:
        cfg = load(resolve_config(args.config), overrides)
        out_dir = Path(cfg.report.out_dir)
        if args.command == "design":
            return cmd_design(cfg, out_dir)
        if args.command == "certify-schedule":
            return cmd_certify_schedule(cfg, out_dir)
        if args.command == "simulate":
            return cmd_simulate(cfg, out_dir)
        if args.command == "montecarlo":
            return cmd_montecarlo(cfg, out_dir, int(cfg.report.runs))
        return cmd_report(cfg, out_dir, Path(args.trace))
    except (ConfigError, GraphError, ControllerError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (DesignError, ScheduleError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
