"""Command-line entry point and experiment orchestration.

Subcommands mirror the pipeline stages: ``collect`` runs an experiment and
writes the dataset, ``synthesize`` solves the program on a stored dataset,
``evaluate`` grades a stored gain in closed loop, and ``reproduce`` chains
everything for the two bundled benchmark scenarios and checks the results
against their acceptance thresholds.

Exit codes: 0 success, 2 configuration error, 3 infeasible program,
4 numerical failure, 5 acceptance failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import replace

import numpy as np

from . import datamat, synth
from .config import RunConfig, bundled_config_path, dump_config, load_config
from .errors import ConfigError, DdregError, Infeasible, NotSettled, NumericalFailure
from .evalrep import EvaluationReport, evaluate, sweep_ell
from .plant import Dataset, augmented_matrices, run_experiment, simulate_closed_loop

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4
EXIT_ACCEPTANCE = 5

ROBOT_ARM_THRESHOLDS = {0: 2.0, 1: 0.5, 2: 1e-2, 3: 1e-2, 4: 1e-3}
ROLLING_MILL_LIMSUP = 1e-3
ROLLING_MILL_SYLVESTER = 1e-6


# ---------------------------------------------------------------------------
# file helpers (all writes atomic: temp file + rename)
# ---------------------------------------------------------------------------


def _atomic_write(path: str, text: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def write_matrix_csv(path: str, M: np.ndarray, header: list[str] | None = None):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    lines = []
    if header:
        lines.append(",".join(header))
    for row in M:
        lines.append(",".join(_fmt(v) for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def read_matrix_csv(path: str, expect_header: bool = False):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    header = None
    if expect_header or (lines and not _is_number(lines[0].split(",")[0])):
        header = lines[0].split(",")
        lines = lines[1:]
    return np.array([[float(v) for v in ln.split(",")] for ln in lines]), header


def _is_number(tok: str) -> bool:
    try:
        float(tok)
        return True
    except ValueError:
        return False


def write_dataset_csv(path: str, ds: Dataset, cfg: RunConfig):
    n, m, p = ds.x.shape[0], ds.u.shape[0], ds.e.shape[0]
    neta = ds.eta.shape[0]
    header = (
        ["t"]
        + [f"x{i + 1}" for i in range(n)]
        + [f"u{i + 1}" for i in range(m)]
        + [f"e{i + 1}" for i in range(p)]
        + [f"dx{i + 1}" for i in range(n)]
        + [f"eta{i + 1}" for i in range(neta)]
    )
    table = np.vstack([ds.times[None, :], ds.x, ds.u, ds.e, ds.dx, ds.eta]).T
    write_matrix_csv(path, table, header)
    meta = dict(ds.meta)
    meta["config_hash"] = cfg.config_hash()
    meta["T"] = ds.T
    _atomic_write(path + ".meta.json", json.dumps(meta, indent=2) + "\n")


def read_dataset_csv(path: str, cfg: RunConfig, n_eta: int) -> Dataset:
    table, header = read_matrix_csv(path, expect_header=True)
    n, m, p = cfg.plant.n, cfg.plant.m, cfg.plant.p
    expected = 1 + 2 * n + m + p + n_eta
    if table.shape[1] != expected:
        raise ConfigError(
            f"{path}: dataset has {table.shape[1]} columns, the configuration implies {expected}"
        )
    cols = table.T
    i = 1
    x = cols[i : i + n]; i += n
    u = cols[i : i + m]; i += m
    e = cols[i : i + p]; i += p
    dx = cols[i : i + n]; i += n
    eta = cols[i : i + n_eta]
    meta = {}
    try:
        with open(path + ".meta.json") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        pass
    return Dataset(cols[0], x, u, e, dx, eta, np.zeros((cfg.exo.dim, 0)), meta)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    raise TypeError(f"not serializable: {type(obj)}")


# ---------------------------------------------------------------------------
# report writers
# ---------------------------------------------------------------------------


def synthesis_report_text(result, rank, annihilation: float) -> str:
    lines = [
        f"status: {result.status}",
        f"mode: {result.mode}",
        f"solver: {result.solver_name}",
        f"solver_status: {result.solver_status}",
        f"solve_time_s: {result.solve_time:.3f}",
    ]
    if result.alpha is not None:
        lines.append(f"alpha: {_fmt(result.alpha)}")
    lines.append(f"K: {' '.join(_fmt(v) for v in result.K.ravel())}")
    for key, val in sorted(result.residuals.items()):
        lines.append(f"residual.{key}: {val:.3e}")
    lines.append(f"residual.annihilation_posthoc: {annihilation:.3e}")
    lines.append(f"rank.stacked: {rank.rank}/{rank.rows}")
    lines.append(f"rank.full_row_rank: {rank.full_row_rank}")
    lines.append(f"rank.z0m: {rank.z0m_rank}/{rank.z0m_rows}")
    return "\n".join(lines) + "\n"


def evaluation_report_text(report: EvaluationReport) -> str:
    lines = [
        f"period: {_fmt(report.period)}",
        f"ell_checked: {report.ell_checked}",
        f"settled: {report.settled}",
        f"limsup_e: {' '.join(_fmt(v) for v in report.limsup_e)}",
        f"l2_mean_square: {' '.join(_fmt(v) for v in report.l2_mean_square)}",
        f"bound_value: {' '.join(_fmt(v) for v in report.bound_value)}",
        f"bound_ok: {report.bound_ok}",
        f"nulling_ok: {report.nulling_ok}",
        f"nulling_worst: {report.nulling_worst:.3e}",
    ]
    if report.contraction_margin is not None:
        lines.append(f"contraction_margin: {_fmt(report.contraction_margin)}")
    for run in report.runs:
        lines.append(
            f"run seed={run.seed}: limsup={run.limsup_e.max():.6e} "
            f"l2ms={run.l2_mean_square.max():.6e} bound={run.bound_value.max():.6e} "
            f"settled={run.settled} periods={run.periods} nulling_ok={run.nulling_ok}"
        )
    return "\n".join(lines) + "\n"


def write_runs_csv(path: str, report: EvaluationReport):
    header = ["seed", "limsup_e", "l2_mean_square", "bound_value", "e_dot_max",
              "nulling_ok", "nulling_worst", "settled", "periods", "settle_residual"]
    rows = []
    for r in report.runs:
        rows.append(
            [r.seed, r.limsup_e.max(), r.l2_mean_square.max(), r.bound_value.max(),
             r.e_dot_max.max(), int(r.nulling_ok), r.nulling_worst, int(r.settled),
             r.periods, r.settle_residual]
        )
    write_matrix_csv(path, np.array(rows, dtype=float), header)


def write_spectrum_csv(path: str, report: EvaluationReport):
    spec = report.spectrum
    ks = np.arange(spec.k_max + 1)
    write_matrix_csv(path, np.column_stack([ks, spec.a, spec.b]), ["k", "a_k", "b_k"])


def report_to_dict(report: EvaluationReport) -> dict:
    return {
        "period": report.period,
        "ell_checked": report.ell_checked,
        "settled": report.settled,
        "limsup_e": report.limsup_e,
        "l2_mean_square": report.l2_mean_square,
        "bound_value": report.bound_value,
        "bound_ok": report.bound_ok,
        "nulling_ok": report.nulling_ok,
        "nulling_worst": report.nulling_worst,
        "contraction_margin": report.contraction_margin,
        "runs": [
            {
                "seed": r.seed,
                "limsup_e": r.limsup_e,
                "l2_mean_square": r.l2_mean_square,
                "bound_value": r.bound_value,
                "nulling_ok": r.nulling_ok,
                "settled": r.settled,
                "periods": r.periods,
            }
            for r in report.runs
        ],
    }


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    if getattr(args, "seed", None) is not None:
        cfg.experiment = replace(cfg.experiment, seed=args.seed)
    return cfg


def cmd_collect(args) -> int:
    cfg = _load(args)
    im = cfg.build_internal_model()
    ds = run_experiment(
        cfg.plant, cfg.exo, im,
        amplitude=cfg.experiment.amplitude,
        hold=cfg.experiment.hold,
        sample_period=cfg.experiment.sample_period,
        T=cfg.experiment.samples,
        step=cfg.experiment.step,
        seed=cfg.experiment.seed,
    )
    out = os.path.join(cfg.output_dir, "dataset.csv")
    write_dataset_csv(out, ds, cfg)
    print(f"wrote {ds.T} samples to {out}")
    return EXIT_OK


def cmd_synthesize(args) -> int:
    cfg = _load(args)
    mode = args.mode or cfg.mode
    im = cfg.build_internal_model()
    ds = read_dataset_csv(args.dataset, cfg, im.n_eta)
    dm = datamat.assemble(ds, cfg.plant.basis, im, cfg.exo.spec, mode)
    rank = datamat.rank_report(dm)
    if not rank.full_row_rank:
        print(f"warning: stacked data matrix rank {rank.rank} < {rank.rows}", file=sys.stderr)
    if mode == "nonlinear":
        problem = synth.NonlinearSdpProblem(
            dm,
            cfg.synthesis.R_Q if cfg.synthesis.R_Q is not None else np.zeros((cfg.plant.n, 0)),
            eps_pd=cfg.synthesis.eps_pd,
            alpha_min=cfg.synthesis.alpha_min,
            objective=cfg.synthesis.objective,
            kappa=cfg.synthesis.kappa,
            solver=cfg.synthesis.solver,
            polish=cfg.synthesis.polish,
        )
        result = synth.solve_nonlinear(problem)
    else:
        result = synth.solve_linear(
            synth.LinearSdpProblem(dm, eps=cfg.synthesis.eps, solver=cfg.synthesis.solver,
                                   polish=cfg.synthesis.polish)
        )
    annih = datamat.verify_annihilation(dm, synth.gain_operator(result))
    out = cfg.output_dir
    write_matrix_csv(os.path.join(out, "gain.csv"), result.K)
    for name, M in result.certificate.items():
        if isinstance(M, np.ndarray):
            write_matrix_csv(os.path.join(out, f"certificate_{name}.csv"), M)
    text = synthesis_report_text(result, rank, annih)
    _atomic_write(os.path.join(out, "synthesis.txt"), text)
    if args.json_report:
        payload = {
            "status": result.status,
            "mode": result.mode,
            "solver": result.solver_name,
            "solver_status": result.solver_status,
            "solve_time_s": result.solve_time,
            "alpha": result.alpha,
            "K": result.K,
            "residuals": result.residuals,
            "annihilation_posthoc": annih,
            "rank": {"stacked": rank.rank, "rows": rank.rows,
                     "full_row_rank": rank.full_row_rank},
        }
        _atomic_write(os.path.join(out, "synthesis.json"),
                      json.dumps(payload, default=_json_default, indent=2) + "\n")
    print(text, end="")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load(args)
    mode = args.mode or cfg.mode
    im = cfg.build_internal_model()
    K, _ = read_matrix_csv(args.gain)
    report = evaluate(cfg.plant, cfg.exo, im, K, cfg.evaluation, mode)
    out = cfg.output_dir
    _write_evaluation(out, report, args)
    if args.trajectory:
        rng = np.random.default_rng(cfg.evaluation.seed)
        x0 = rng.uniform(-cfg.evaluation.init_amplitude, cfg.evaluation.init_amplitude,
                         cfg.plant.n)
        horizon = 10.0 * cfg.exo.period
        traj = simulate_closed_loop(cfg.plant, cfg.exo, im, K, x0,
                                    horizon=horizon, step=cfg.evaluation.step,
                                    mode=mode, record_every=10)
        n, neta, p, m = cfg.plant.n, im.n_eta, cfg.plant.p, cfg.plant.m
        header = (["t"] + [f"x{i + 1}" for i in range(n)]
                  + [f"eta{i + 1}" for i in range(neta)]
                  + [f"e{i + 1}" for i in range(p)] + [f"u{i + 1}" for i in range(m)])
        table = np.vstack([traj["t"][None, :], traj["x"], traj["eta"], traj["e"], traj["u"]]).T
        write_matrix_csv(os.path.join(out, "trajectory.csv"), table, header)
    print(evaluation_report_text(report), end="")
    return EXIT_OK


def _write_evaluation(out: str, report: EvaluationReport, args, prefix: str = ""):
    _atomic_write(os.path.join(out, f"{prefix}evaluation.txt"), evaluation_report_text(report))
    write_runs_csv(os.path.join(out, f"{prefix}runs.csv"), report)
    write_spectrum_csv(os.path.join(out, f"{prefix}spectrum.csv"), report)
    if getattr(args, "json_report", False):
        _atomic_write(
            os.path.join(out, f"{prefix}evaluation.json"),
            json.dumps(report_to_dict(report), default=_json_default, indent=2) + "\n",
        )
    if not getattr(args, "no_plots", False):
        from . import plots

        plots.plot_convergence(report, os.path.join(out, f"{prefix}convergence.png"))
        plots.plot_spectrum(report, os.path.join(out, f"{prefix}spectrum.png"))
        plots.plot_waveform(report, os.path.join(out, f"{prefix}waveform.png"))


def cmd_reproduce(args) -> int:
    path = bundled_config_path(args.example)
    cfg = load_config(str(path))
    if args.out:
        cfg.output_dir = args.out
    if args.seed is not None:
        cfg.experiment = replace(cfg.experiment, seed=args.seed)
    if args.example == "robot-arm":
        return _reproduce_robot_arm(cfg, args)
    return _reproduce_rolling_mill(cfg, args)


def _reproduce_robot_arm(cfg: RunConfig, args) -> int:
    ells = [int(s) for s in args.ell.split(",")] if args.ell else [0, 1, 2, 3, 4]
    rows = sweep_ell(cfg, ells, jobs=args.jobs)
    out = cfg.output_dir
    header = ["ell", "status_feasible", "limsup_e", "l2_mean_square", "bound_value",
              "solve_time_s", "alpha", "contraction_margin", "nulling_ok", "settled"]
    table = [
        [r.ell, int(r.status == "feasible"), r.limsup_e, r.l2_mean_square, r.bound_value,
         r.solve_time, r.alpha, r.contraction_margin, int(r.nulling_ok), int(r.settled)]
        for r in rows
    ]
    write_matrix_csv(os.path.join(out, "sweep.csv"), np.array(table, dtype=float), header)
    lines, failures = [], []
    for r in rows:
        thr = ROBOT_ARM_THRESHOLDS.get(r.ell)
        if r.status != "feasible":
            verdict = "FAIL"
            failures.append(f"ell={r.ell}: {r.status}: {r.message}")
            detail = r.message
        else:
            ok = thr is None or r.limsup_e <= thr
            ok = ok and r.settled and r.nulling_ok and r.l2_mean_square <= r.bound_value
            verdict = "pass" if ok else "FAIL"
            if not ok:
                failures.append(f"ell={r.ell}: limsup={r.limsup_e:.3e} threshold={thr}")
            detail = (f"limsup={r.limsup_e:.6e} bound={r.bound_value:.3e} "
                      f"margin={r.contraction_margin:.3e} settled={r.settled} "
                      f"nulling_ok={r.nulling_ok}")
        thr_s = f"{thr:g}" if thr is not None else "-"
        lines.append(f"ell={r.ell} [{verdict}] threshold={thr_s} {detail}")
    text = "\n".join(lines) + "\n"
    _atomic_write(os.path.join(out, "reproduce.txt"), text)
    if args.json_report:
        payload = [
            {"ell": r.ell, "status": r.status, "limsup_e": r.limsup_e,
             "l2_mean_square": r.l2_mean_square, "bound_value": r.bound_value,
             "threshold": ROBOT_ARM_THRESHOLDS.get(r.ell), "nulling_ok": r.nulling_ok,
             "settled": r.settled, "message": r.message}
            for r in rows
        ]
        _atomic_write(os.path.join(out, "reproduce.json"),
                      json.dumps(payload, default=_json_default, indent=2) + "\n")
    if not args.no_plots:
        from . import plots

        plots.plot_sweep(rows, os.path.join(out, "sweep.png"))
        for r in rows:
            if r.report is not None:
                plots.plot_convergence(r.report, os.path.join(out, f"convergence_ell{r.ell}.png"),
                                       title=f"ell = {r.ell}")
                plots.plot_spectrum(r.report, os.path.join(out, f"spectrum_ell{r.ell}.png"),
                                    title=f"ell = {r.ell}")
    print(text, end="")
    if failures:
        print("acceptance failures:", *failures, sep="\n  ", file=sys.stderr)
        return EXIT_ACCEPTANCE
    return EXIT_OK


def _reproduce_rolling_mill(cfg: RunConfig, args) -> int:
    out = cfg.output_dir
    im = cfg.build_internal_model()
    ds = run_experiment(
        cfg.plant, cfg.exo, im,
        amplitude=cfg.experiment.amplitude, hold=cfg.experiment.hold,
        sample_period=cfg.experiment.sample_period, T=cfg.experiment.samples,
        step=cfg.experiment.step, seed=cfg.experiment.seed,
    )
    write_dataset_csv(os.path.join(out, "dataset.csv"), ds, cfg)
    dm = datamat.assemble(ds, cfg.plant.basis, im, cfg.exo.spec, "linear")
    result = synth.solve_linear(synth.LinearSdpProblem(dm, eps=cfg.synthesis.eps,
                                                       solver=cfg.synthesis.solver))
    _, _, Pcal = augmented_matrices(cfg.plant, im, "linear")
    sylv = synth.sylvester_verify(result, dm, Pcal, cfg.plant.C_e, cfg.plant.Q_e, cfg.exo.S)
    eigs = np.linalg.eigvals(dm.Z1 @ synth.gain_operator(result))
    hurwitz = bool(np.all(eigs.real < 0))
    margin = synth.contractivity_margin(result, dm)
    report = evaluate(cfg.plant, cfg.exo, im, result.K, cfg.evaluation, "linear",
                      contraction=margin)
    limsup = float(report.limsup_e.max())
    checks = [
        ("limsup_e < 1e-3", limsup < ROLLING_MILL_LIMSUP, f"limsup_e={limsup:.3e}"),
        ("sylvester residual < 1e-6", sylv.residual < ROLLING_MILL_SYLVESTER,
         f"residual={sylv.residual:.3e}"),
        ("closed loop Hurwitz", hurwitz, f"max Re(eig)={eigs.real.max():.3e}"),
    ]
    lines = [f"K: {' '.join(_fmt(v) for v in result.K.ravel())}"]
    for name, ok, detail in checks:
        lines.append(f"[{'pass' if ok else 'FAIL'}] {name}: {detail}")
    text = "\n".join(lines) + "\n"
    _atomic_write(os.path.join(out, "reproduce.txt"), text)
    write_matrix_csv(os.path.join(out, "gain.csv"), result.K)
    _write_evaluation(out, report, args)
    if args.json_report:
        payload = {
            "K": result.K,
            "limsup_e": limsup,
            "sylvester_residual": sylv.residual,
            "closed_loop_eigs_real": eigs.real,
            "checks": {name: bool(ok) for name, ok, _ in checks},
        }
        _atomic_write(os.path.join(out, "reproduce.json"),
                      json.dumps(payload, default=_json_default, indent=2) + "\n")
    print(text, end="")
    if not all(ok for _, ok, _ in checks):
        return EXIT_ACCEPTANCE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ddreg",
        description="Data-driven output-regulation controller synthesis and evaluation",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="run an experiment and write the dataset CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (default: config output_dir)")
    p.add_argument("--seed", type=int, help="experiment seed override")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("synthesize", help="solve the synthesis program on a dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out")
    p.add_argument("--mode", choices=["nonlinear", "linear"])
    p.add_argument("--json-report", action="store_true")
    p.set_defaults(func=cmd_synthesize, seed=None)

    p = sub.add_parser("evaluate", help="grade a synthesized gain in closed loop")
    p.add_argument("--config", required=True)
    p.add_argument("--gain", required=True)
    p.add_argument("--out")
    p.add_argument("--mode", choices=["nonlinear", "linear"])
    p.add_argument("--json-report", action="store_true")
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("--trajectory", action="store_true",
                   help="also write a sample closed-loop trajectory CSV")
    p.set_defaults(func=cmd_evaluate, seed=None)

    p = sub.add_parser("reproduce", help="run a bundled benchmark end to end")
    p.add_argument("example", choices=["robot-arm", "rolling-mill"])
    p.add_argument("--out")
    p.add_argument("--seed", type=int, help="experiment seed override")
    p.add_argument("--ell", help="comma-separated harmonic counts for the sweep")
    p.add_argument("--jobs", type=int, default=1, help="parallel sweep workers")
    p.add_argument("--json-report", action="store_true")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_reproduce)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as ex:
        print(f"config error: {ex}", file=sys.stderr)
        return EXIT_CONFIG
    except Infeasible as ex:
        print(f"infeasible: {ex}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NumericalFailure, NotSettled) as ex:
        print(f"numerical failure: {ex}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FileNotFoundError, ValueError, DdregError) as ex:
        print(f"error: {ex}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
