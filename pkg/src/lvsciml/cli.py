"""``lvsciml`` command line: generate data, train, forecast, run sweeps, dump config.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
Primary outputs are byte-stable for a fixed config; timestamps only appear in
the ``*.meta.json`` sidecars.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import svgplot
from .config import RunConfig
from .dynamics import DomainError, Trajectory, add_noise, format_float, generate_truth
from .experiments import (
    KINDS,
    SplitSpec,
    breakdown_sweep,
    forecast_extended,
    hyperparam_sweep,
    noise_study,
    rmse,
    split_train_forecast,
)
from .models import model_checkpoint, model_from_checkpoint
from .optim import LossTrace, run_schedule
from .sensitivity import SENTINEL_LOSS
from .solvers import IntegrationError, ToleranceSpec

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("lvsciml")


class RuntimeFailure(Exception):
    """Raised by a command to end with exit code 2 after writing what it could."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _package_version() -> str:
    try:
        from importlib.metadata import version

        return version("artifact")
    except Exception:
        return "unknown"


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _write_json(path: Path, doc) -> None:
    _write_text(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _write_meta(path: Path, command: str, cfg: RunConfig, argv, extra=None) -> None:
    doc = {
        "command": command,
        "argv": list(argv),
        "config": {k: list(v) if isinstance(v, tuple) else v for k, v in cfg.values.items()},
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "version": _package_version(),
    }
    doc.update(extra or {})
    _write_json(path, doc)


def _out_dir(cfg) -> Path:
    return Path(cfg["output.dir"])


# ---------------------------------------------------------------- commands


def cmd_generate(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    tol = ToleranceSpec(reltol=cfg["solver.reltol"], abstol=cfg["solver.abstol"])
    truth = generate_truth(cfg.lv_params(), (cfg["data.x0"], cfg["data.y0"]), (0.0, cfg["data.t_end"]),
                           cfg["data.n_points"], tol)
    data = add_noise(truth, cfg["data.sigma"], cfg["data.noise_seed"])
    out.mkdir(parents=True, exist_ok=True)
    truth.to_csv(out / "truth.csv")
    data.to_csv(out / "data.csv")
    _write_meta(out / "data.meta.json", "generate", cfg, args.argv, {
        "params": asdict(cfg.lv_params()),
        "seed": cfg["data.noise_seed"],
        "sigma": cfg["data.sigma"],
    })
    log.info("wrote %s and %s", out / "truth.csv", out / "data.csv")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    data = Trajectory.from_csv(args.data)
    train, _ = split_train_forecast(data, SplitSpec(args.train_fraction, allow_empty_test=True))
    kind = args.model
    budget = cfg["train.budget"]
    setup = cfg.study_setup(budget)
    model = setup.model(kind)
    schedule = cfg.schedule(kind, budget)
    seed = cfg["train.seed"]
    params0 = model.init_params(seed)
    trace = LossTrace()
    prefix = out / kind
    failure = None
    params = params0
    try:
        params, trace = run_schedule(model, params0, train, schedule, cfg["train.substeps"], trace)
    except Exception as exc:  # keep the partial trace on disk
        failure = f"{type(exc).__name__}: {exc}"
    if failure is None and (not math.isfinite(trace.final_loss) or trace.final_loss == SENTINEL_LOSS):
        failure = "training ended on a diverged rollout"
    trace.to_csv(f"{prefix}_trace.csv")
    ckpt = model_checkpoint(model, params, seed)
    ckpt["init"] = [float(v) for v in train.states[0]]
    ckpt["t0"] = float(train.times[0])
    _write_json(Path(f"{prefix}_checkpoint.json"), ckpt)
    summary = {
        "kind": kind,
        "budget": budget,
        "seed": seed,
        "n_train": len(train),
        "train_fraction": args.train_fraction,
        "initial_loss": trace.initial_loss,
        "final_loss": trace.final_loss,
        "loss_decrease_pct": trace.loss_decrease_pct,
        "lbfgs_failed": trace.failed,
        "error": failure or "",
    }
    _write_json(Path(f"{prefix}_summary.json"), summary)
    _write_meta(Path(f"{prefix}_train.meta.json"), "train", cfg, args.argv, {"data": str(args.data)})
    if failure:
        raise RuntimeFailure(failure)
    log.info("%s: loss %.6g -> %.6g (%.2f%% decrease)", kind, trace.initial_loss, trace.final_loss,
             trace.loss_decrease_pct)
    return EXIT_OK


def _match_times(a: np.ndarray, b: np.ndarray):
    """Index pairs (i, j) with a[i] == b[j] up to rounding."""
    j = np.clip(np.searchsorted(b, a), 0, len(b) - 1)
    jm = np.clip(j - 1, 0, len(b) - 1)
    pick = np.where(np.abs(b[jm] - a) < np.abs(b[j] - a), jm, j)
    ok = np.abs(b[pick] - a) <= 1e-9 * max(1.0, float(np.abs(b).max()))
    return np.nonzero(ok)[0], pick[ok]


def cmd_forecast(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    with open(args.checkpoint) as fh:
        doc = json.load(fh)
    model, params = model_from_checkpoint(doc)
    init = doc.get("init") or [cfg["data.x0"], cfg["data.y0"]]
    t_end = cfg["forecast.t_end"]
    report = {"kind": model.kind, "t_end": t_end, "checkpoint": str(args.checkpoint)}
    try:
        pred = forecast_extended(model, params, init, t_end, cfg["forecast.dt"], cfg["train.substeps"])
    except IntegrationError as exc:
        report["error"] = str(exc)
        _write_json(out / "forecast.json", report)
        raise RuntimeFailure(str(exc)) from None
    pred.to_csv(out / "forecast.csv")
    report["n_points"] = len(pred)
    truth = None
    if args.truth:
        truth = Trajectory.from_csv(args.truth)
        i, j = _match_times(pred.times, truth.times)
        if len(i):
            r = rmse(Trajectory(pred.times[i], pred.states[i]), Trajectory(truth.times[j], truth.states[j]))
            report["rmse"] = {"x": r.x, "y": r.y, "total": r.total, "n_overlap": int(len(i))}
    _write_json(out / "forecast.json", report)
    if args.svg:
        series = [("x predicted", pred.times, pred.x), ("y predicted", pred.times, pred.y)]
        if truth is not None:
            series += [("x true", truth.times, truth.x), ("y true", truth.times, truth.y)]
        svg = svgplot.line_chart(series, f"{model.kind} forecast", "t", "population",
                                 dashed=("x true", "y true"))
        svgplot.save(out / "forecast.svg", svg)
    _write_meta(out / "forecast.meta.json", "forecast", cfg, args.argv)
    return EXIT_OK


def _cell_failed(value: float, error: str) -> bool:
    return bool(error) or not math.isfinite(value)


def cmd_sweep(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    budget = cfg["sweep.budget"]
    setup = cfg.study_setup(budget)
    seeds = cfg["sweep.seeds"]
    jobs = args.jobs
    if args.study == "breakdown":
        rep = breakdown_sweep(KINDS, cfg["sweep.fractions"], seeds, setup, jobs)
        rep.to_json(out / "breakdown.json")
        rep.to_csv(out / "breakdown.csv")
        fr = list(rep.fractions)
        series = [(k, fr, [rep.medians[k][format_float(f)] for f in fr]) for k in KINDS]
        series.append(("threshold", fr, [rep.threshold] * len(fr)))
        svgplot.save(out / "breakdown.svg", svgplot.line_chart(
            series, "Forecast RMSE vs training fraction (median over seeds)", "training fraction",
            "forecast RMSE", log_y=True, dashed=("threshold",)))
        failed = [_cell_failed(r.forecast_rmse, r.error) for r in rep.rows]
    elif args.study == "noise":
        rep = noise_study(cfg["sweep.sigmas"], KINDS, seeds, setup, cfg["sweep.noise_fraction"],
                          cfg["sweep.noise_seed_base"], jobs)
        rep.to_json(out / "noise.json")
        rep.to_csv(out / "noise.csv")
        sg = list(rep.sigmas)
        series = [(k, sg, [rep.median(k, s) for s in sg]) for k in KINDS]
        svgplot.save(out / "noise.svg", svgplot.line_chart(
            series, "Forecast RMSE vs noise level (median over seeds)", "sigma", "forecast RMSE", log_y=True))
        failed = [_cell_failed(r.rmse_total, r.error) for r in rep.rows]
    else:
        failed = []
        axes = {"hidden_units": cfg["sweep.hidden_units"], "activation": cfg["sweep.activations"],
                "step_size": cfg["sweep.step_sizes"]}
        for axis, values in axes.items():
            series = []
            for k in KINDS:
                rep = hyperparam_sweep(axis, values, k, cfg["sweep.hpo_seeds"], setup, jobs)
                rep.to_json(out / f"hpo_{k}_{axis}.json")
                rep.to_csv(out / f"hpo_{k}_{axis}.csv")
                xs = list(range(len(values))) if axis == "activation" else [float(v) for v in values]
                if axis == "step_size":
                    xs = [math.log10(v) for v in xs]
                series.append((k, xs, [float(np.median(rep.losses(v))) for v in values]))
                failed += [_cell_failed(r.final_loss, r.error) for r in rep.rows]
            if axis == "activation":
                xlabel = "activation (" + ", ".join(values) + ")"
            else:
                xlabel = {"hidden_units": "hidden units", "step_size": "log10 step size"}[axis]
            svgplot.save(out / f"hpo_{axis}.svg", svgplot.line_chart(
                series, f"Final loss vs {axis.replace('_', ' ')}", xlabel, "final loss", log_y=True))
    _write_meta(out / f"{args.study}.meta.json", "sweep", cfg, args.argv, {"jobs": jobs})
    n_failed = sum(failed)
    if failed and n_failed == len(failed):
        raise RuntimeFailure("every sweep cell failed")
    if n_failed:
        log.warning("%d of %d sweep cells failed", n_failed, len(failed))
    return EXIT_OK


def cmd_dump_config(cfg: RunConfig, args) -> int:
    text = cfg.dump()
    if args.output:
        _write_text(Path(args.output), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--config", default=argparse.SUPPRESS, help="key = value configuration file")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="sets train.seed and data.noise_seed")
    g.add_argument("--out", default=argparse.SUPPRESS, help="output directory (output.dir)")
    g.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS)
    g.add_argument("--dump-config", metavar="PATH", default=argparse.SUPPRESS,
                   help="also write the effective configuration to PATH")

    parser = _Parser(prog="lvsciml", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", parents=[common], help="write ground truth and (noisy) data CSVs")
    p.add_argument("--sigma", type=float, help="noise std (data.sigma)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", parents=[common], help="train a model on a data CSV")
    p.add_argument("--model", choices=KINDS, required=True)
    p.add_argument("--data", required=True, help="CSV with header t,x,y")
    p.add_argument("--train-fraction", type=float, default=1.0)
    p.add_argument("--budget", choices=("desk", "paper"), help="train.budget")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("forecast", parents=[common], help="roll a checkpoint out to --t-end")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--t-end", type=float, help="forecast.t_end")
    p.add_argument("--truth", help="truth CSV for RMSE on the overlapping times")
    p.add_argument("--svg", action="store_true", help="also write forecast.svg")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("sweep", parents=[common], help="breakdown, noise or hyperparameter study")
    p.add_argument("--study", choices=("breakdown", "noise", "hpo"), required=True)
    p.add_argument("--budget", choices=("desk", "paper"), help="sweep.budget")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("dump-config", parents=[common], help="print the effective configuration")
    p.add_argument("--output", help="write to this file instead of stdout")
    p.set_defaults(func=cmd_dump_config)
    return parser


def resolve_config(args) -> RunConfig:
    """Config file, then command-line overrides, in that order."""
    path = getattr(args, "config", None)
    cfg = RunConfig.load(path) if path else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.set("train.seed", args.seed)
        cfg.set("data.noise_seed", args.seed)
    if getattr(args, "out", None) is not None:
        cfg.set("output.dir", args.out)
    if getattr(args, "sigma", None) is not None:
        cfg.set("data.sigma", args.sigma)
    if getattr(args, "t_end", None) is not None:
        cfg.set("forecast.t_end", args.t_end)
    if getattr(args, "budget", None) is not None:
        cfg.set("train.budget" if args.command == "train" else "sweep.budget", args.budget)
    return cfg


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if getattr(args, "jobs", 1) < 1:
            raise DomainError("--jobs must be >= 1")
        if getattr(args, "train_fraction", 1.0) is not None and not 0 < getattr(args, "train_fraction", 1.0) <= 1:
            raise DomainError("--train-fraction must lie in (0, 1]")
    except (DomainError, OSError) as exc:
        print(f"lvsciml: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if getattr(args, "dump_config", None):
            _write_text(Path(args.dump_config), cfg.dump())
        return args.func(cfg, args)
    except RuntimeFailure as exc:
        print(f"lvsciml: {args.command} failed: {exc}", file=sys.stderr)
    except (DomainError, OSError, IntegrationError, ValueError, KeyError) as exc:
        print(f"lvsciml: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
    return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
