"""Command-line interface: ``h2xpinn <subcommand> [options]``.

Every subcommand reads the run configuration (``--config`` or
``$H2XPINN_CONFIG``) and applies flag overrides on top. Results go to
``--output-dir`` as plain CSV/JSON. Failures print one JSON object
``{"error": ..., "message": ..., "details": ...}`` on stderr and exit 1;
usage errors exit 2.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import _kernels, physics, synthetic
from .config import ConfigError, load_config
from .data import DataError, augment, load_csv, normalize, stratified_split, write_csv
from .inference import (FusionConfig, bench, extrapolation_study, load_predictor, predict,
                        write_rows_csv)
from .network import save_checkpoint
from .training import (CvPlan, TrainConfig, TrainingDiverged, cross_validate, summarize_cv, train,
                       write_cv_csv)
from .uncertainty import calibration, save_ensemble, sensitivity, train_ensemble

log = logging.getLogger("h2xpinn")

# File names inside an output directory; ``report`` reads the same names back.
CHECKPOINT = "model.ckpt.json"
TRAIN_REPORT = "train_report.json"
CV_RESULTS = "cv_results.csv"
CV_SUMMARY = "cv_summary.json"
ENSEMBLE_DIR = "ensemble"
CALIBRATION = "calibration.json"
SENSITIVITY = "sensitivity.json"
EXTRAPOLATION = "extrapolation.csv"
EXTRAPOLATION_CONTEXT = "extrapolation_context.json"
BENCH = "bench.json"
PREDICTIONS = "predictions.csv"
AUGMENTED = "augmented.csv"
AUGMENT_STATS = "augment_stats.json"
CALIBRATED_PHYSICS = "physics_calibrated.json"


class CliError(Exception):
    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = details


def _dump_json(obj, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    return path


# ----------------------------------------------------------------- settings

def _settings(args):
    """Config file plus flag overrides, as a ``RunConfig``."""
    cfg = load_config(args.config)
    train_over = {}
    if getattr(args, "beta", None) is not None:
        train_over["physics_weight"] = args.beta
    if getattr(args, "seed", None) is not None:
        train_over["base_seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        train_over["max_epochs"] = args.epochs
    if train_over:
        cfg = replace(cfg, train=TrainConfig.from_dict({**cfg.train.to_dict(), **train_over}))
    if getattr(args, "physics", None):
        cfg = replace(cfg, physics=physics.PhysicsParams.load(args.physics))
    return cfg


def _out(args):
    path = Path(args.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_labelled(path):
    if path is None:
        raise CliError("--input is required")
    return load_csv(path)


def _split(ds, cfg):
    train_ds, val_ds, test_ds = stratified_split(ds, cfg.split)
    return train_ds, val_ds, test_ds


# ------------------------------------------------------------- subcommands

def cmd_synthesize(args):
    cfg = _settings(args)
    seed = cfg.train.base_seed if args.seed is None else args.seed
    if args.design == "series":
        ds = synthetic.oracle_series_design(args.series, args.points_per_series, seed=seed,
                                            params=cfg.physics, noise_std=args.noise)
    else:
        ds = synthetic.oracle_dataset(args.n, seed=seed, params=cfg.physics, noise_std=args.noise)
    path = Path(args.output) if args.output else _out(args) / "synthetic.csv"
    write_csv(ds, path)
    return {"written": str(path), "records": len(ds)}


def cmd_augment(args):
    cfg = _settings(args)
    ds = _load_labelled(args.input)
    out_ds, stats = augment(ds, cfg.augment, cfg.physics, return_stats=True)
    out = _out(args)
    write_csv(out_ds, out / AUGMENTED)
    summary = {"input_records": len(ds), "output_records": len(out_ds), "series": stats.series,
               "candidates": stats.candidates, "accepted": stats.accepted, "rejected": stats.rejected}
    _dump_json(summary, out / AUGMENT_STATS)
    return summary


def cmd_calibrate(args):
    cfg = _settings(args)
    train_ds, _, _ = _split(_load_labelled(args.input), cfg)
    fitted = physics.calibrate_solubility(train_ds.features(), train_ds.labels(), cfg.physics)
    path = _dump_json({"physics": fitted.to_dict()}, _out(args) / CALIBRATED_PHYSICS)
    return {"written": str(path), "solubility_cathode": fitted.solubility_cathode}


def _prepare_training(args, cfg):
    train_ds, val_ds, test_ds = _split(_load_labelled(args.input), cfg)
    if args.augment:
        train_ds = augment(train_ds, cfg.augment, cfg.physics)
    return normalize(train_ds), val_ds, test_ds


def cmd_train(args):
    cfg = _settings(args)
    train_ds, val_ds, test_ds = _prepare_training(args, cfg)
    model, report = train(train_ds, val_ds, cfg.train, params=cfg.physics, test_ds=test_ds)
    out = _out(args)
    meta = {"seed": report.seed, "beta": cfg.train.physics_weight, "stop_epoch": report.stop_epoch,
            "best_epoch": report.best_epoch}
    save_checkpoint(out / CHECKPOINT, model, train_ds.normalization_stats, meta)
    report.to_json(out / TRAIN_REPORT)
    return {"checkpoint": str(out / CHECKPOINT), "report": str(out / TRAIN_REPORT),
            "stop_epoch": report.stop_epoch, "test_metrics": report.test_metrics}


def cmd_crossval(args):
    cfg = _settings(args)
    ds = _load_labelled(args.input)
    plan = CvPlan(folds=args.folds or cfg.crossval.folds, repetitions=args.reps or cfg.crossval.repetitions,
                  base_seed=args.seed if args.seed is not None else cfg.crossval.base_seed)
    betas = [float(b) for b in args.betas.split(",")] if args.betas else None
    rows = cross_validate(ds, cfg.train, plan, betas, cfg.physics, jobs=args.jobs)
    out = _out(args)
    write_cv_csv(rows, out / CV_RESULTS)
    summary = summarize_cv(rows)
    _dump_json(summary, out / CV_SUMMARY)
    return {"runs": len(rows), "csv": str(out / CV_RESULTS), "summary": summary}


def cmd_ensemble(args):
    cfg = _settings(args)
    train_ds, val_ds, test_ds = _prepare_training(args, cfg)
    members = args.members or cfg.ensemble.members
    ens = train_ensemble(train_ds, val_ds, cfg.train, members, cfg.physics, jobs=args.jobs)
    out = _out(args)
    save_ensemble(out / ENSEMBLE_DIR, ens, {"beta": cfg.train.physics_weight, "base_seed": cfg.train.base_seed})
    summary = {"members": len(ens), "excluded_seeds": ens.excluded}
    if len(test_ds):
        cov = calibration(ens, test_ds)
        _dump_json({"partition": "test", "n": len(test_ds), "coverage": {str(k): v for k, v in cov.items()}},
                   out / CALIBRATION)
        _dump_json(sensitivity(ens, test_ds.features()), out / SENSITIVITY)
        summary["coverage"] = {str(k): v for k, v in cov.items()}
    return summary


def _read_points(path):
    """Operating points from a CSV in the dataset schema; labels optional."""
    return load_csv(path, require_labels=False)


def cmd_predict(args):
    cfg = _settings(args)
    if args.checkpoint is None or args.input is None:
        raise CliError("predict needs --checkpoint and --input")
    fusion = cfg.fusion
    if args.fusion_alpha is not None:
        fusion = FusionConfig(args.fusion_alpha, True, fusion.clamp_output)
    if args.no_fusion:
        fusion = FusionConfig(fusion.fusion_weight, False, fusion.clamp_output)
    predictor = load_predictor(args.checkpoint)
    rows = predict(predictor, _read_points(args.input), fusion, cfg.physics)
    path = Path(args.output) if args.output else _out(args) / PREDICTIONS
    write_rows_csv(rows, path)
    return {"written": str(path), "rows": len(rows)}


def cmd_extrapolate(args):
    cfg = _settings(args)
    pressures = [float(p) for p in args.test_pressures.split(",")]
    if args.input:
        train_ds = _load_labelled(args.input)
        if not args.test_input:
            raise CliError("--test-input is required with --input")
        test_ds = load_csv(args.test_input)
    else:
        train_ds, test_ds = synthetic.extrapolation_design(test_pressures=pressures, params=cfg.physics)
    train_cfg = cfg.train
    if args.collocation is not None:
        train_cfg = TrainConfig.from_dict({**train_cfg.to_dict(), "collocation_points": args.collocation})
    rows, context = extrapolation_study(train_ds, test_ds, pressures, train_cfg, cfg.physics,
                                        alpha=args.fusion_alpha if args.fusion_alpha is not None
                                        else cfg.fusion.fusion_weight)
    out = _out(args)
    write_rows_csv(rows, out / EXTRAPOLATION, ["pressure", "method", "n", "r2", "rmse", "mape"])
    _dump_json(context, out / EXTRAPOLATION_CONTEXT)
    return {"rows": rows, "context": context}


def cmd_bench(args):
    if args.checkpoint is None:
        raise CliError("bench needs --checkpoint")
    predictor = load_predictor(args.checkpoint)
    modes = ("single", "batch100") if args.mode == "both" else (args.mode,)
    result = {m: bench(predictor, m, n_total=args.calls, n_warmup=args.warmup, seed=args.seed or 0).summary()
              for m in modes}
    if "single" in result and "batch100" in result:
        result["batch100_vs_single_ratio"] = result["batch100"]["mean_us"] / result["single"]["mean_us"]
    _dump_json(result, _out(args) / BENCH)
    return result


def _read_csv_rows(path):
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def build_report(run_dir):
    """Summarize the known result files of ``run_dir`` into one dict.

    Only file contents are used (no timestamps, no paths beyond names), so
    the same directory always yields the same report.
    """
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise CliError(f"run directory not found: {run_dir}")
    report = {}
    if (run_dir / TRAIN_REPORT).exists():
        tr = json.loads((run_dir / TRAIN_REPORT).read_text())
        report["train"] = {
            "seed": tr["seed"], "beta": tr["config"]["physics_weight"], "stop_epoch": tr["stop_epoch"],
            "best_epoch": tr["best_epoch"], "best_val_loss": tr["best_val_loss"],
            "final_lr": tr["lr"][-1] if tr["lr"] else None, "test_metrics": tr["test_metrics"],
        }
    if (run_dir / CV_RESULTS).exists():
        rows = _read_csv_rows(run_dir / CV_RESULTS)
        parsed = [{**{k: float(r[k]) for k in ("beta", "r2", "rmse", "mae", "mape")},
                   "seed": int(r["seed"])} for r in rows]
        report["crossval"] = {"runs": len(rows), "seeds": sorted({r["seed"] for r in parsed}),
                              "summary": summarize_cv(parsed)}
    if (run_dir / EXTRAPOLATION).exists():
        report["extrapolation"] = [
            {"pressure": float(r["pressure"]), "method": r["method"], "r2": float(r["r2"]),
             "rmse": float(r["rmse"]), "mape": float(r["mape"])}
            for r in _read_csv_rows(run_dir / EXTRAPOLATION)]
    for key, name in (("calibration", CALIBRATION), ("sensitivity", SENSITIVITY), ("bench", BENCH),
                      ("augment", AUGMENT_STATS)):
        if (run_dir / name).exists():
            report[key] = json.loads((run_dir / name).read_text())
    if (run_dir / ENSEMBLE_DIR / "manifest.json").exists():
        man = json.loads((run_dir / ENSEMBLE_DIR / "manifest.json").read_text())
        report["ensemble"] = {"members": len(man["members"]), "excluded_seeds": man["excluded_seeds"],
                              "beta": man["beta"]}
    if not report:
        raise CliError(f"no result files in {run_dir}")
    return report


def cmd_report(args):
    text = json.dumps(build_report(args.run_dir), indent=1, sort_keys=True)
    sys.stdout.write(text + "\n")
    return None


# -------------------------------------------------------------------- parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML/JSON run configuration (default: $H2XPINN_CONFIG)")
    common.add_argument("--physics", help="physics parameter file overriding the [physics] table")
    common.add_argument("--output-dir", default="h2xpinn_out", help="directory for results")
    common.add_argument("--seed", type=int, help="base seed override")
    common.add_argument("--log-level", default="WARNING")
    common.add_argument("--backend", choices=("numba", "numpy"),
                        help="kernel backend (default from $H2XPINN_NUMBA)")

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--input", help="labelled dataset CSV")
    training.add_argument("--beta", type=float, help="physics weight override")
    training.add_argument("--jobs", type=int, default=1, help="worker processes")
    training.add_argument("--epochs", type=int, help="max_epochs override")
    training.add_argument("--augment", action="store_true", help="augment the training partition first")

    p = argparse.ArgumentParser(prog="h2xpinn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, metavar="subcommand")

    s = sub.add_parser("synthesize", parents=[common], help="write an oracle-labelled dataset")
    s.add_argument("--design", choices=("uniform", "series"), default="series")
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--series", type=int, default=25)
    s.add_argument("--points-per-series", type=int, default=8)
    s.add_argument("--noise", type=float, default=0.0, help="label noise std (%)")
    s.add_argument("--output", help="CSV path (default OUTPUT_DIR/synthetic.csv)")
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("augment", parents=[common], help="physics-constrained spline augmentation")
    s.add_argument("--input", help="labelled dataset CSV")
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("calibrate", parents=[common], help="fit the cathode solubility on the training split")
    s.add_argument("--input", help="labelled dataset CSV")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("train", parents=[common, training], help="train one network")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("crossval", parents=[common, training], help="repeated stratified k-fold CV")
    s.add_argument("--folds", type=int)
    s.add_argument("--reps", type=int)
    s.add_argument("--betas", help="comma-separated physics weights (default: config value)")
    s.set_defaults(func=cmd_crossval)

    s = sub.add_parser("ensemble", parents=[common, training], help="train a deep ensemble")
    s.add_argument("--members", type=int)
    s.set_defaults(func=cmd_ensemble)

    s = sub.add_parser("predict", parents=[common], help="predict from a checkpoint or ensemble")
    s.add_argument("--checkpoint", help="checkpoint file or ensemble directory")
    s.add_argument("--input", help="operating points CSV (dataset schema, labels optional)")
    s.add_argument("--fusion-alpha", type=float)
    s.add_argument("--no-fusion", action="store_true")
    s.add_argument("--output", help="CSV path (default OUTPUT_DIR/predictions.csv)")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("extrapolate", parents=[common, training], help="NN vs PINN vs fusion beyond the training pressures")
    s.add_argument("--test-input", help="labelled test CSV (required with --input)")
    s.add_argument("--test-pressures", default="40,120,160,200")
    s.add_argument("--fusion-alpha", type=float)
    s.add_argument("--collocation", type=int, default=1000, help="physics-only points for the PINN")
    s.set_defaults(func=cmd_extrapolate)

    s = sub.add_parser("bench", parents=[common], help="inference latency benchmark")
    s.add_argument("--checkpoint")
    s.add_argument("--mode", choices=("single", "batch100", "both"), default="both")
    s.add_argument("--calls", type=int, default=1000)
    s.add_argument("--warmup", type=int, default=100)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("report", parents=[common], help="summarize a run directory as JSON")
    s.add_argument("run_dir")
    s.set_defaults(func=cmd_report)
    return p


def _error(kind, message, details=None):
    sys.stderr.write(json.dumps({"error": kind, "message": message, "details": details}, sort_keys=True) + "\n")
    return 1


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.backend:
        _kernels.set_backend(args.backend)
    try:
        result = args.func(args)
    except DataError as exc:
        return _error("data", str(exc), [{"line": ln, "message": msg} for ln, msg in exc.problems])
    except TrainingDiverged as exc:
        return _error("diverged", str(exc), {"stop_epoch": exc.report.stop_epoch})
    except physics.PhysicsDomainError as exc:
        return _error("physics_domain", str(exc))
    except (ConfigError, KeyError) as exc:
        return _error("config", str(exc).strip("'\""))
    except CliError as exc:
        return _error("usage", str(exc), exc.details)
    except (FileNotFoundError, ValueError) as exc:
        return _error(type(exc).__name__, str(exc))
    if result is not None:
        sys.stdout.write(json.dumps(_jsonable(result), indent=1, sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
