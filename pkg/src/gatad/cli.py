"""Command-line pipeline: synth, train, score, threshold, evaluate, diagnose.

Each stage reads and writes plain files (CSV for series and scores, one
binary format for checkpoints, JSON for reports), so every intermediate
artifact can be inspected, diffed, and fed to the next stage or to other
tooling. A JSON config file (--config) provides defaults for every knob;
command-line options override it, and --seed overrides whichever seed the
command consumes.

Exit codes: 0 success, 2 configuration errors, 3 data errors, 4 numeric
failures, 1 any other pipeline error.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import data as dio
from .config import RunConfig, load_run_config
from .errors import ConfigError, DataError, GatadError, NumericError
from .evaluation import (
    delay_adjust,
    diagnose,
    event_peak,
    hitrate_at,
    ndcg_at,
    point_adjust,
    prf1,
)
from .network import forward
from .preprocess import clean, fit_norm, normalize
from .scoring import detect, pot_fit, score_stream
from .tensor import Tensor
from .trainer import load_checkpoint, save_checkpoint, train


@contextlib.contextmanager
def _stage(action: str, path=None):
    """Attach command-level context (stage, file) to any pipeline error."""
    try:
        yield
    except GatadError as err:
        where = f" ({path})" if path is not None else ""
        raise type(err)(f"while {action}{where}: {err}") from err


def _write_json(path, payload: dict) -> None:
    Path(path).write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="ascii")


def cmd_synth(args, cfg: RunConfig) -> int:
    out = Path(cfg.path("out_dir", args.out))
    seed = args.seed if args.seed is not None else 0
    min_start = args.min_start
    window = cfg.model.get("n")
    if window is not None and min_start <= window:
        # events inside the first scoring window would never be scored
        warnings.warn(
            f"min_start {min_start} lies inside the configured model's "
            f"first scoring window (n={window}); events shifted forward")
        min_start = window + 10
    with _stage("generating synthetic data"):
        made = dio.synth(t_total=args.t_total, k=args.k, n_events=args.events,
                         seed=seed, train_frac=args.train_frac,
                         min_start=min_start)
    (out / "train").mkdir(parents=True, exist_ok=True)
    (out / "test").mkdir(parents=True, exist_ok=True)
    with _stage("writing synthetic data", out):
        dio.write_values_csv(out / "train" / "values.csv", made.train,
                             made.feature_names)
        dio.write_values_csv(out / "test" / "values.csv", made.test,
                             made.feature_names)
        dio.write_labels_csv(out / "test" / "labels.csv", made.labels)
        dio.write_events_csv(out / "test" / "events.csv", made.events,
                             made.feature_names)
    print(f"wrote {len(made.train)} training rows, {len(made.test)} test "
          f"rows, {len(made.events)} events under {out}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    values_path = cfg.path("train_values", args.values)
    ckpt_path = cfg.path("checkpoint", args.checkpoint)
    curve_path = cfg.path("curve", args.curve, required=False)
    with _stage("reading training values", values_path):
        values, names, _ = dio.read_values_csv(values_path)

    model_overrides = dict(cfg.model)
    if args.n is not None:
        model_overrides["n"] = args.n
    model_cfg = dataclasses.replace(cfg, model=model_overrides) \
        .model_config(k=len(names))
    train_cfg = cfg.train
    replacements = {}
    if args.seed is not None:
        replacements["seed"] = args.seed
    if args.epochs is not None:
        replacements["epochs"] = args.epochs
    if args.lr is not None:
        replacements["lr"] = args.lr
    if args.batch_size is not None:
        replacements["batch_size"] = args.batch_size
    if replacements:
        train_cfg = dataclasses.replace(train_cfg, **replacements)

    with _stage("normalizing training data", values_path):
        norm = fit_norm(values)
        scaled = normalize(values, norm)
    with _stage("cleaning training data", values_path):
        cleaned = clean(scaled, cfg.sr, feature_names=names)

    def report(epoch, train_loss, val_loss):
        tail = f" val={val_loss:.6f}" if val_loss is not None else ""
        print(f"epoch {epoch}: train={train_loss:.6f}{tail}")

    with _stage("training", values_path):
        result = train(cleaned, model_cfg, train_cfg, progress=report)

    meta = {"epochs": train_cfg.epochs, "seed": train_cfg.seed,
            "final_train_loss": result.train_losses[-1]}
    if result.val_losses:
        meta["final_val_loss"] = result.val_losses[-1]
    with _stage("saving checkpoint", ckpt_path):
        save_checkpoint(ckpt_path, result.params, model_cfg, norm=norm,
                        feature_names=names, train_meta=meta)
    if curve_path is not None:
        with _stage("writing loss curve", curve_path):
            dio.write_curve_csv(curve_path, result.train_losses,
                                result.val_losses)
    print(f"saved checkpoint to {ckpt_path}")
    return 0


def _load_scoring_inputs(cfg: RunConfig, args):
    ckpt_path = cfg.path("checkpoint", args.checkpoint)
    values_path = cfg.path("test_values", args.values)
    with _stage("loading checkpoint", ckpt_path):
        ckpt = load_checkpoint(ckpt_path)
    with _stage("reading values", values_path):
        values, names, start = dio.read_values_csv(values_path)
    if len(names) != ckpt.config.k:
        raise ConfigError(
            f"checkpoint was trained on k={ckpt.config.k} features but "
            f"{values_path} has {len(names)}")
    if ckpt.feature_names is not None and names != ckpt.feature_names:
        raise ConfigError(
            f"feature names differ: checkpoint has {ckpt.feature_names}, "
            f"{values_path} has {names}")
    return ckpt, values, names, start


def cmd_score(args, cfg: RunConfig) -> int:
    scores_path = cfg.path("scores", args.scores)
    attention_dir = cfg.path("attention_dir", args.attention_dir,
                             required=bool(args.attention_at))
    ckpt, values, names, start = _load_scoring_inputs(cfg, args)
    model_cfg = ckpt.config
    if args.gamma is not None:
        model_cfg = model_cfg.with_overrides(gamma=args.gamma)
    seed = args.seed if args.seed is not None else cfg.scoring.seed
    batch = args.batch_size if args.batch_size is not None \
        else cfg.scoring.batch_size

    scaled = normalize(values, ckpt.norm) if ckpt.norm is not None else values
    try:
        wanted = [int(u) for u in args.attention_at.split(",")] \
            if args.attention_at else []
    except ValueError:
        raise ConfigError(
            f"--attention-at expects comma-separated integer timestamps, "
            f"got {args.attention_at!r}") from None
    for u in wanted:
        if not (start + model_cfg.n <= u < start + len(values)):
            raise DataError(
                f"cannot export attention at {u}: scored timestamps run "
                f"from {start + model_cfg.n} to {start + len(values) - 1}")

    with _stage("scoring", scores_path):
        series = score_stream(scaled, ckpt.params, model_cfg,
                              seed=seed, batch_size=batch)
    with _stage("writing scores", scores_path):
        dio.write_scores_csv(scores_path, start + series.offsets,
                             series.total, series.scores, names)

    if wanted:
        out = Path(attention_dir)
        out.mkdir(parents=True, exist_ok=True)
        lags = [f"t{-model_cfg.n + i}" for i in range(model_cfg.n)]
        for u in wanted:
            row = u - start
            window = Tensor(scaled[row - model_cfg.n:row])
            with _stage("exporting attention", out):
                shot = forward(window, ckpt.params, model_cfg)
                if shot.alpha_feature is not None:
                    dio.write_matrix_csv(
                        out / f"attention_features_{u}.csv",
                        shot.alpha_feature.data, names, names,
                        corner="feature")
                if shot.alpha_time is not None:
                    dio.write_matrix_csv(
                        out / f"attention_time_{u}.csv",
                        shot.alpha_time.data, lags, lags, corner="lag")
    print(f"scored {len(series.total)} timestamps "
          f"({start + series.offsets[0]}..{start + series.offsets[-1]}), "
          f"peak total {series.total.max():.6g}")
    return 0


def cmd_threshold(args, cfg: RunConfig) -> int:
    scores_path = cfg.path("scores", args.scores)
    alarms_path = cfg.path("alarms", args.alarms)
    audit_path = cfg.path("threshold", args.threshold_out, required=False)
    calibration_path = cfg.path("calibration_scores", args.calibration_scores,
                                required=False)
    q = args.q if args.q is not None else cfg.scoring.q
    init_quantile = args.init_quantile if args.init_quantile is not None \
        else cfg.scoring.init_quantile

    with _stage("reading scores", scores_path):
        offsets, total, _, _ = dio.read_scores_csv(scores_path)
    calibration = total
    if calibration_path is not None:
        with _stage("reading calibration scores", calibration_path):
            _, calibration, _, _ = dio.read_scores_csv(calibration_path)
    with _stage("fitting the score tail", scores_path):
        pot = pot_fit(calibration, q=q, init_quantile=init_quantile)
    flags = detect(total, pot.threshold)
    with _stage("writing alarms", alarms_path):
        dio.write_alarms_csv(alarms_path, offsets, flags)
    if audit_path is not None:
        _write_json(audit_path, {
            "threshold": pot.threshold, "tail_start": pot.tail_start,
            "xi": pot.xi, "sigma": pot.sigma, "n_excess": pot.n_excess,
            "n_total": pot.n_total, "q": q, "init_quantile": init_quantile})
    print(f"threshold {pot.threshold:.6g} (tail start {pot.tail_start:.6g}, "
          f"shape {pot.xi:.4f}, {pot.n_excess} excesses); "
          f"{int(flags.sum())} of {len(flags)} timestamps flagged")
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    alarms_path = cfg.path("alarms", args.alarms)
    labels_path = cfg.path("labels", args.labels)
    report_path = cfg.path("report", args.report, required=False)
    report_csv_path = cfg.path("report_csv", args.report_csv, required=False)
    protocol = args.protocol if args.protocol is not None \
        else cfg.scoring.protocol
    delay = args.delay if args.delay is not None else cfg.scoring.delay

    with _stage("reading alarms", alarms_path):
        offsets, flags = dio.read_alarms_csv(alarms_path)
    with _stage("reading labels", labels_path):
        truth = dio.read_labels_csv(labels_path)
    if offsets.min() < 0 or offsets.max() >= len(truth):
        raise DataError(
            f"alarms cover timestamps {offsets.min()}..{offsets.max()} but "
            f"the labels file has {len(truth)} rows")
    pred = np.zeros(len(truth), dtype=bool)
    pred[offsets] = flags

    if protocol == "point-adjust":
        adjusted = point_adjust(pred, truth)
    elif protocol == "delay":
        adjusted = delay_adjust(pred, truth, delay)
    elif protocol == "raw-point":
        adjusted = pred
    else:
        raise ConfigError(f"unknown protocol {protocol!r}")
    report = dataclasses.replace(prf1(adjusted, truth), protocol=protocol)

    payload = {"protocol": protocol, "precision": report.precision,
               "recall": report.recall, "f1": report.f1,
               "tp": report.tp, "fp": report.fp, "fn": report.fn,
               "alarmed_timestamps": int(pred.sum()),
               "labeled_timestamps": int(truth.sum())}
    if protocol == "delay":
        payload["delay"] = delay
    if report_path is not None:
        _write_json(report_path, payload)
    if report_csv_path is not None:
        with _stage("writing report row", report_csv_path):
            dio.write_eval_csv(report_csv_path, payload)
    print(f"{protocol}: precision={report.precision:.4f} "
          f"recall={report.recall:.4f} f1={report.f1:.4f}")
    return 0


def cmd_diagnose(args, cfg: RunConfig) -> int:
    scores_path = cfg.path("scores", args.scores)
    labels_path = cfg.path("labels", args.labels)
    events_path = cfg.path("events", args.events)
    report_path = cfg.path("report", args.report, required=False)
    report_csv_path = cfg.path("report_csv", args.report_csv, required=False)
    top_m = args.top_m if args.top_m is not None else cfg.scoring.top_m

    with _stage("reading scores", scores_path):
        offsets, total, scores, names = dio.read_scores_csv(scores_path)
    with _stage("reading labels", labels_path):
        truth = dio.read_labels_csv(labels_path)
    with _stage("reading root causes", events_path):
        events = dio.read_events_csv(events_path, names)
    if not events:
        raise DataError(f"{events_path} lists no events to diagnose")
    if top_m is None:
        top_m = min(8, len(names))
    elif not (1 <= top_m <= len(names)):
        raise ConfigError(
            f"top_m must be in [1, {len(names)}], got {top_m}")
    for event in events:
        if event.stop > len(truth) or not truth[event.start:event.stop].all():
            raise DataError(
                f"event [{event.start}, {event.stop}) is not fully inside "
                f"a labeled segment")

    rows = []
    csv_rows = []
    for event in events:
        with _stage("ranking features", scores_path):
            full = diagnose(scores, total, offsets, event.start, event.stop,
                            top_m=len(names))
            peak_scores = scores[event_peak(total, offsets,
                                            event.start, event.stop)]
        ranking = [int(f) for f in full]
        rows.append({
            "start": event.start, "end": event.stop,
            "true_features": [names[f] for f in event.features],
            "ranked": [names[f] for f in ranking[:top_m]],
            "hitrate_100": hitrate_at(ranking, event.features, 100),
            "hitrate_150": hitrate_at(ranking, event.features, 150),
            "ndcg_5": ndcg_at(ranking, event.features, cutoff=5),
        })
        csv_rows.extend(
            (event.start, position + 1, names[f], peak_scores[f])
            for position, f in enumerate(ranking[:top_m]))
    aggregate = {key: float(np.mean([r[key] for r in rows]))
                 for key in ("hitrate_100", "hitrate_150", "ndcg_5")}
    if report_path is not None:
        _write_json(report_path,
                    {"top_m": top_m, "events": rows, "aggregate": aggregate})
    if report_csv_path is not None:
        with _stage("writing ranking rows", report_csv_path):
            dio.write_diagnosis_csv(report_csv_path, csv_rows)
    for row in rows:
        print(f"event {row['start']}..{row['end']}: true="
              f"{','.join(row['true_features'])} "
              f"ranked={','.join(row['ranked'])} "
              f"ndcg5={row['ndcg_5']:.3f}")
    print(f"aggregate: hitrate@100%={aggregate['hitrate_100']:.4f} "
          f"hitrate@150%={aggregate['hitrate_150']:.4f} "
          f"ndcg@5={aggregate['ndcg_5']:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gatad",
        description="Multivariate time-series anomaly detection pipeline.")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int,
                        help="override the seed the command consumes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic benchmark")
    p.add_argument("--out", help="output directory")
    p.add_argument("--t-total", type=int, default=5000)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--events", type=int, default=8)
    p.add_argument("--train-frac", type=float, default=0.5)
    p.add_argument("--min-start", type=int, default=110)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit a detector and save a checkpoint")
    p.add_argument("--values", help="training values CSV")
    p.add_argument("--checkpoint", help="checkpoint output path")
    p.add_argument("--curve", help="optional loss-curve CSV output")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--n", type=int, help="window length override")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score a series with a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--values", help="values CSV to score")
    p.add_argument("--scores", help="scores CSV output")
    p.add_argument("--gamma", type=float, help="override the score blend")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--attention-at",
                   help="comma-separated timestamps whose attention "
                        "matrices are exported")
    p.add_argument("--attention-dir", help="directory for attention CSVs")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("threshold", help="fit the tail and flag alarms")
    p.add_argument("--scores", help="scores CSV to threshold")
    p.add_argument("--alarms", help="alarms CSV output")
    p.add_argument("--threshold-out", help="optional JSON audit output")
    p.add_argument("--calibration-scores",
                   help="fit the tail on this scores CSV instead")
    p.add_argument("--q", type=float, help="target exceedance probability")
    p.add_argument("--init-quantile", type=float)
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("evaluate", help="compare alarms against labels")
    p.add_argument("--alarms")
    p.add_argument("--labels")
    p.add_argument("--report", help="optional JSON report output")
    p.add_argument("--report-csv", help="optional one-row CSV of the metrics")
    p.add_argument("--protocol", choices=["point-adjust", "delay", "raw-point"])
    p.add_argument("--delay", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("diagnose", help="rank root-cause features per event")
    p.add_argument("--scores")
    p.add_argument("--labels")
    p.add_argument("--events", help="root-cause events CSV")
    p.add_argument("--report", help="optional JSON report output")
    p.add_argument("--report-csv",
                   help="optional CSV of (event, rank, feature, score) rows")
    p.add_argument("--top-m", type=int)
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config)
        return args.func(args, cfg)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return 3
    except NumericError as err:
        print(f"numeric error: {err}", file=sys.stderr)
        return 4
    except GatadError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
