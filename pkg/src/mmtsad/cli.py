"""Command-line interface.

Subcommands: train, detect, explain, synth, export-graph. Exit codes:
0 success, 2 usage/config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, graph, pipeline
from .config import ConfigError, DetectorConfig, config_hash, load_config
from .data import (
    SynthSpec,
    TimeSeriesDataset,
    load_dataset,
    read_data_csv,
    read_labels_csv,
    synthesize_ex,
    write_dataset_csv,
    write_labels_csv,
)
from .errors import CheckpointError, DataError, NumericError
from .scoring import read_trace_csv, write_trace_csv
from .training import load_checkpoint, save_checkpoint

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _stamp(cfg_hash: str) -> str:
    return f"mmtsad {__version__} config_hash={cfg_hash}"


def _json_out(path: Path, payload: dict, cfg_hash: str) -> None:
    payload = {"tool_version": __version__, "config_hash": cfg_hash, **payload}
    path.write_text(json.dumps(payload, indent=2) + "\n")


def _parse_interval(text: str) -> tuple[int, int]:
    try:
        a, b = text.split(":")
        return int(a), int(b)
    except ValueError as exc:
        raise ConfigError(f"interval must look like a:b, got {text!r}") from exc


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config) if args.config else DetectorConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    train_ds = load_dataset(args.train_data, args.modalities, split="train")
    state, trace = pipeline.fit_detector(train_ds, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(state, out)
    h = config_hash(cfg)
    loss_path = Path(str(out) + ".loss.csv")
    with open(loss_path, "w", newline="") as fh:
        fh.write(f"# {_stamp(h)}\n")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "l_rec", "l_pred", "l_joint"])
        for e in trace:
            writer.writerow([e.epoch, repr(e.l_rec), repr(e.l_pred), repr(e.l_joint)])
    for e in trace:
        print(f"epoch {e.epoch:4d}  l_rec {e.l_rec:.6f}  l_pred {e.l_pred:.6f}  "
              f"l_joint {e.l_joint:.6f}")
    print(f"checkpoint written to {out}")
    print(f"loss trace written to {loss_path}")
    return EXIT_OK


def cmd_detect(args: argparse.Namespace) -> int:
    state = load_checkpoint(args.model)
    names, values = read_data_csv(args.test_data)
    if names != state.names:
        raise DataError(
            "test data series do not match the checkpoint "
            f"(expected {list(state.names)}, got {list(names)})"
        )
    labels = None
    if args.labels:
        labels = read_labels_csv(args.labels, values.shape[1])
    test_ds = TimeSeriesDataset(
        names=names, values=values, modality=state.modality,
        labels=labels, split="test",
    )
    trace = pipeline.detect_on(state, test_ds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    h = config_hash(state.config)
    write_trace_csv(out / "trace.csv", trace, header_comment=_stamp(h))
    _json_out(out / "report.json", {
        "threshold": trace.threshold,
        "n_timestamps": trace.n_timestamps,
        "warmup": trace.warmup,
        "n_detections": int(trace.detections.sum()),
    }, h)
    if labels is not None:
        _json_out(out / "metrics.json", pipeline.evaluate(trace, labels), h)
        print(f"metrics written to {out / 'metrics.json'}")
    if args.attention_out:
        n_rec = pipeline.export_attention_jsonl(state, test_ds, args.attention_out)
        print(f"attention records ({n_rec}) written to {args.attention_out}")
    print(f"threshold {trace.threshold:.6g}, "
          f"{int(trace.detections.sum())} detections over {trace.n_timestamps} timestamps")
    print(f"trace written to {out / 'trace.csv'}")
    return EXIT_OK


def cmd_explain(args: argparse.Namespace) -> int:
    state = load_checkpoint(args.model)
    trace = read_trace_csv(args.trace, names=state.names)
    interval = _parse_interval(args.interval)
    try:
        report = pipeline.explain_report(trace, interval)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    h = config_hash(state.config)
    payload = {"tool_version": __version__, "config_hash": h, **report}
    print(json.dumps(payload, indent=2))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _json_out(out / "interpretation.json", report, h)
        a, b = interval
        with open(out / "sensor_scores.csv", "w", newline="") as fh:
            fh.write(f"# {_stamp(h)}\n")
            writer = csv.writer(fh)
            writer.writerow(["t"] + list(state.names))
            for t in range(a, b + 1):
                writer.writerow([t] + [repr(float(x)) for x in trace.sensor_scores[t]])
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    spec_kwargs = {}
    if args.spec:
        with open(args.spec, "rb") as fh:
            try:
                raw = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"malformed synth spec {args.spec}: {exc}") from exc
        known = {f.name for f in dataclasses.fields(SynthSpec)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown synth spec keys: {sorted(unknown)}")
        if "kinds" in raw:
            raw["kinds"] = tuple(raw["kinds"])
        spec_kwargs = raw
    spec = SynthSpec(**spec_kwargs)
    train_ds, test_ds = synthesize_ex(spec, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stamp = f"mmtsad {__version__} synth_seed={args.seed}"
    write_dataset_csv(out / "train.csv", train_ds, header_comment=stamp)
    write_dataset_csv(out / "test.csv", test_ds, header_comment=stamp)
    write_labels_csv(out / "labels.csv", test_ds.labels, header_comment=stamp)
    (out / "modalities.json").write_text(
        json.dumps(dict(zip(train_ds.names, train_ds.modality)), indent=2) + "\n"
    )
    events = [dataclasses.asdict(e) for e in (test_ds.events or ())]
    (out / "events.json").write_text(json.dumps({
        "tool_version": __version__,
        "seed": args.seed,
        "spec": dataclasses.asdict(spec),
        "events": events,
    }, indent=2) + "\n")
    print(f"dataset written to {out} "
          f"(train {train_ds.n_timestamps}, test {test_ds.n_timestamps} timestamps, "
          f"{len(events)} anomaly events)")
    return EXIT_OK


def cmd_export_graph(args: argparse.Namespace) -> int:
    state = load_checkpoint(args.model)
    h = config_hash(state.config)
    v = np.asarray(state.params["V"], dtype=np.float64)
    count = graph.export_edges(args.out, v, state.topology, state.names,
                               header_comment=_stamp(h))
    print(f"{count} edges written to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmtsad",
        description="Multimodal time-series anomaly detection",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a detector on anomaly-free data")
    p.add_argument("--config", help="TOML config; unset keys use defaults")
    p.add_argument("--train-data", required=True, help="training data CSV")
    p.add_argument("--modalities", required=True, help="series -> modality JSON")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="score a test series and flag anomalies")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--test-data", required=True, help="test data CSV")
    p.add_argument("--labels", help="optional ground-truth labels CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--attention-out", help="write per-window attention JSONL here")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("explain", help="rank sensors over an anomalous interval")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--trace", required=True, help="trace CSV from detect")
    p.add_argument("--interval", required=True, help="a:b inclusive timestamps")
    p.add_argument("--out", help="optional output directory")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("synth", help="generate a seeded synthetic dataset")
    p.add_argument("--spec", help="TOML generator spec; defaults if omitted")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("export-graph", help="dump the learned topology edges")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--out", required=True, help="edge list CSV path")
    p.set_defaults(func=cmd_export_graph)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
