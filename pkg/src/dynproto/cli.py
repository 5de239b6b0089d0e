"""Command-line entry point.

Subcommands: calibrate (ID prototypes + cold-start threshold from training
features), run (stream a feature file through the detector), eval (metrics
from a score log), synth (generate the synthetic pools), ablate (config
sweeps over a named scenario), bench (kernel backend timing).

Every flag can also come from a JSON config file passed with --config;
explicit flags win over config values, config values win over defaults.
Unknown flags and unknown config keys are rejected. Exit codes: 0 success,
2 usage or validation failure, 3 runtime failure. All commands except
bench are deterministic: identical inputs produce identical output bytes
at any --threads setting.
"""

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import bench, capture, dataio, harness, pipeline
from .capture import Thresholds
from .errors import DynProtoError, InvalidConfig, InvalidSpec, ValidationError
from .metrics import evaluate
from .pipeline import PipelineConfig, PipelineState, make_batches, process_stream
from .scoring import KIND_ID, Prototype, PrototypeBank

CALIBRATION_KIND = "dynproto-calibration"


def _opt(flag_type, default=None, required=False, choices=None, help=""):
    return {"type": flag_type, "default": default, "required": required,
            "choices": choices, "help": help}


OPTIONS = {
    "calibrate": {
        "train_features": _opt(str, required=True,
                               help="DPFT file of ID training features"),
        "train_labels": _opt(str, required=True,
                             help="int32 class index per training row"),
        "train_logits": _opt(str, help="DPFT logits (needed by msp/energy)"),
        "detector": _opt(str, default="mcm", choices=("msp", "mcm", "energy"),
                         help="base detector the threshold is calibrated for"),
        "beta": _opt(float, default=5.0,
                     help="percentile of the training score distribution"),
        "tau": _opt(float, default=1.0, help="score temperature"),
        "out": _opt(str, required=True, help="calibration artifact path"),
    },
    "run": {
        "calib": _opt(str, required=True, help="artifact from calibrate"),
        "stream_features": _opt(str, required=True,
                                help="DPFT file streamed through the engine"),
        "stream_logits": _opt(str, help="DPFT logits matching the stream"),
        "batch_size": _opt(int, default=512),
        "m": _opt(int, default=30, help="per-class cache capacity"),
        "k": _opt(float, default=5.0, help="OOD term coefficient"),
        "t_cold": _opt(int, default=5, help="cold-start batches"),
        "cluster": _opt(str, default="birch", choices=("birch", "ap", "none")),
        "cache_policy": _opt(str, default="fifo", choices=("fifo", "rh")),
        "noise_per_batch": _opt(int, default=0),
        "seed": _opt(int, default=0),
        "out_scores": _opt(str, required=True,
                           help="score log (DPFT, one column); diagnostics "
                                "land next to it"),
    },
    "eval": {
        "scores": _opt(str, required=True, help="score log from run"),
        "labels": _opt(str, required=True,
                       help="int32 per sample: class index or -1 for OOD"),
        "group_by_source": _opt(str, help="int32 OOD source index per sample "
                                          "(-1 for ID rows)"),
        "out_report": _opt(str, required=True),
    },
    "synth": {
        "spec": _opt(str, required=True,
                     help='"desk64" or a JSON spec file'),
        "out_dir": _opt(str, required=True),
    },
    "ablate": {
        "scenario": _opt(str, required=True,
                         choices=("desk64", "desk64-drift")),
        "axis": _opt(str, required=True),
        "values": _opt(str, help="comma-separated axis values "
                                 "(default: the axis's standard set)"),
        "seeds": _opt(str, help="comma-separated stream seeds (default 1-5)"),
        "out_dir": _opt(str, required=True),
    },
    "bench": {
        "d": _opt(int, default=512),
        "c": _opt(int, default=1000),
        "m_ood": _opt(int, default=3000),
        "batch_size": _opt(int, default=512),
        "batches": _opt(int, default=20),
        "backend": _opt(str, default="both",
                        choices=("both", "numba", "numpy")),
        "out_report": _opt(str),
    },
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dynproto",
        description="Streaming OOD detection over precomputed embeddings.")
    sub = parser.add_subparsers(dest="command", required=True)
    for command, options in OPTIONS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", type=str, default=None,
                       help="JSON file of flag values (flags win)")
        p.add_argument("--threads", type=int, default=None,
                       help="worker cap (default: DYNPROTO_THREADS or 1)")
        for name, spec in options.items():
            p.add_argument("--" + name.replace("_", "-"), dest=name,
                           type=spec["type"], default=None,
                           help=spec["help"])
    return parser


def _resolve(args):
    """Merge CLI flags over config-file values over declared defaults."""
    options = OPTIONS[args.command]
    config = {}
    if args.config is not None:
        _require_file(args.config)
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                config = json.load(fh)
            except json.JSONDecodeError as e:
                raise InvalidConfig(f"config {args.config}: {e}") from e
        unknown = set(config) - set(options) - {"threads"}
        if unknown:
            raise InvalidConfig(
                f"unknown config keys for {args.command}: {sorted(unknown)}")

    resolved = {}
    for name, spec in options.items():
        value = getattr(args, name)
        if value is None and name in config:
            raw = config[name]
            value = raw if raw is None else spec["type"](raw)
        if value is None:
            value = spec["default"]
        if value is None and spec["required"]:
            raise InvalidConfig(f"--{name.replace('_', '-')} is required")
        if value is not None and spec["choices"] and value not in spec["choices"]:
            raise InvalidConfig(
                f"--{name.replace('_', '-')} must be one of "
                f"{spec['choices']}, got {value!r}")
        resolved[name] = value

    threads = args.threads
    if threads is None and "threads" in config:
        threads = int(config["threads"])
    if threads is None:
        raw = os.environ.get("DYNPROTO_THREADS", "").strip()
        threads = int(raw) if raw else 1
    if threads < 1:
        raise InvalidConfig(f"threads must be >= 1, got {threads}")
    return resolved, threads


def _require_file(path):
    if not os.path.isfile(path):
        raise ValidationError(f"no such file: {path}")


def _read_features(path):
    _require_file(path)
    return dataio.read_features(path)


def _read_labels(path, expected_rows=None, what="labels"):
    _require_file(path)
    labels = dataio.read_labels(path)
    if expected_rows is not None and labels.shape[0] != expected_rows:
        raise ValidationError(
            f"{what}: {labels.shape[0]} entries for {expected_rows} rows")
    return labels


# ---------------------------------------------------------------------------
# Commands

def cmd_calibrate(opts, threads):
    rows, _ = _read_features(opts["train_features"])
    labels = _read_labels(opts["train_labels"], rows.shape[0])
    per_class = pipeline.split_by_class(rows, labels)
    logits_pc = None
    if opts["train_logits"] is not None:
        logits, _ = _read_features(opts["train_logits"])
        if logits.shape[0] != rows.shape[0]:
            raise ValidationError(
                f"logits: {logits.shape[0]} rows for {rows.shape[0]} features")
        logits_pc = [logits[labels == c] for c in range(len(per_class))]
    cfg = PipelineConfig(beta=opts["beta"], tau=opts["tau"],
                         base_detector=opts["detector"])
    state = pipeline.initialize(per_class, logits_pc, cfg)
    artifact = {
        "kind": CALIBRATION_KIND,
        "version": 1,
        "detector": opts["detector"],
        "beta": opts["beta"],
        "tau": opts["tau"],
        "theta": state.thresholds.theta,
        "dim": state.bank.dim,
        "n_classes": state.bank.n_classes,
        "prototypes": state.bank.id_matrix.tolist(),
    }
    dataio.export_report(artifact, opts["out"])
    return 0


def _load_calibration(path):
    _require_file(path)
    calib = dataio.load_report(path)
    if not isinstance(calib, dict) or calib.get("kind") != CALIBRATION_KIND:
        raise ValidationError(f"{path} is not a calibration artifact")
    return calib


def cmd_run(opts, threads):
    calib = _load_calibration(opts["calib"])
    feats, _ = _read_features(opts["stream_features"])
    logits = None
    if opts["stream_logits"] is not None:
        logits, _ = _read_features(opts["stream_logits"])
    cfg = PipelineConfig(
        m=opts["m"], beta=calib["beta"], k_coef=opts["k"],
        t_cold=opts["t_cold"], batch_size=opts["batch_size"],
        tau=calib["tau"], base_detector=calib["detector"],
        cluster=opts["cluster"], cache_policy=opts["cache_policy"],
        noise_per_batch=opts["noise_per_batch"], rng_seed=opts["seed"])
    protos = [Prototype(vector=np.asarray(v, dtype=np.float64), kind=KIND_ID,
                        source_class=c)
              for c, v in enumerate(calib["prototypes"])]
    bank = PrototypeBank(protos)
    state = PipelineState(
        t=0,
        caches=capture.init_caches(cfg.cache_init, bank.n_classes, cfg.m,
                                   cfg.cache_policy),
        bank=bank,
        thresholds=Thresholds(theta=calib["theta"], beta=calib["beta"]),
        seq_counter=0, config=cfg,
        _class_protos=[[] for _ in range(bank.n_classes)])
    fb, lb = make_batches(feats, logits, cfg.batch_size)
    state, log = process_stream(state, fb, lb)

    dataio.write_features(opts["out_scores"],
                          log.scores.astype(np.float32)[:, None])
    diagnostics = {
        "theta": calib["theta"],
        "final_alpha": state.thresholds.alpha,
        "config": harness._config_echo(cfg),
        "batches": [{"alpha": r.alpha_used, "m_ood": r.m_ood,
                     "cached_count": r.cached_count} for r in log.batches],
    }
    dataio.export_report(diagnostics, opts["out_scores"] + ".diagnostics.json")
    return 0


def cmd_eval(opts, threads):
    matrix, _ = _read_features(opts["scores"])
    if matrix.shape[1] != 1:
        raise ValidationError(
            f"score log must have one column, got {matrix.shape[1]}")
    scores = matrix[:, 0].astype(np.float64)
    labels = _read_labels(opts["labels"], scores.shape[0])
    id_scores = scores[labels >= 0]
    ood_scores = scores[labels < 0]
    report = {"overall": evaluate(id_scores, ood_scores),
              "n_samples": int(scores.shape[0])}
    if opts["group_by_source"] is not None:
        sources = _read_labels(opts["group_by_source"], scores.shape[0],
                               what="sources")
        report["per_source"] = {
            str(s): evaluate(id_scores, scores[sources == s])
            for s in sorted(int(v) for v in np.unique(sources[sources >= 0]))}
    dataio.export_report(report, opts["out_report"])
    return 0


def _parse_spec_file(path):
    _require_file(path)
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise InvalidSpec(f"spec {path}: {e}") from e
    return parse_spec_doc(doc)


def parse_spec_doc(doc):
    """Strictly-keyed JSON form of a synthetic dataset spec."""
    def check_keys(obj, allowed, where):
        unknown = set(obj) - allowed
        if unknown:
            raise InvalidSpec(f"unknown {where} keys: {sorted(unknown)}")

    check_keys(doc, {"dim", "rng_seed", "logit_tau", "id_clusters",
                     "ood_clusters"}, "spec")
    id_clusters = []
    for entry in doc.get("id_clusters", ()):
        check_keys(entry, {"train_count", "test_count", "spread", "center"},
                   "id cluster")
        id_clusters.append(dataio.IDClusterSpec(
            train_count=int(entry["train_count"]),
            test_count=int(entry["test_count"]),
            spread=float(entry["spread"]),
            center=entry.get("center")))
    ood_clusters = []
    for entry in doc.get("ood_clusters", ()):
        check_keys(entry, {"count", "spread", "confusable_with", "angle_deg",
                           "center"}, "ood cluster")
        ood_clusters.append(dataio.OODClusterSpec(
            count=int(entry["count"]),
            spread=float(entry["spread"]),
            confusable_with=entry.get("confusable_with"),
            angle_deg=float(entry.get("angle_deg", 25.0)),
            center=entry.get("center")))
    try:
        dim = int(doc["dim"])
        rng_seed = int(doc["rng_seed"])
    except KeyError as e:
        raise InvalidSpec(f"spec missing required key {e.args[0]!r}") from e
    return dataio.SyntheticSpec(
        dim=dim, id_clusters=tuple(id_clusters),
        ood_clusters=tuple(ood_clusters), rng_seed=rng_seed,
        logit_tau=float(doc.get("logit_tau", 0.05)))


def _spec_doc(spec):
    return {
        "dim": spec.dim,
        "rng_seed": spec.rng_seed,
        "logit_tau": spec.logit_tau,
        "id_clusters": [
            {"train_count": c.train_count, "test_count": c.test_count,
             "spread": c.spread,
             "center": None if c.center is None else list(c.center)}
            for c in spec.id_clusters],
        "ood_clusters": [
            {"count": c.count, "spread": c.spread,
             "confusable_with": c.confusable_with, "angle_deg": c.angle_deg,
             "center": None if c.center is None else list(c.center)}
            for c in spec.ood_clusters],
    }


def cmd_synth(opts, threads):
    if opts["spec"] == "desk64":
        spec = dataio.desk64_spec()
    else:
        spec = _parse_spec_file(opts["spec"])
    data = dataio.generate_synthetic(spec)
    os.makedirs(opts["out_dir"], exist_ok=True)

    def features(name, rows, normalized):
        dataio.write_features(os.path.join(opts["out_dir"], name), rows,
                              normalized=normalized)
        return name

    def labels(name, values):
        dataio.write_labels(os.path.join(opts["out_dir"], name), values)
        return name

    names = [
        features("train_features.dpft", data.train_features, True),
        labels("train_labels.i32", data.train_labels),
        features("train_logits.dpft", data.train_logits, False),
        features("test_features.dpft", data.test_features, True),
        labels("test_labels.i32", data.test_labels),
        labels("test_sources.i32", data.test_sources),
        features("test_logits.dpft", data.test_logits, False),
    ]
    manifest = {"spec": _spec_doc(spec), "files": {}}
    for name in names:
        path = os.path.join(opts["out_dir"], name)
        with open(path, "rb") as fh:
            payload = fh.read()
        manifest["files"][name] = {
            "sha256": hashlib.sha256(payload).hexdigest(),
            "bytes": len(payload),
        }
    dataio.export_report(manifest,
                         os.path.join(opts["out_dir"], "manifest.json"))
    return 0


_AXIS_VALUE_PARSERS = {
    "copc_only": lambda s: {"true": True, "false": False}[s.lower()],
    "cluster": str,
    "cache_init": str,
    "cache_policy": str,
    "k": float,
    "m": int,
    "beta": float,
    "t_cold": int,
}


def cmd_ablate(opts, threads):
    axis = opts["axis"]
    if axis not in harness.ABLATION_AXES:
        raise InvalidConfig(
            f"unknown ablation axis {axis!r}; known: "
            f"{sorted(harness.ABLATION_AXES)}")
    scenario_kw = {}
    if opts["seeds"] is not None:
        try:
            scenario_kw["seeds"] = tuple(
                int(s) for s in opts["seeds"].split(","))
        except ValueError as e:
            raise InvalidConfig(f"bad --seeds: {opts['seeds']}") from e
    if opts["scenario"] == "desk64":
        spec = harness.desk64_scenario(**scenario_kw)
    else:
        spec = harness.desk64_scenario(ordering=((0,), (1,), (2,)),
                                       **scenario_kw)
    values = None
    if opts["values"] is not None:
        parse = _AXIS_VALUE_PARSERS[axis]
        try:
            values = [parse(v.strip()) for v in opts["values"].split(",")]
        except (KeyError, ValueError) as e:
            raise InvalidConfig(
                f"bad --values for axis {axis!r}: {opts['values']}") from e
    reports = harness.run_ablation(spec, axis, values, threads=threads)
    os.makedirs(opts["out_dir"], exist_ok=True)
    index = {"scenario": opts["scenario"], "axis": axis, "reports": {}}
    for value, report in reports.items():
        name = f"{axis}__{value}.json"
        dataio.export_report(report, os.path.join(opts["out_dir"], name))
        index["reports"][value] = name
    dataio.export_report(index, os.path.join(opts["out_dir"], "index.json"))
    return 0


def cmd_bench(opts, threads):
    kw = dict(d=opts["d"], c=opts["c"], m_ood=opts["m_ood"],
              batch_size=opts["batch_size"], batches=opts["batches"])
    if opts["backend"] == "both":
        results = bench.compare_backends(**kw)
    else:
        results = [bench.run_benchmark(backend_name=opts["backend"], **kw)]
    print(bench.format_table(results))
    if opts["out_report"] is not None:
        dataio.export_report(results, opts["out_report"])
    return 0


_DISPATCH = {
    "calibrate": cmd_calibrate,
    "run": cmd_run,
    "eval": cmd_eval,
    "synth": cmd_synth,
    "ablate": cmd_ablate,
    "bench": cmd_bench,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        opts, threads = _resolve(args)
        return _DISPATCH[args.command](opts, threads)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DynProtoError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
