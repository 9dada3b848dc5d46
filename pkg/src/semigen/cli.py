"""Command-line entry point: ``semigen <command> [flags]``."""

import argparse
import hashlib
import json
import logging
import os
import sys
import time

import numpy as np
import yaml

from . import __version__, samplers, theory
from .metrics import DEFAULT_EVAL_SAMPLES, discrete_fit_report, mode_report
from .plotting import plot_samples
from .trainer import (RunRecord, TrainConfig, TrainingDiverged, TrainState, aggregate_records, format_summary,
                      run_experiment, run_multi_seed, summary_csv)

OUTPUT_ROOT_ENV = "SEMIGEN_OUTPUT_ROOT"
EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def output_root():
    return os.environ.get(OUTPUT_ROOT_ENV, "runs")


def _default_out(name):
    return os.path.join(output_root(), name)


def _hash(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def write_manifest(path, command, seed, config, outputs, started):
    """Manifest next to every command's output: enough to re-run it."""
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": config,
        "config_hash": _hash(config),
        "outputs": outputs,
        "argv": sys.argv[1:],
        "wall_clock_seconds": time.time() - started,
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True, default=str)
        fh.write("\n")
    return manifest


def _manifest_path(out):
    if os.path.isdir(out):
        return os.path.join(out, "manifest.json")
    return out + ".manifest.json"


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def _write_json(path, obj):
    _ensure_parent(path)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_spec(value):
    """A dataset spec from a JSON file (spec or generate-data sidecar) or a kind name."""
    if value in samplers.KINDS:
        return samplers.make_spec(value)
    if not os.path.splitext(value)[1] and not os.path.exists(value):
        raise UsageError(f"unknown dataset {value!r}; give one of {', '.join(samplers.KINDS)} or a JSON file")
    with open(value) as fh:
        d = json.load(fh)
    if "spec" in d:
        d = d["spec"]
    return samplers.DatasetSpec.from_dict(d)


def _load_config(path):
    with open(path) as fh:
        d = yaml.safe_load(fh) or {}
    if not isinstance(d, dict):
        raise UsageError(f"{path}: config must be a mapping of TrainConfig fields")
    try:
        return TrainConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------- commands

def cmd_generate_data(args):
    started = time.time()
    spec = load_spec(args.spec)
    seed = 0 if args.seed is None else args.seed
    count = 100_000 if args.count is None else args.count
    if count < 0:
        raise UsageError("--count must be nonnegative")
    out = args.out or _default_out(f"data/{spec.kind}-seed{seed}.csv")
    _ensure_parent(out)
    samples = spec.sample(samplers.make_rng(seed, samplers.STREAM_DATA), count) if count else \
        np.zeros((0, spec.dim), dtype=np.int64 if spec.discrete else np.float64)
    samplers.write_samples_csv(out, samples)
    sidecar = os.path.splitext(out)[0] + ".json"
    _write_json(sidecar, {"spec": spec.to_dict(), "seed": seed, "count": count})
    write_manifest(_manifest_path(out), "generate-data", seed, {"spec": spec.to_dict(), "count": count},
                   [out, sidecar], started)
    print(out)
    return EXIT_OK


def cmd_train(args):
    started = time.time()
    config = _load_config(args.config) if args.config else TrainConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.regime is not None:
        changes["regime"] = args.regime
    if args.steps is not None:
        changes["steps"] = args.steps
    if changes:
        config = config.replace(**changes)
    out = args.out or _default_out(f"{config.regime}-{config.dataset['kind']}-{config.config_hash()}")
    os.makedirs(out, exist_ok=True)
    if args.seeds > 1:
        records, summary = run_multi_seed(config, out, n_seeds=args.seeds, workers=args.workers,
                                          resume=args.resume)
        text = format_summary(summary)
        with open(os.path.join(out, "summary.txt"), "w") as fh:
            fh.write(text + "\n")
        with open(os.path.join(out, "summary.csv"), "w") as fh:
            fh.write(summary_csv(summary))
        _write_json(os.path.join(out, "summary.json"), summary)
        print(text)
        outputs = [r.out_dir for r in records]
    else:
        record = run_experiment(config, out, resume=args.resume)
        print(json.dumps(record.final, indent=1, sort_keys=True))
        outputs = [os.path.join(out, "run.json")]
    write_manifest(os.path.join(out, "manifest.json"), "train", config.seed,
                   dict(config.to_dict(), seeds=args.seeds), outputs, started)
    return EXIT_OK


def cmd_sample(args):
    started = time.time()
    state = TrainState.load(args.checkpoint)
    count = DEFAULT_EVAL_SAMPLES if args.count is None else args.count
    if count < 0:
        raise UsageError("--count must be nonnegative")
    seed = state.config.seed if args.seed is None else args.seed
    mode = args.mode or state.config.resolved_sample_mode
    out = args.out or _default_out(f"samples/{os.path.basename(args.checkpoint)}-{mode}-seed{seed}.csv")
    _ensure_parent(out)
    if count:
        samples = state.generate(count, mode=mode, seed=seed)
    else:
        samples = np.zeros((0, state.spec.dim))
    samplers.write_samples_csv(out, samples)
    write_manifest(_manifest_path(out), "sample", seed,
                   {"checkpoint": os.path.abspath(args.checkpoint), "count": count, "mode": mode,
                    "checkpoint_config_hash": state.config.config_hash(), "step": state.step},
                   [out], started)
    print(out)
    return EXIT_OK


def cmd_eval(args):
    started = time.time()
    spec = load_spec(args.spec)
    samples = samplers.read_samples_csv(args.samples)
    if spec.discrete:
        report = discrete_fit_report(samples, spec, window=20)
        table = (f"samples      {report['sample_count']}\n"
                 f"TV distance  {report['tv_distance']:.4f}\n"
                 f"TV {{0..20}}   {report['tv_window']:.4f}\n"
                 f"KL           {report['kl']:.4f}")
    else:
        if samples.ndim != 2 or (len(samples) and samples.shape[1] != 2):
            raise UsageError(f"{args.samples}: expected 2 columns for {spec.kind} samples")
        rep = mode_report(samples, spec)
        report, table = rep.to_dict(), rep.table()
    out = args.out or os.path.splitext(args.samples)[0] + ".eval.json"
    _write_json(out, report)
    write_manifest(_manifest_path(out), "eval", args.seed,
                   {"samples": os.path.abspath(args.samples), "spec": spec.to_dict()}, [out], started)
    print(table)
    return EXIT_OK


def cmd_theory(args):
    started = time.time()
    names = list(theory.CHECKS) if args.check == "all" else [args.check]
    seed = 0 if args.seed is None else args.seed
    results = {name: theory.CHECKS[name](seed=seed) for name in names}
    passed = all(r["passed"] for r in results.values())
    verdict = {"passed": passed, "checks": results}
    out = args.out or _default_out(f"theory/{args.check}-seed{seed}.json")
    _write_json(out, verdict)
    write_manifest(_manifest_path(out), "theory", seed, {"check": args.check}, [out], started)
    for name, r in results.items():
        print(f"{name}: {'pass' if r['passed'] else 'FAIL'}")
    return EXIT_OK if passed else EXIT_NUMERIC


def cmd_plot(args):
    started = time.time()
    spec = load_spec(args.spec) if args.spec else None
    samples = samplers.read_samples_csv(args.samples)
    if spec is not None and spec.discrete:
        samples = samples.reshape(-1)
    svg = plot_samples(samples, spec)
    out = args.out or os.path.splitext(args.samples)[0] + ".svg"
    _ensure_parent(out)
    with open(out, "w") as fh:
        fh.write(svg)
    write_manifest(_manifest_path(out), "plot", args.seed,
                   {"samples": os.path.abspath(args.samples), "spec": spec.to_dict() if spec else None},
                   [out], started)
    print(out)
    return EXIT_OK


def cmd_report(args):
    started = time.time()
    records = []
    for path in args.runs:
        if os.path.isdir(path) and not os.path.exists(os.path.join(path, "run.json")):
            # a multi-seed output directory: collect its seed_* runs
            subs = sorted(d for d in os.listdir(path) if os.path.exists(os.path.join(path, d, "run.json")))
            records += [RunRecord.load(os.path.join(path, d)) for d in subs]
        else:
            records.append(RunRecord.load(path))
    try:
        summary = aggregate_records(records)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = args.out or _default_out("report")
    os.makedirs(out, exist_ok=True)
    text = format_summary(summary)
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write(text + "\n")
    with open(os.path.join(out, "summary.csv"), "w") as fh:
        fh.write(summary_csv(summary))
    write_manifest(os.path.join(out, "manifest.json"), "report", None,
                   {"runs": [os.path.abspath(p) for p in args.runs]}, [out], started)
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    p = _Parser(prog="semigen", description="Semi-implicit generator training and evaluation.")
    p.add_argument("--version", action="version", version=f"semigen {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate-data", help="draw a synthetic dataset to CSV")
    g.add_argument("--spec", required=True, help=f"dataset kind ({', '.join(samplers.KINDS)}) or spec JSON")
    g.add_argument("--count", type=int, help="number of samples (default 100000)")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output CSV path")
    g.set_defaults(func=cmd_generate_data)

    t = sub.add_parser("train", help="train one run or a multi-seed batch")
    t.add_argument("--config", help="YAML or JSON file with TrainConfig fields")
    t.add_argument("--seed", type=int)
    t.add_argument("--regime", choices=("sig", "gan", "gan-si"))
    t.add_argument("--steps", type=int)
    t.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds to run")
    t.add_argument("--workers", type=int, default=1, help="parallel processes for multi-seed runs")
    t.add_argument("--resume", action="store_true", help="continue from the latest checkpoint in --out")
    t.add_argument("--out", help="run directory")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="draw samples from a checkpoint")
    s.add_argument("checkpoint", help="checkpoint prefix (or its .json/.bin file)")
    s.add_argument("--count", type=int, help=f"number of samples (default {DEFAULT_EVAL_SAMPLES})")
    s.add_argument("--seed", type=int)
    s.add_argument("--mode", choices=("theta", "x"), help="generator outputs or full observations")
    s.add_argument("--out", help="output CSV path")
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="score a sample CSV against a dataset spec")
    e.add_argument("--samples", required=True)
    e.add_argument("--spec", required=True)
    e.add_argument("--seed", type=int)
    e.add_argument("--out", help="report JSON path")
    e.set_defaults(func=cmd_eval)

    th = sub.add_parser("theory", help="run the executable theory checks")
    th.add_argument("--check", choices=(*theory.CHECKS, "all"), default="all")
    th.add_argument("--seed", type=int)
    th.add_argument("--out", help="verdict JSON path")
    th.set_defaults(func=cmd_theory)

    pl = sub.add_parser("plot", help="render samples as a deterministic SVG")
    pl.add_argument("--samples", required=True)
    pl.add_argument("--spec")
    pl.add_argument("--seed", type=int)
    pl.add_argument("--out", help="output SVG path")
    pl.set_defaults(func=cmd_plot)

    r = sub.add_parser("report", help="aggregate run records into a mean±std table")
    r.add_argument("runs", nargs="+", help="run directories or run.json files")
    r.add_argument("--out", help="directory for summary.txt and summary.csv")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, KeyError) as exc:
        print(f"semigen {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"semigen {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, json.JSONDecodeError, yaml.YAMLError) as exc:
        print(f"semigen {args.command}: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"semigen {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
