"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

from .evaluation import FilterIndex, evaluate, metrics_row, write_metrics_csv
from .kg_data import DataError, ParseError, export_frequency_ranks, extract_sparse_subset, load_data_dir, write_triples
from .loss import LossConfig, LossFamily
from .scoring import ModelKind
from .smoothing import SubsamplingAssumption
from .synth import SynthConfig, generate
from .trainer import (CheckpointError, TrainConfig, TrainingDiverged, read_checkpoint, save_checkpoint,
                      train, write_curves_csv)

log = logging.getLogger("kgsmooth")


class UsageError(Exception):
    pass


# name -> (type, default); a default of None is resolved from the loss family
TRAIN_OPTIONS = {
    "model": (str, "distmult"),
    "loss": (str, "ns"),
    "assumption": (str, "none"),
    "alpha": (float, None),
    "beta": (float, None),
    "gamma": (float, None),
    "eta": (float, 1.0),
    "tau": (float, 0.0),
    "nu": (int, 16),
    "dim": (int, 32),
    "epochs": (int, 100),
    "batch": (int, 256),
    "lr": (float, 1e-3),
    "optimizer": (str, "adam"),
    "seed": (int, 0),
    "eval_every": (int, 10),
    "filter_negatives": (lambda s: str(s).lower() in ("1", "true", "yes", "on"), False),
    "group_by_query": (lambda s: str(s).lower() in ("1", "true", "yes", "on"), False),
}


def _read_config(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in TRAIN_OPTIONS and key not in ("data_dir", "out_dir", "threads"):
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def resolve_train_options(args) -> dict:
    """Merge defaults, config file and flags (flags win)."""
    conf = _read_config(args.config) if args.config else {}
    opts = {}
    for name, (conv, default) in TRAIN_OPTIONS.items():
        flag = getattr(args, name, None)
        try:
            if flag is not None:
                opts[name] = conv(flag)
            elif name in conf:
                opts[name] = conv(conf[name])
            else:
                opts[name] = default
        except ValueError as exc:
            raise UsageError(f"bad value for {name}: {exc}") from None
    for name in ("data_dir", "out_dir"):
        opts[name] = getattr(args, name, None) or conf.get(name)
        if not opts[name]:
            raise UsageError(f"--{name.replace('_', '-')} is required")
    opts["threads"] = args.threads if args.threads is not None else int(conf.get("threads", 1))

    family = opts["loss"]
    if family not in {f.value for f in LossFamily}:
        raise UsageError(f"unknown loss {family!r}")
    if opts["beta"] is None:
        opts["beta"] = 0.0 if family == "ns" else 1.0
    if opts["gamma"] is None:
        opts["gamma"] = -0.5 if family in ("tans", "unified") else 0.0
    if opts["alpha"] is None:
        opts["alpha"] = 0.0 if opts["assumption"] == "none" else 0.5
    return opts


LATTICE_HELP = (
    "Loss lattice: ns uses no temperatures (beta = gamma = 0); sans adds beta; "
    "tans adds beta and gamma; unified additionally takes eta. alpha applies "
    "only with --assumption base|freq|uniq."
)


def build_train_config(opts: dict) -> TrainConfig:
    try:
        kind = ModelKind(opts["model"])
        assumption = SubsamplingAssumption(opts["assumption"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    lcfg_args = dict(family=opts["loss"], alpha=opts["alpha"], beta=opts["beta"],
                     gamma=opts["gamma"], eta=opts["eta"], tau=opts["tau"], nu=opts["nu"],
                     assumption=assumption, group_by_query=opts["group_by_query"])
    try:
        loss_cfg = LossConfig(**lcfg_args)
    except ValueError as exc:
        raise UsageError(f"{exc}\n{LATTICE_HELP}") from None
    if kind.is_complex and opts["dim"] % 2:
        raise UsageError(f"{kind.value} needs an even --dim, got {opts['dim']}")
    try:
        return TrainConfig(
            loss=loss_cfg, model=kind, dim=opts["dim"],
            batch_size=opts["batch"], epochs=opts["epochs"], learning_rate=opts["lr"],
            optimizer=opts["optimizer"], seed=opts["seed"], eval_every=opts["eval_every"],
            negative_filtering=opts["filter_negatives"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def git_blob_hash(path) -> str:
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _require_data_dir(data_dir) -> Path:
    d = Path(data_dir)
    missing = [n for n in ("train.txt", "valid.txt", "test.txt") if not (d / n).is_file()]
    if not d.is_dir():
        raise UsageError(f"data directory {d} does not exist")
    if missing:
        raise UsageError(f"data directory {d} lacks {', '.join(missing)}")
    return d


def _metric_meta(opts: dict, split: str) -> dict:
    return dict(model=opts["model"], loss=opts["loss"], assumption=opts["assumption"],
                alpha=opts["alpha"], beta=opts["beta"], gamma=opts["gamma"],
                eta=opts["eta"], seed=opts["seed"], split=split)


def cmd_train(args) -> int:
    opts = resolve_train_options(args)
    cfg = build_train_config(opts)
    data_dir = _require_data_dir(opts["data_dir"])
    dataset = load_data_dir(data_dir)
    out = Path(opts["out_dir"])
    out.mkdir(parents=True, exist_ok=True)

    manifest = {
        "command": "train",
        "config": {k: v for k, v in opts.items() if k not in ("data_dir", "out_dir", "threads")},
        "data_dir": str(data_dir),
        "inputs": {n: git_blob_hash(data_dir / n) for n in ("train.txt", "valid.txt", "test.txt")},
        "outputs": {"checkpoint": "checkpoint.bin", "curves": "curves.csv", "metrics": "metrics.csv"},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    report = train(dataset, cfg, threads=opts["threads"])
    save_checkpoint(report.params, out / "checkpoint.bin",
                    meta=_metric_meta(opts, "") | {"seed": opts["seed"]})
    write_curves_csv(report, out / "curves.csv")
    filt = FilterIndex.from_dataset(dataset)
    rows = []
    for split in ("valid", "test"):
        if len(dataset.split(split)):
            m = evaluate(report.params, dataset, split, filtered=True,
                         threads=opts["threads"], filter_index=filt)
            rows.append(metrics_row(m, **_metric_meta(opts, split)))
            log.info("%s mrr=%.4f h1=%.4f h3=%.4f h10=%.4f", split, m.mrr, m.hits1, m.hits3, m.hits10)
    write_metrics_csv(rows, out / "metrics.csv")
    return 0


def cmd_eval(args) -> int:
    data_dir = _require_data_dir(args.data_dir)
    if not Path(args.checkpoint).is_file():
        raise UsageError(f"checkpoint {args.checkpoint} does not exist")
    try:
        params, meta = read_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        raise UsageError(str(exc)) from None
    if args.model and ModelKind(args.model) is not params.kind:
        raise UsageError(f"checkpoint holds a {params.kind.value} model, requested {args.model}")
    if args.dim and args.dim != params.dim:
        raise UsageError(f"checkpoint has dim {params.dim}, requested {args.dim}")
    dataset = load_data_dir(data_dir)
    if (dataset.n_entities, dataset.n_relations) != (params.n_entities, params.n_relations):
        raise UsageError(
            f"checkpoint covers {params.n_entities} entities / {params.n_relations} relations, "
            f"data has {dataset.n_entities} / {dataset.n_relations}")
    m = evaluate(params, dataset, args.split, filtered=not args.raw, threads=args.threads or 1)
    row = metrics_row(m, **{**{k: meta.get(k, "") for k in
                               ("model", "loss", "assumption", "alpha", "beta", "gamma", "eta", "seed")},
                            "model": params.kind.value, "split": args.split})
    if args.out_dir:
        name = f"metrics_{args.split}{'_raw' if args.raw else ''}.csv"
        write_metrics_csv([row], Path(args.out_dir) / name)
    writer = csv.DictWriter(sys.stdout, fieldnames=list(row), lineterminator="\n")
    writer.writeheader()
    writer.writerow(row)
    return 0


def cmd_stats(args) -> int:
    dataset = load_data_dir(_require_data_dir(args.data_dir))
    export_frequency_ranks(dataset, Path(args.out_dir) / "frequency_ranks.csv")
    return 0


def cmd_extract_hl(args) -> int:
    if not (0 < args.fraction <= 0.5):
        raise UsageError(f"--fraction must lie in (0, 0.5], got {args.fraction}")
    dataset = load_data_dir(_require_data_dir(args.data_dir))
    subset = extract_sparse_subset(dataset, args.fraction, args.mode)
    write_triples(subset, args.out_dir)
    return 0


def cmd_synth(args) -> int:
    cfg = SynthConfig(args.n_entities, args.n_relations, args.n_triples, args.zipf, args.seed)
    try:
        dataset = generate(cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_triples(dataset, args.out_dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgsmooth", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and export curves, checkpoint and metrics",
                       epilog=LATTICE_HELP)
    p.add_argument("--config", help="key=value file; flags override it")
    p.add_argument("--data-dir")
    p.add_argument("--out-dir")
    p.add_argument("--threads", type=int)
    p.add_argument("--model", choices=[k.value for k in ModelKind])
    p.add_argument("--loss", choices=[f.value for f in LossFamily])
    p.add_argument("--assumption", choices=[a.value for a in SubsamplingAssumption])
    for name in ("alpha", "beta", "gamma", "eta", "tau", "lr"):
        p.add_argument(f"--{name}", type=float)
    for name in ("nu", "dim", "epochs", "batch", "seed", "eval-every"):
        p.add_argument(f"--{name}", type=int)
    p.add_argument("--optimizer", choices=["adam", "sgd"])
    p.add_argument("--filter-negatives", action="store_const", const="true")
    p.add_argument("--group-by-query", action="store_const", const="true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--split", default="test", choices=["train", "valid", "test"])
    p.add_argument("--raw", action="store_true", help="unfiltered ranking")
    p.add_argument("--model", choices=[k.value for k in ModelKind])
    p.add_argument("--dim", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="export query/answer frequency ranks")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("extract-hl", help="extract the highest/lowest query-frequency subset")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--fraction", type=float, default=0.005)
    p.add_argument("--mode", choices=["high", "low", "both"], default="both")
    p.set_defaults(func=cmd_extract_hl)

    p = sub.add_parser("synth", help="generate a synthetic power-law KG")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-entities", type=int, default=500)
    p.add_argument("--n-relations", type=int, default=10)
    p.add_argument("--n-triples", type=int, default=5000)
    p.add_argument("--zipf", type=float, default=1.2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"kgsmooth {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except (ParseError, DataError, CheckpointError, TrainingDiverged, OSError, ValueError) as exc:
        print(f"kgsmooth {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
