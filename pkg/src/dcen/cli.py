"""``dcen`` command line: synth, train, eval, sweep.

Failures print a single line ``dcen-error[<Kind>]: <message>`` to stderr and
exit with status 1 (status 2 for usage errors, as argparse does).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import checkpoint
from .config import TrainConfig, load_config, synth_from_dict
from .data import (DimensionMismatchError, GZSLDataset, generate_synthetic, load_dataset_dir,
                   save_dataset, validate_dataset)
from .evaluator import GZSLReport, evaluate_gzsl
from .sweep import SweepSpec, run_sweep
from .trainer import train

log = logging.getLogger("dcen")


def _dataset(args, doc: dict) -> GZSLDataset:
    if args.data:
        return load_dataset_dir(Path(args.data))
    synth = synth_from_dict(doc.get("synth", {}))
    log.info("no --data given; generating synthetic dataset %s", synth)
    return generate_synthetic(synth)


def _train_config(doc: dict, seed: int | None) -> TrainConfig:
    d = dict(doc.get("train", {}))
    if seed is not None:
        d["seed"] = seed
    return TrainConfig.from_dict(d)


def write_report(report: GZSLReport, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report.to_table())
    (out / "report.csv").write_text(report.to_csv())
    (out / "report.json").write_text(report.to_json() + "\n")


def cmd_synth(args) -> int:
    doc = load_config(args.config, args.set)
    synth = dict(doc.get("synth", {}))
    if args.seed is not None:
        synth["seed"] = args.seed
    ds = generate_synthetic(synth_from_dict(synth))
    report = validate_dataset(ds)
    if not report.ok:
        raise ValueError("generated dataset failed validation: " + "; ".join(report.issues))
    paths = save_dataset(ds, Path(args.out))
    print(f"wrote {len(ds.labels)} samples, {len(ds.attributes.class_ids)} classes to {paths['data'].parent}")
    return 0


def cmd_train(args) -> int:
    doc = load_config(args.config, args.set)
    cfg = _train_config(doc, args.seed)
    ds = _dataset(args, doc)
    resume = Path(args.resume).read_bytes() if args.resume else None
    out = Path(args.out)
    res = train(ds, cfg, out_dir=out, resume=resume)
    report = evaluate_gzsl(res.state.encoders, ds)
    write_report(report, out)
    print(report.to_table(), end="")
    return 0


def cmd_eval(args) -> int:
    state, cfg = checkpoint.load(args.checkpoint)
    doc = load_config(args.config, args.set)
    ds = _dataset(args, doc)
    arch = state.encoders.arch
    if ds.attributes.attr_dim != arch.attr_dim:
        raise DimensionMismatchError(f"checkpoint expects attr_dim {arch.attr_dim}, "
                                     f"dataset has attr_dim {ds.attributes.attr_dim}")
    if tuple(ds.x.shape[1:]) != tuple(arch.input_shape):
        raise DimensionMismatchError(f"checkpoint expects inputs of shape {tuple(arch.input_shape)}, "
                                     f"dataset has {tuple(ds.x.shape[1:])}")
    report = evaluate_gzsl(state.encoders, ds)
    if args.out:
        write_report(report, Path(args.out))
    print(report.to_table(), end="")
    return 0


def cmd_sweep(args) -> int:
    spec = SweepSpec.load(args.config)
    doc = load_config(spec.base_config, args.set)
    base = _train_config(doc, args.seed)
    ds = _dataset(args, doc)
    rows = run_sweep(spec, ds, base, Path(args.out))
    print(f"{len(rows)} cells written to {Path(args.out) / f'sweep_{spec.param}.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dcen", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--seed", type=int, help="override the seed")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-path config override, e.g. train.lambda1=0.5 (repeatable)")
        if data:
            sp.add_argument("--data", help="dataset directory (default: generate from the synth section)")

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    common(sp, data=False)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train and write checkpoint, metrics and report")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    sp.add_argument("checkpoint")
    common(sp)
    sp.add_argument("--out", help="directory for report.txt/csv/json")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep", help="run an ablation sweep (config is a sweep file)")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command == "sweep" and not args.config:
        print("dcen-error[UsageError]: sweep needs --config <sweep file>", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - the CLI reports every failure the same way
        msg = " ".join(str(exc).split())
        print(f"dcen-error[{type(exc).__name__}]: {msg}", file=sys.stderr)
        if args.verbose:
            log.exception("traceback")
        return 1


if __name__ == "__main__":
    sys.exit(main())
