"""``memorymamba`` command line: train, eval, ablate, sweep, gradcheck, synth.

Exit codes: 0 success, 1 internal error (including failed gradient checks),
2 usage or data error, 3 checkpoint error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .checkpoint import load_checkpoint, model_from_checkpoint
from .config import RunConfig, load_config
from .data import SynthSpec, load_split, scan_folder, synth_generate
from .errors import CheckpointError, ConfigurationError, DataError, ManifestError, MemoryMambaError
from .experiments import ABLATION_VARIANTS, SWEEP_AXES, parse_sweep_values, run_ablation, run_sweep
from .metrics import write_report
from .train import check_classes, evaluate_split, train
from .verification import MODULES, all_checks, format_table, run_checks

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_CHECKPOINT = 3

log = logging.getLogger("memorymamba")


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(optim={"seed": args.seed})
    return cfg


def _manifest(path: str):
    if not Path(path).is_dir():
        raise ManifestError(f"data directory {path} does not exist")
    return scan_folder(path)


def cmd_train(args) -> int:
    cfg = _config(args)
    manifest = _manifest(args.data)
    result = train(cfg, manifest, args.out, log=log.info)
    r = result.test_report
    print(f"steps {result.steps}  test acc {r.acc:.4f}  f1 {r.macro_f1:.4f}")
    print(f"checkpoint {result.checkpoint_path}  sha256 {result.checkpoint_digest}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    manifest = _manifest(args.data)
    check_classes(ckpt.config, manifest)
    model = model_from_checkpoint(ckpt)
    images, labels = load_split(manifest, args.split, ckpt.config.model.image_size)
    report = evaluate_split(model, images, labels)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    dataset = Path(manifest.root).name
    write_report(report, out / f"eval_{args.split}.csv", "csv", dataset=dataset)
    write_report(report, out / f"eval_{args.split}.json", "json", dataset=dataset)
    print(f"{args.split}: acc {report.acc:.4f}  prec {report.macro_prec:.4f}  rec {report.macro_rec:.4f}  f1 {report.macro_f1:.4f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    manifest = _manifest(args.data)
    rows = run_ablation(cfg, manifest, args.out, variants=args.variants, parallel=args.jobs)
    for row in rows:
        print(f"{row['method']:<22} acc {row['acc']}  f1 {row['f1']}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    values = parse_sweep_values(args.axis, args.values)
    manifest = _manifest(args.data)
    rows = run_sweep(cfg, manifest, args.axis, values, args.out, parallel=args.jobs)
    for row in rows:
        print(f"{args.axis}={row['value']:<8} acc {row['acc']}  f1 {row['f1']}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_checks(all_checks(args.module))
    print(format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_INTERNAL


def cmd_synth(args) -> int:
    spec = SynthSpec(num_classes=args.classes, images_per_class=args.per_class, image_size=args.size, seed=args.seed)
    if spec.num_classes < 2 or spec.images_per_class < 2 or spec.image_size < 8:
        raise ConfigurationError("synth needs at least 2 classes, 2 images per class and size >= 8")
    manifest = synth_generate(spec, args.out)
    counts = manifest.counts()
    print(f"{len(manifest.class_names)} classes, {counts['train']} train / {counts['test']} test -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memorymamba", description="Memory-augmented selective-scan defect classifier.")
    parser.add_argument("-q", "--quiet", action="store_true", help="only print results")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_args(p, out_required=True):
        p.add_argument("--config", help="TOML config file (defaults are used when omitted)")
        p.add_argument("--data", required=True, help="dataset root with train/ and test/ class folders")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--seed", type=int, help="override optim.seed")

    p = sub.add_parser("train", help="train one model")
    run_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--out", help="report directory (default: next to the checkpoint)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train the full model and its six ablations")
    run_args(p)
    p.add_argument(
        "--variants", nargs="+", metavar="NAME", choices=[n for n, _ in ABLATION_VARIANTS], help="subset of variants (table order kept)"
    )
    p.add_argument("--jobs", type=int, default=1, help="variants trained concurrently")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="one run per value of a memory or similarity setting")
    run_args(p)
    p.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    p.add_argument("--values", required=True, help="comma-separated, e.g. 2,4,8 or cosine,l1,l2")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--module", action="append", choices=MODULES, help="restrict to a module (repeatable)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write the synthetic defect dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=32)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=1)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(list(argv) if argv is not None else None)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (ConfigurationError, ManifestError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MemoryMambaError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
