"""Command-line entry points binding the pipeline together.

Subcommands: gen-data, train-teacher, pseudo-label, train-student,
self-train, translate, evaluate.  Every failure exits nonzero after a
single machine-parsable line ``error: <category>: <message>``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import bridge, selftrain
from .config import ConfigError, PipelineConfig, load_config
from .dataset import ROLE_PAIRED, ROLE_PSEUDO, DatasetManifest, ManifestError, build_dataset
from .denoiser import Denoiser
from .formats import FormatError, export_png, load_checkpoint, read_imgf, save_checkpoint, write_imgf
from .metrics import evaluate_pairs, render_table
from .selftrain import TrainingError


def _resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.out_dir is not None:
        cfg = dataclasses.replace(cfg, out_dir=args.out_dir)
    return cfg


def _data_dir(cfg: PipelineConfig) -> Path:
    return Path(cfg.out_dir) / "data"


def cmd_gen_data(args) -> int:
    cfg = _resolve_config(args)
    manifest = build_dataset(
        cfg.n_paired, cfg.n_unpaired, cfg.n_test, cfg.image_size, cfg.degradation, cfg.seed, _data_dir(cfg)
    )
    counts = manifest.counts()
    print(f"wrote {sum(counts.values())} items to {_data_dir(cfg)} ({counts})")
    return 0


def _load_manifest(args, cfg: PipelineConfig) -> DatasetManifest:
    path = Path(args.manifest) if args.manifest else _data_dir(cfg) / "manifest.json"
    return DatasetManifest.load(path)


def cmd_train_teacher(args) -> int:
    cfg = _resolve_config(args)
    manifest = _load_manifest(args, cfg)
    params, record = selftrain.train_model(manifest, [ROLE_PAIRED], cfg.train_config(cfg.teacher), label="teacher")
    out = Path(cfg.out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, out / "checkpoints" / "teacher.bbkd1")
    (out / "records").mkdir(parents=True, exist_ok=True)
    (out / "records" / "teacher.json").write_text(json.dumps(record.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"teacher checkpoint {record.checkpoint_id[:12]} -> {out / 'checkpoints' / 'teacher.bbkd1'}")
    return 0


def cmd_pseudo_label(args) -> int:
    cfg = _resolve_config(args)
    manifest = _load_manifest(args, cfg)
    teacher = load_checkpoint(args.checkpoint)
    updated = selftrain.generate_pseudo_labels(
        teacher, manifest, cfg.train_config(cfg.teacher), Path(cfg.out_dir) / "pseudo"
    )
    print(f"pseudo-labeled {updated.counts()[ROLE_PSEUDO]} items -> {Path(cfg.out_dir) / 'pseudo'}")
    return 0


def cmd_train_student(args) -> int:
    cfg = _resolve_config(args)
    manifest = _load_manifest(args, cfg)
    teacher = load_checkpoint(args.init)
    params, record = selftrain.train_model(
        manifest, [ROLE_PAIRED, ROLE_PSEUDO], cfg.train_config(cfg.student), init=teacher, label="student"
    )
    out = Path(cfg.out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, out / "checkpoints" / "student.bbkd1")
    (out / "records").mkdir(parents=True, exist_ok=True)
    (out / "records" / "student.json").write_text(json.dumps(record.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"student checkpoint {record.checkpoint_id[:12]} -> {out / 'checkpoints' / 'student.bbkd1'}")
    return 0


def cmd_self_train(args) -> int:
    cfg = _resolve_config(args)
    out = Path(cfg.out_dir)
    manifest = build_dataset(
        cfg.n_paired, cfg.n_unpaired, cfg.n_test, cfg.image_size, cfg.degradation, cfg.seed, out / "data"
    )
    selftrain.run_self_training(manifest, cfg.train_config(cfg.teacher), cfg.train_config(cfg.student), out)
    return 0


def cmd_translate(args) -> int:
    cfg = _resolve_config(args)
    params = load_checkpoint(args.checkpoint)
    q = read_imgf(args.input)
    model = Denoiser(cfg.denoiser, params)
    sched = bridge.make_schedule(cfg.total_steps)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 8]))
    out = bridge.sample_translation(q, model.predict, sched, rng, stride=cfg.stride)
    write_imgf(args.output, out)
    if args.png:
        export_png(out, args.png)
    print(f"translated {args.input} -> {args.output}")
    return 0


def cmd_evaluate(args) -> int:
    pred_dir = Path(args.pred_dir)
    truth_dir = Path(args.truth_dir)
    preds, truths, ids = [], [], []
    for pred_path in sorted(pred_dir.glob("*.imgf")):
        truth_path = truth_dir / pred_path.name
        if not truth_path.exists():
            raise ManifestError(f"no ground-truth image for {pred_path.name}")
        preds.append(read_imgf(pred_path))
        truths.append(read_imgf(truth_path))
        ids.append(pred_path.stem)
    if not preds:
        raise ManifestError(f"no .imgf files found in {pred_dir}")
    report = evaluate_pairs(preds, truths, ids, metadata={"pred_dir": str(pred_dir)})
    print(render_table([("pred", report)]))
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bbkd", description="Bridge-diffusion image translation with self-training")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON pipeline config (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out-dir", help="override the config output directory")

    common(sub.add_parser("gen-data", help="generate the phantom dataset"))

    p = sub.add_parser("train-teacher", help="train the teacher on paired data")
    common(p)
    p.add_argument("--manifest", help="dataset manifest path (default: OUT_DIR/data/manifest.json)")

    p = sub.add_parser("pseudo-label", help="teacher-translate the unpaired split")
    common(p)
    p.add_argument("--manifest")
    p.add_argument("--checkpoint", required=True, help="teacher checkpoint")

    p = sub.add_parser("train-student", help="train the student on real + pseudo pairs")
    common(p)
    p.add_argument("--manifest", help="manifest with pseudo-labeled items")
    p.add_argument("--init", required=True, help="teacher checkpoint to initialize from")

    common(sub.add_parser("self-train", help="run the full workflow"))

    p = sub.add_parser("translate", help="translate one image through a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--png", help="also export a 16-bit preview")

    p = sub.add_parser("evaluate", help="score a prediction directory against ground truth")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--truth-dir", required=True)
    p.add_argument("--report", help="write the JSON report here")
    return parser


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-teacher": cmd_train_teacher,
    "pseudo-label": cmd_pseudo_label,
    "train-student": cmd_train_student,
    "self-train": cmd_self_train,
    "translate": cmd_translate,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
    except (FormatError, OSError) as exc:
        print(f"error: io: {exc}", file=sys.stderr)
    except ManifestError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
    except TrainingError as exc:
        print(f"error: train: {exc}", file=sys.stderr)
    except ValueError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
    except Exception as exc:  # pragma: no cover - last resort
        print(f"error: internal: {type(exc).__name__}: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
