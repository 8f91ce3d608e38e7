"""Teacher/student self-training over the bridge diffusion translator.

Phase 1 trains a teacher on the paired split.  Phase 2 runs the teacher
over every unpaired degraded image to synthesize pseudo-label targets.
Phase 3 trains a student, initialized from the teacher weights, on the
union of real and pseudo pairs.  Phase 4 evaluates the input baseline,
teacher, and student on the held-out test split and emits a three-row
report (one pseudo-label pass; no recursion).
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from . import bridge
from .autodiff import Tensor, backward, scale
from .autodiff import mse as mse_node
from .dataset import ROLE_PAIRED, ROLE_PSEUDO, ROLE_TEST, ROLE_UNPAIRED, DatasetManifest, ManifestItem
from .denoiser import Denoiser, DenoiserConfig, forward_graph, init_params, wrap_params
from .formats import checkpoint_id, save_checkpoint, write_imgf
from .metrics import MetricsReport, evaluate_pairs, render_table
from .optim import AdamState, adam_step


class TrainingError(RuntimeError):
    """Training could not proceed (empty dataset, non-finite loss, ...)."""


@dataclass(frozen=True)
class TrainConfig:
    train_steps: int = 2000
    batch_size: int = 8
    learning_rate: float = 3e-3
    lr_decay: bool = True
    seed: int = 0
    total_steps: int = 50
    stride: int = 1
    eval_every: int = 100
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)

    def __post_init__(self):
        if min(self.batch_size, self.eval_every) < 1 or self.train_steps < 0:
            raise ValueError("train_steps must be >= 0 and batch_size/eval_every >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.stride < 1 or self.total_steps % self.stride != 0:
            raise ValueError(f"stride {self.stride} must divide total_steps {self.total_steps}")

    def lr_at(self, step: int) -> float:
        """Half-period cosine decay from learning_rate to a tenth of it."""
        if not self.lr_decay or self.train_steps <= 1:
            return self.learning_rate
        lo = 0.1 * self.learning_rate
        frac = (step - 1) / (self.train_steps - 1)
        return lo + 0.5 * (self.learning_rate - lo) * (1.0 + np.cos(np.pi * frac))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainingRecord:
    """Per-step losses, final checkpoint id, wall time, config echo.

    duration_seconds is the single nondeterministic field; everything else
    is reproducible bit-for-bit from the config and seed.
    """

    losses: list[tuple[int, float]]
    checkpoint_id: str
    duration_seconds: float
    config: dict

    def to_dict(self) -> dict:
        return {
            "losses": [[s, l] for s, l in self.losses],
            "checkpoint_id": self.checkpoint_id,
            "duration_seconds": self.duration_seconds,
            "config": self.config,
        }


def _load_pairs(manifest: DatasetManifest, roles: Iterable[str]) -> list[tuple[np.ndarray, np.ndarray]]:
    pairs = []
    for role in roles:
        for item in manifest.items_by_role(role):
            if item.ct is None:
                continue
            pairs.append((manifest.load_image(item.ct), manifest.load_image(item.cbct)))
    return pairs


def train_model(
    manifest: DatasetManifest,
    roles: Iterable[str],
    cfg: TrainConfig,
    init: Mapping[str, np.ndarray] | None = None,
    label: str = "train",
) -> tuple[dict[str, np.ndarray], TrainingRecord]:
    """Adam-optimized clean-image regression over bridge training pairs.

    Batches are drawn uniformly (with replacement) across the usable pairs
    of the selected roles.  With ``init`` given and zero steps, the returned
    params equal ``init`` bit-exactly.  Deterministic per seed.
    """
    roles = list(roles)
    pairs = _load_pairs(manifest, roles)
    if not pairs:
        raise TrainingError(f"no usable training pairs in roles {roles}")
    sched = bridge.make_schedule(cfg.total_steps)
    if init is not None:
        params = {name: np.array(arr, dtype=np.float64) for name, arr in init.items()}
    else:
        params = init_params(cfg.denoiser, np.random.SeedSequence([cfg.seed, 0]))
    state = AdamState.for_params(params)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))

    started = time.perf_counter()
    losses: list[tuple[int, float]] = []
    for step in range(1, cfg.train_steps + 1):
        idxs = rng.integers(0, len(pairs), size=cfg.batch_size)
        ptensors = wrap_params(params)
        total = None
        for idx in idxs:
            p0, q = pairs[idx]
            p_t, t, target = bridge.make_training_pair(p0, q, sched, rng)
            pred = forward_graph(ptensors, Tensor(p_t), t, cfg.denoiser)
            item_loss = mse_node(pred, Tensor(target))
            total = item_loss if total is None else total + item_loss
        total = scale(total, 1.0 / cfg.batch_size)
        loss_val = float(total.data)
        if not np.isfinite(loss_val):
            raise TrainingError(f"non-finite loss at step {step}")
        grads = backward(total, ptensors)
        adam_step(params, grads, state, lr=cfg.lr_at(step))
        losses.append((step, loss_val))
        if step % cfg.eval_every == 0 or step == cfg.train_steps:
            print(f"[{label}] step {step}/{cfg.train_steps} loss={loss_val:.6f}", flush=True)

    record = TrainingRecord(
        losses=losses,
        checkpoint_id=checkpoint_id(params),
        duration_seconds=time.perf_counter() - started,
        config=cfg.to_dict(),
    )
    return params, record


def translate_set(
    params: Mapping[str, np.ndarray],
    cfg: TrainConfig,
    images: list[np.ndarray],
    stream_tag: int,
) -> list[np.ndarray]:
    """Run the reverse sampler over a list of degraded images."""
    sched = bridge.make_schedule(cfg.total_steps)
    model = Denoiser(cfg.denoiser, params)
    out = []
    for idx, q in enumerate(images):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, stream_tag, idx]))
        out.append(bridge.sample_translation(q, model.predict, sched, rng, stride=cfg.stride))
    return out


def generate_pseudo_labels(
    teacher: Mapping[str, np.ndarray],
    manifest: DatasetManifest,
    cfg: TrainConfig,
    out_dir,
) -> DatasetManifest:
    """Synthesize a clean-image target for every unpaired degraded image.

    Writes the pseudo images and an updated manifest under out_dir; the
    pseudo pair count always equals the unpaired count.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    unpaired = manifest.items_by_role(ROLE_UNPAIRED)
    images = [manifest.load_image(it.cbct) for it in unpaired]
    translated = translate_set(teacher, cfg, images, stream_tag=5)

    def rel_from_out(rel: str) -> str:
        return os.path.relpath(manifest.resolve(rel), out_dir)

    items = [
        ManifestItem(
            item_id=it.item_id,
            role=it.role,
            phantom_seed=it.phantom_seed,
            ct=None if it.ct is None else rel_from_out(it.ct),
            cbct=rel_from_out(it.cbct),
        )
        for it in manifest.items
    ]
    for i, (item, pseudo) in enumerate(zip(unpaired, translated)):
        pseudo_rel = f"images/pseudo_{i:04d}_ct.imgf"
        write_imgf(out_dir / pseudo_rel, pseudo)
        items.append(
            ManifestItem(
                item_id=f"pseudo_{i:04d}",
                role=ROLE_PSEUDO,
                phantom_seed=item.phantom_seed,
                ct=pseudo_rel,
                cbct=rel_from_out(item.cbct),
            )
        )
    updated = DatasetManifest(
        image_size=manifest.image_size,
        seed=manifest.seed,
        normalization_window=manifest.normalization_window,
        degradation=manifest.degradation,
        items=items,
        root=out_dir,
    )
    updated.save(out_dir / "manifest.json")
    updated.validate()
    return updated


@dataclass
class SelfTrainingSummary:
    teacher_checkpoint_id: str
    student_checkpoint_id: str
    teacher_record: TrainingRecord
    student_record: TrainingRecord
    reports: dict[str, MetricsReport]

    def report_rows(self) -> list[tuple[str, MetricsReport]]:
        return [(name, self.reports[name]) for name in ("input", "teacher", "student")]

    def to_dict(self) -> dict:
        return {
            "teacher_checkpoint_id": self.teacher_checkpoint_id,
            "student_checkpoint_id": self.student_checkpoint_id,
            "reports": {name: rep.to_dict() for name, rep in self.reports.items()},
        }


def run_self_training(
    manifest: DatasetManifest,
    teacher_cfg: TrainConfig,
    student_cfg: TrainConfig,
    out_dir,
) -> SelfTrainingSummary:
    """The full workflow: teacher -> pseudo-labels -> student -> evaluation."""
    out_dir = Path(out_dir)
    for sub in ("checkpoints", "records", "reports"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)

    phase = "teacher training"
    try:
        teacher, teacher_record = train_model(manifest, [ROLE_PAIRED], teacher_cfg, label="teacher")
        save_checkpoint(teacher, out_dir / "checkpoints" / "teacher.bbkd1")

        phase = "pseudo-label generation"
        print(f"[pseudo] translating {len(manifest.items_by_role(ROLE_UNPAIRED))} unpaired images", flush=True)
        augmented = generate_pseudo_labels(teacher, manifest, teacher_cfg, out_dir / "pseudo")

        phase = "student training"
        student, student_record = train_model(
            augmented, [ROLE_PAIRED, ROLE_PSEUDO], student_cfg, init=teacher, label="student"
        )
        save_checkpoint(student, out_dir / "checkpoints" / "student.bbkd1")

        phase = "evaluation"
        test_items = manifest.items_by_role(ROLE_TEST)
        truths = [manifest.load_image(it.ct) for it in test_items]
        inputs = [manifest.load_image(it.cbct) for it in test_items]
        ids = [it.item_id for it in test_items]
        print(f"[eval] translating {len(test_items)} test images per model", flush=True)
        reports = {
            "input": evaluate_pairs(inputs, truths, ids, metadata={"model": "input"}),
            "teacher": evaluate_pairs(
                translate_set(teacher, teacher_cfg, inputs, stream_tag=6), truths, ids, metadata={"model": "teacher"}
            ),
            "student": evaluate_pairs(
                translate_set(student, student_cfg, inputs, stream_tag=7), truths, ids, metadata={"model": "student"}
            ),
        }
    except Exception as exc:
        raise TrainingError(f"self-training failed during {phase}: {exc}") from exc

    summary = SelfTrainingSummary(
        teacher_checkpoint_id=teacher_record.checkpoint_id,
        student_checkpoint_id=student_record.checkpoint_id,
        teacher_record=teacher_record,
        student_record=student_record,
        reports=reports,
    )
    (out_dir / "records" / "teacher.json").write_text(json.dumps(teacher_record.to_dict(), indent=2, sort_keys=True) + "\n")
    (out_dir / "records" / "student.json").write_text(json.dumps(student_record.to_dict(), indent=2, sort_keys=True) + "\n")
    for name, rep in summary.reports.items():
        (out_dir / "reports" / f"{name}.json").write_text(json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n")
    (out_dir / "reports" / "summary.json").write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n")
    table = render_table(summary.report_rows())
    (out_dir / "reports" / "report.txt").write_text(table + "\n")
    print(table, flush=True)
    return summary
