"""Self-training protocol: phases, determinism, data accounting."""

import dataclasses

import numpy as np
import pytest

from bbkd.dataset import ROLE_PAIRED, ROLE_PSEUDO, ROLE_TEST, ROLE_UNPAIRED, DatasetManifest, build_dataset
from bbkd.denoiser import DenoiserConfig, init_params
from bbkd.formats import load_checkpoint
from bbkd.phantom import DegradationConfig
from bbkd.selftrain import (
    TrainConfig,
    TrainingError,
    generate_pseudo_labels,
    run_self_training,
    train_model,
)

TINY_NET = DenoiserConfig(base_channels=8, num_blocks=1, time_embed_dim=8)
TINY_CFG = TrainConfig(
    train_steps=30,
    batch_size=2,
    learning_rate=3e-3,
    seed=0,
    total_steps=6,
    stride=1,
    eval_every=10,
    denoiser=TINY_NET,
)


@pytest.fixture(scope="module")
def tiny_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("tinydata")
    return build_dataset(3, 2, 2, 16, DegradationConfig(n_views=6), 0, root)


class TestTrainModel:
    def test_memorizes_single_pair(self, tmp_path):
        man = build_dataset(1, 0, 0, 16, DegradationConfig(n_views=6), 3, tmp_path)
        cfg = dataclasses.replace(TINY_CFG, train_steps=200, batch_size=1, learning_rate=1e-2)
        _, record = train_model(man, [ROLE_PAIRED], cfg)
        first_losses = [l for _, l in record.losses[:10]]
        assert record.losses[-1][1] < 0.1 * np.mean(first_losses)

    def test_zero_steps_returns_init_bit_exact(self, tiny_manifest):
        init = init_params(TINY_NET, 17)
        cfg = dataclasses.replace(TINY_CFG, train_steps=0)
        params, record = train_model(tiny_manifest, [ROLE_PAIRED], cfg, init=init)
        assert params.keys() == init.keys()
        for k in init:
            assert np.array_equal(params[k], init[k])
        assert record.losses == []

    def test_deterministic_per_seed(self, tiny_manifest):
        a, rec_a = train_model(tiny_manifest, [ROLE_PAIRED], TINY_CFG)
        b, rec_b = train_model(tiny_manifest, [ROLE_PAIRED], TINY_CFG)
        assert rec_a.checkpoint_id == rec_b.checkpoint_id
        for k in a:
            assert np.array_equal(a[k], b[k])
        assert rec_a.losses == rec_b.losses

    def test_empty_role_selection_rejected(self, tiny_manifest):
        with pytest.raises(TrainingError, match="no usable"):
            train_model(tiny_manifest, [ROLE_UNPAIRED], TINY_CFG)

    def test_losses_are_per_step_and_increasing_in_step(self, tiny_manifest):
        _, record = train_model(tiny_manifest, [ROLE_PAIRED], TINY_CFG)
        steps = [s for s, _ in record.losses]
        assert steps == list(range(1, TINY_CFG.train_steps + 1))
        assert all(np.isfinite(l) for _, l in record.losses)


class TestPseudoLabels:
    def test_counts_preserved(self, tiny_manifest, tmp_path):
        teacher = init_params(TINY_NET, 0)
        updated = generate_pseudo_labels(teacher, tiny_manifest, TINY_CFG, tmp_path / "pseudo")
        counts = updated.counts()
        assert counts[ROLE_PSEUDO] == counts[ROLE_UNPAIRED] == 2
        assert counts[ROLE_PAIRED] == 3
        for it in updated.items_by_role(ROLE_PSEUDO):
            assert updated.resolve(it.ct).exists()
            assert updated.resolve(it.cbct).exists()

    def test_no_unpaired_items_is_a_no_op(self, tmp_path):
        man = build_dataset(2, 0, 1, 16, DegradationConfig(n_views=6), 5, tmp_path / "d")
        teacher = init_params(TINY_NET, 0)
        updated = generate_pseudo_labels(teacher, man, TINY_CFG, tmp_path / "pseudo")
        assert updated.counts()[ROLE_PSEUDO] == 0
        assert len(updated.items) == len(man.items)

    def test_deterministic(self, tiny_manifest, tmp_path):
        teacher = init_params(TINY_NET, 0)
        a = generate_pseudo_labels(teacher, tiny_manifest, TINY_CFG, tmp_path / "a")
        b = generate_pseudo_labels(teacher, tiny_manifest, TINY_CFG, tmp_path / "b")
        for ia, ib in zip(a.items_by_role(ROLE_PSEUDO), b.items_by_role(ROLE_PSEUDO)):
            assert np.array_equal(a.load_image(ia.ct), b.load_image(ib.ct))

    def test_reloadable_manifest(self, tiny_manifest, tmp_path):
        teacher = init_params(TINY_NET, 0)
        generate_pseudo_labels(teacher, tiny_manifest, TINY_CFG, tmp_path / "pseudo")
        loaded = DatasetManifest.load(tmp_path / "pseudo" / "manifest.json")
        assert loaded.counts()[ROLE_PSEUDO] == 2


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("selftrain")
    man = build_dataset(3, 2, 2, 16, DegradationConfig(n_views=6), 0, root / "data")
    summary = run_self_training(man, TINY_CFG, TINY_CFG, root / "run")
    return root, summary


class TestRunSelfTraining:
    def test_emits_three_report_rows(self, run):
        _, summary = run
        assert [name for name, _ in summary.report_rows()] == ["input", "teacher", "student"]

    def test_artifacts_written(self, run):
        root, summary = run
        for rel in (
            "run/checkpoints/teacher.bbkd1",
            "run/checkpoints/student.bbkd1",
            "run/pseudo/manifest.json",
            "run/records/teacher.json",
            "run/records/student.json",
            "run/reports/summary.json",
            "run/reports/report.txt",
        ):
            assert (root / rel).exists(), rel

    def test_student_training_set_size_is_paired_plus_unpaired(self, run):
        root, _ = run
        pseudo_man = DatasetManifest.load(root / "run" / "pseudo" / "manifest.json")
        usable = [it for it in pseudo_man.items if it.role in (ROLE_PAIRED, ROLE_PSEUDO) and it.ct]
        assert len(usable) == 3 + 2

    def test_pseudo_items_never_reach_the_test_set(self, run):
        root, _ = run
        pseudo_man = DatasetManifest.load(root / "run" / "pseudo" / "manifest.json")
        test_seeds = {it.phantom_seed for it in pseudo_man.items_by_role(ROLE_TEST)}
        pseudo_seeds = {it.phantom_seed for it in pseudo_man.items_by_role(ROLE_PSEUDO)}
        assert not test_seeds & pseudo_seeds

    def test_student_initialized_from_teacher(self, run):
        # With zero student steps the student checkpoint equals the teacher's.
        root, _ = run
        man = DatasetManifest.load(root / "data" / "manifest.json")
        frozen = dataclasses.replace(TINY_CFG, train_steps=0)
        summary = run_self_training(man, TINY_CFG, frozen, root / "run2")
        teacher = load_checkpoint(root / "run2" / "checkpoints" / "teacher.bbkd1")
        student = load_checkpoint(root / "run2" / "checkpoints" / "student.bbkd1")
        for k in teacher:
            assert np.array_equal(teacher[k], student[k])
        assert summary.teacher_checkpoint_id == summary.student_checkpoint_id


class TestLossTrend:
    def test_moving_average_decreases(self, tmp_path):
        man = build_dataset(4, 0, 1, 16, DegradationConfig(n_views=6), 11, tmp_path)
        cfg = dataclasses.replace(TINY_CFG, train_steps=300, batch_size=2)
        _, record = train_model(man, [ROLE_PAIRED], cfg)
        losses = [l for _, l in record.losses]
        window = min(100, len(losses) // 3)
        head = np.mean(losses[:window])
        tail = np.mean(losses[-window:])
        assert tail < head
