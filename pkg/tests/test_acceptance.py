"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Criteria 7 and 8 share a single desk-scale self-training run (a module
fixture), so the whole suite costs one full pipeline execution plus the
cheap numeric checks.  Run with ``pytest -s tests/test_acceptance.py`` to
see the per-criterion lines as they complete.
"""

import json
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
from oracles import brute_force_ssim, grid_bayes_posterior

from bbkd import autodiff as ad
from bbkd import bridge
from bbkd.autodiff import Tensor, backward, finite_difference_gradient
from bbkd.cli import main as cli_main
from bbkd.dataset import build_dataset
from bbkd.denoiser import DenoiserConfig, forward_graph, init_params, wrap_params
from bbkd.formats import (
    FormatError,
    load_checkpoint,
    read_imgf,
    save_checkpoint,
    write_imgf,
)
from bbkd.metrics import mse, psnr, ssim
from bbkd.phantom import (
    DegradationConfig,
    fbp_reconstruct,
    generate_phantom,
    radon_transform,
    view_angles,
)
from bbkd.selftrain import TrainConfig, run_self_training


@contextmanager
def criterion(num, name):
    try:
        yield
    except BaseException:
        print(f"[acceptance] criterion {num:02d} {name}: FAIL", flush=True)
        raise
    print(f"[acceptance] criterion {num:02d} {name}: PASS", flush=True)


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    """Desk-scale pipeline: 32x32, T=50, 100 paired / 300 unpaired / 50 test,
    2000 training steps per phase, single-step bridge sampling."""
    root = tmp_path_factory.mktemp("desk")
    started = time.perf_counter()
    manifest = build_dataset(100, 300, 50, 32, DegradationConfig(), 0, root / "data")
    cfg = TrainConfig(
        train_steps=2000,
        batch_size=8,
        learning_rate=3e-3,
        seed=0,
        total_steps=50,
        stride=50,
        eval_every=500,
    )
    summary = run_self_training(manifest, cfg, cfg, root / "run")
    elapsed = time.perf_counter() - started
    return summary, elapsed


class TestCriterion1BridgeEndpoints:
    def test_endpoints_bit_exact(self):
        with criterion(1, "bridge endpoints pinned bit-exactly"):
            started = time.perf_counter()
            rng = np.random.default_rng(0)
            sched = bridge.make_schedule(13)
            for _ in range(100):
                shape = tuple(int(rng.integers(1, 7)) for _ in range(int(rng.integers(1, 4))))
                p0 = rng.standard_normal(shape)
                q = rng.standard_normal(shape)
                noise = rng.standard_normal(shape)
                assert np.array_equal(bridge.forward_sample(p0, q, 0, sched, noise), p0)
                assert np.array_equal(bridge.forward_sample(p0, q, 13, sched, noise), q)
            assert time.perf_counter() - started < 1.0


class TestCriterion2MarkovConsistency:
    def test_chained_transitions_match_marginals(self):
        with criterion(2, "transition chain matches marginals (100k Monte Carlo)"):
            started = time.perf_counter()
            total, n = 10, 100_000
            sched = bridge.make_schedule(total)
            rng = np.random.default_rng(2024)
            p0, q = 1.0, -1.0
            chains = np.full(n, p0)
            qvec = np.full(n, q)
            for t in range(1, total + 1):
                chains = bridge.transition_sample(chains, qvec, t, sched, rng.standard_normal(n))
                want_mean = (1 - sched.k[t]) * p0 + sched.k[t] * q
                want_var = sched.var[t]
                if want_var == 0.0:
                    assert np.array_equal(chains, qvec)
                    continue
                assert abs(chains.mean() - want_mean) <= 4 * math.sqrt(want_var / n)
                assert abs(chains.var() - want_var) <= 0.02 * want_var
            assert time.perf_counter() - started < 30.0


class TestCriterion3Conjugacy:
    def test_posterior_matches_grid_bayes(self):
        with criterion(3, "reverse posterior matches grid-integration Bayes"):
            started = time.perf_counter()
            sched = bridge.make_schedule(8)
            for trial in range(5):
                rng = np.random.default_rng(40 + trial)
                p0_hat, q, p_t = rng.uniform(-1, 1, size=3)
                for t in range(1, 9):
                    mean, var = bridge.posterior_params(
                        np.array([p_t]), np.array([p0_hat]), np.array([q]), t, sched
                    )
                    want_mean, want_var = grid_bayes_posterior(sched, t, p0_hat, q, p_t)
                    assert abs(mean[0] - want_mean) <= 1e-3
                    assert abs(var - want_var) <= 1e-3
            assert time.perf_counter() - started < 10.0


class TestCriterion4GradientSuite:
    def test_all_ops_and_full_denoiser_vs_finite_differences(self):
        with criterion(4, "gradients agree with central finite differences"):
            started = time.perf_counter()
            shape = (1, 8, 8)
            for seed in range(3):
                rng = np.random.default_rng(seed)
                a_val = rng.standard_normal(shape)
                b_val = rng.standard_normal(shape)
                target = rng.standard_normal(shape)
                vec = rng.standard_normal(4)
                wmat = rng.standard_normal((4, 4))
                kern = rng.standard_normal((2, 1, 3, 3))
                bias = rng.standard_normal(2)
                # Each case: (graph builder over a leaf tensor, probe point).
                cases = {
                    "add": (lambda x: _graph_loss(ad.add(x, Tensor(b_val)), target), a_val),
                    "mul": (lambda x: _graph_loss(ad.mul(x, Tensor(b_val)), target), a_val),
                    "scale": (lambda x: _graph_loss(ad.scale(x, 1.7), target), a_val),
                    "silu": (lambda x: _graph_loss(ad.silu(x), target), a_val),
                    "concat": (
                        lambda x: _graph_loss(
                            ad.concat_channels([x, Tensor(b_val)]), np.concatenate([target, target])
                        ),
                        a_val,
                    ),
                    "spatial_mean": (
                        lambda x: _graph_loss(ad.spatial_mean(x), target.mean(axis=(1, 2))),
                        a_val,
                    ),
                    "broadcast": (
                        lambda x: _graph_loss(ad.broadcast_channels(x, 8, 8), np.zeros((4, 8, 8))),
                        vec,
                    ),
                    "linear": (
                        lambda x: _graph_loss(ad.linear(Tensor(wmat), x, Tensor(np.zeros(4))), vec),
                        vec,
                    ),
                    "conv2d": (
                        lambda x: _graph_loss(ad.conv2d(x, Tensor(kern), Tensor(bias)), np.zeros((2, 8, 8))),
                        a_val,
                    ),
                    "mse": (lambda x: ad.scale(ad.mse(x, Tensor(b_val)), 1.3), a_val),
                }
                for name, (build, point) in cases.items():
                    leaf = Tensor(point, requires_grad=True)
                    grads = backward(build(leaf), {"p": leaf})
                    fd = finite_difference_gradient(lambda v: float(build(Tensor(v)).data), point)
                    denom = max(np.abs(fd).max(), 1e-10)
                    assert np.abs(grads["p"] - fd).max() / denom <= 1e-4, name

                self._check_full_denoiser(seed)
            assert time.perf_counter() - started < 60.0

    @staticmethod
    def _check_full_denoiser(seed):
        cfg = DenoiserConfig()
        rng = np.random.default_rng(100 + seed)
        params = {k: v + 0.05 * rng.standard_normal(v.shape) for k, v in init_params(cfg, seed).items()}
        x = rng.standard_normal((1, 8, 8))
        target = rng.standard_normal((1, 8, 8))
        t = int(rng.integers(0, 50))

        ptensors = wrap_params(params)
        xt = Tensor(x, requires_grad=True)
        loss = ad.mse(forward_graph(ptensors, xt, t, cfg), Tensor(target))
        grads = backward(loss, {**ptensors, "__input__": xt})

        def loss_value():
            out = forward_graph(wrap_params(params), Tensor(x), t, cfg)
            return float(ad.mse(out, Tensor(target)).data)

        fd_x = finite_difference_gradient(
            lambda v: float(
                ad.mse(forward_graph(wrap_params(params), Tensor(v), t, cfg), Tensor(target)).data
            ),
            x,
        )
        denom = max(np.abs(fd_x).max(), 1e-10)
        assert np.abs(grads["__input__"] - fd_x).max() / denom <= 1e-4

        for name, arr in params.items():
            flat = arr.ravel()
            for i in rng.choice(flat.size, size=min(5, flat.size), replace=False):
                orig = flat[i]
                flat[i] = orig + 1e-5
                f_plus = loss_value()
                flat[i] = orig - 1e-5
                f_minus = loss_value()
                flat[i] = orig
                fd = (f_plus - f_minus) / 2e-5
                got = grads[name].ravel()[i]
                assert abs(got - fd) / max(abs(fd), abs(got), 1e-6) <= 1e-4, f"{name}[{i}]"


def _graph_loss(out, target):
    return ad.mse(out, Tensor(target))


class TestCriterion5MetricIdentities:
    def test_identities_and_oracle(self):
        with criterion(5, "metric identities and SSIM oracle equivalence"):
            rng = np.random.default_rng(5)
            x = rng.uniform(-1, 1, (16, 16))
            assert abs(ssim(x, x) - 1.0) <= 1e-12

            a, b = rng.uniform(-1, 1, (12, 12)), rng.uniform(-1, 1, (12, 12))
            assert psnr(a, b, peak=1.0) == -10.0 * math.log10(mse(a, b))

            const = ssim(np.zeros((12, 12)), np.full((12, 12), 0.1), L=2.0)
            assert math.isclose(const, 0.0004 / 0.0104, rel_tol=1e-12)
            assert math.isclose(const, 0.038461538, abs_tol=1e-9)

            for seed in range(20):
                r = np.random.default_rng(200 + seed)
                pa = r.uniform(-1, 1, (32, 32))
                pb = np.clip(pa + r.normal(0, 0.2, (32, 32)), -1, 1)
                assert abs(ssim(pa, pb) - brute_force_ssim(pa, pb)) <= 1e-9


class TestCriterion6SimulatorPhysics:
    def test_fbp_fidelity_and_streaks(self):
        with criterion(6, "FBP fidelity at 180 views, streaks at 16"):
            started = time.perf_counter()
            ph = generate_phantom(0, 128)
            angles = view_angles(180)
            rec = fbp_reconstruct(radon_transform(ph, angles), angles, 128)
            rmse = float(np.sqrt(np.mean((rec - ph) ** 2)))
            assert rmse <= 0.05

            sparse = view_angles(16)
            rec16 = fbp_reconstruct(radon_transform(ph, sparse), sparse, 128)
            assert ssim(rec16, ph, L=1.0) < ssim(rec, ph, L=1.0)
            assert time.perf_counter() - started < 60.0


class TestCriterion7TeacherGain:
    def test_teacher_beats_input_baseline(self, desk_run):
        with criterion(7, "teacher SSIM gain over input baseline >= 0.05"):
            summary, elapsed = desk_run
            input_ssim = summary.reports["input"].mean_ssim
            teacher_ssim = summary.reports["teacher"].mean_ssim
            print(
                f"[acceptance]   input {input_ssim:.4f} -> teacher {teacher_ssim:.4f} "
                f"(gain {teacher_ssim - input_ssim:+.4f}, pipeline {elapsed/60:.1f} min)",
                flush=True,
            )
            assert teacher_ssim - input_ssim >= 0.05
            assert elapsed <= 1800.0


class TestCriterion8StudentNonInferiority:
    def test_student_matches_teacher_and_report_shape(self, desk_run):
        with criterion(8, "student within 0.02 SSIM of teacher; three-row report"):
            summary, _ = desk_run
            input_ssim = summary.reports["input"].mean_ssim
            teacher_ssim = summary.reports["teacher"].mean_ssim
            student_ssim = summary.reports["student"].mean_ssim
            ordering = "student > teacher" if student_ssim > teacher_ssim else "student <= teacher"
            print(
                f"[acceptance]   teacher {teacher_ssim:.4f}, student {student_ssim:.4f} ({ordering})",
                flush=True,
            )
            assert student_ssim >= teacher_ssim - 0.02
            assert teacher_ssim > input_ssim and student_ssim > input_ssim
            rows = summary.report_rows()
            assert [name for name, _ in rows] == ["input", "teacher", "student"]
            for _, rep in rows:
                d = rep.to_dict()["aggregate"]
                assert list(d)[:3] == ["mse", "ssim", "psnr_db"]


class TestCriterion9Determinism:
    def test_self_train_reruns_byte_identical(self, tmp_path):
        with criterion(9, "identical self-train reruns are byte-identical"):
            cfg = {
                "image_size": 16,
                "T": 6,
                "n_paired": 3,
                "n_unpaired": 2,
                "n_test": 2,
                "seed": 7,
                "degradation": {"n_views": 6},
                "denoiser": {"base_channels": 4, "num_blocks": 1, "time_embed_dim": 4},
                "teacher": {"train_steps": 10, "batch_size": 2, "eval_every": 5},
                "student": {"train_steps": 10, "batch_size": 2, "eval_every": 5},
            }
            outs = []
            for name in ("a", "b"):
                cfg["out_dir"] = str(tmp_path / name)
                path = tmp_path / f"{name}.json"
                path.write_text(json.dumps(cfg))
                assert cli_main(["self-train", "--config", str(path)]) == 0
                outs.append(tmp_path / name)
            compared = 0
            for rel in sorted(
                p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.is_file()
            ):
                if "records" in rel.parts:
                    continue  # training records carry wall-clock durations
                assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes(), rel
                compared += 1
            assert compared >= 15  # checkpoints, manifests, images, reports


class TestCriterion10FormatRoundTrips:
    def test_imgf_and_checkpoint_round_trips(self, tmp_path):
        with criterion(10, "IMGF/BBKD1 round trips bit-exact; malformed rejected"):
            rng = np.random.default_rng(10)
            img = rng.uniform(-1, 1, (1, 16, 16)).astype(np.float32).astype(np.float64)
            p = tmp_path / "x.imgf"
            write_imgf(p, img)
            assert np.array_equal(read_imgf(p), img)
            raw = p.read_bytes()
            write_imgf(p, read_imgf(p))
            assert p.read_bytes() == raw

            params = {"w": rng.standard_normal((3, 2, 3, 3)), "b": rng.standard_normal(3)}
            cp = tmp_path / "m.bbkd1"
            save_checkpoint(params, cp)
            loaded = load_checkpoint(cp)
            assert all(np.array_equal(loaded[k], params[k]) for k in params)

            bad = tmp_path / "bad.imgf"
            bad.write_bytes(b"JUNKJUNKJUNKJUNKJUNK")
            with pytest.raises(FormatError):
                read_imgf(bad)
            cut = tmp_path / "cut.bbkd1"
            cut.write_bytes(cp.read_bytes()[:-9])
            with pytest.raises(FormatError):
                load_checkpoint(cut)
            wrong = tmp_path / "wrong.bbkd1"
            wrong.write_bytes(b"XXXXX" + cp.read_bytes()[5:])
            with pytest.raises(FormatError):
                load_checkpoint(wrong)
