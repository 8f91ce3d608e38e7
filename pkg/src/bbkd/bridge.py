"""Brownian bridge diffusion between a clean image and its degraded twin.

The forward chain interpolates from a clean image ``p0`` toward the
conditioning image ``q`` while injecting noise whose variance vanishes at
both endpoints, so the chain is pinned: it starts at ``p0`` exactly and
ends at ``q`` exactly.  Reverse sampling starts from ``q`` and walks back
using the analytic Gaussian posterior of the previous state given the
current one and a prediction of the clean image.

The predictor callback receives only the current state and the step index;
``q`` enters the reverse process solely through the start point and the
analytic coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class BridgeSchedule:
    """Precomputed mixing fractions and marginal variances for T steps.

    ``k[t] = t/T`` rises from 0 to 1; ``var[t] = 2*k[t]*(1-k[t])`` is the
    marginal noise variance, zero at both endpoints and symmetric about
    ``T/2``.
    """

    total_steps: int
    k: np.ndarray
    var: np.ndarray


def make_schedule(total_steps: int) -> BridgeSchedule:
    if total_steps < 2:
        raise ValueError(f"total_steps must be >= 2, got {total_steps}")
    t = np.arange(total_steps + 1, dtype=np.float64)
    k = t / total_steps
    var = 2.0 * k * (1.0 - k)
    return BridgeSchedule(total_steps=total_steps, k=k, var=var)


def _check_step(sched: BridgeSchedule, t: int, lo: int) -> None:
    if not lo <= t <= sched.total_steps:
        raise ValueError(f"step index {t} outside [{lo}, {sched.total_steps}]")


def _check_shapes(*arrays: np.ndarray) -> None:
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise ValueError(f"shape mismatch: {a.shape} vs {shape}")


def forward_sample(
    p0: np.ndarray, q: np.ndarray, t: int, sched: BridgeSchedule, noise: np.ndarray
) -> np.ndarray:
    """Draw from the marginal at step t: (1-k_t)*p0 + k_t*q + sqrt(var_t)*noise."""
    _check_shapes(p0, q, noise)
    _check_step(sched, t, 0)
    if t == 0:
        return p0.copy()
    if t == sched.total_steps:
        return q.copy()
    kt = sched.k[t]
    return (1.0 - kt) * p0 + kt * q + np.sqrt(sched.var[t]) * noise


def bridge_coeffs(sched: BridgeSchedule, t: int, t_prev: int) -> tuple[float, float, float]:
    """Coefficients (a, b, s) of the Markov kernel from step t_prev to t.

    The kernel is N(a*x_prev + b*q, s I) with a = (1-k_t)/(1-k_prev),
    b = k_t - a*k_prev, s = var_t - a^2*var_prev.  Composing it with the
    marginal at t_prev reproduces the marginal at t, which makes s
    nonnegative for any valid step pair; a computed negative s signals a
    corrupted schedule.  At t = T the numerator 1-k_T is exactly zero, so
    a = 0 and the kernel collapses onto q.
    """
    if not 0 <= t_prev < t <= sched.total_steps:
        raise ValueError(f"invalid step pair ({t}, {t_prev})")
    kt = sched.k[t]
    kp = sched.k[t_prev]
    a = (1.0 - kt) / (1.0 - kp)
    b = kt - a * kp
    s = sched.var[t] - a * a * sched.var[t_prev]
    if s < 0.0:
        raise ValueError(f"negative transition variance {s} at step pair ({t}, {t_prev})")
    return a, b, s


def transition_sample(
    p_prev: np.ndarray, q: np.ndarray, t: int, sched: BridgeSchedule, noise: np.ndarray
) -> np.ndarray:
    """One forward Markov step from state at t-1 to a draw at t."""
    _check_shapes(p_prev, q, noise)
    _check_step(sched, t, 1)
    a, b, s = bridge_coeffs(sched, t, t - 1)
    return a * p_prev + b * q + np.sqrt(s) * noise


def posterior_params(
    p_t: np.ndarray,
    p0_hat: np.ndarray,
    q: np.ndarray,
    t: int,
    sched: BridgeSchedule,
    t_prev: int | None = None,
) -> tuple[np.ndarray, float]:
    """Gaussian posterior of the state at ``t_prev`` given the state at ``t``.

    Conjugacy of the prior marginal N(m_prev, var_prev) with the transition
    likelihood N(a*x + b*q, s) gives

        mean = (s/var_t) * m_prev + (a*var_prev/var_t) * (p_t - b*q)
        variance = var_prev * s / var_t

    with m_prev = (1-k_prev)*p0_hat + k_prev*q.  Two pinned endpoints need
    care: at t_prev = 0 the prior is a point mass at p0_hat, and at t = T
    the likelihood is independent of the previous state (a = 0), so the
    posterior is just the prior marginal (mean m_prev, variance var_prev).
    """
    _check_shapes(p_t, p0_hat, q)
    _check_step(sched, t, 1)
    if t_prev is None:
        t_prev = t - 1
    if not 0 <= t_prev < t:
        raise ValueError(f"invalid step pair ({t}, {t_prev})")
    if t_prev == 0:
        return p0_hat.copy(), 0.0
    kp = sched.k[t_prev]
    m_prev = (1.0 - kp) * p0_hat + kp * q
    var_prev = sched.var[t_prev]
    if t == sched.total_steps:
        return m_prev, float(var_prev)
    a, b, s = bridge_coeffs(sched, t, t_prev)
    var_t = sched.var[t]
    mean = (s / var_t) * m_prev + (a * var_prev / var_t) * (p_t - b * q)
    variance = var_prev * s / var_t
    return mean, float(variance)


def reverse_step(
    p_t: np.ndarray,
    p0_hat: np.ndarray,
    q: np.ndarray,
    t: int,
    sched: BridgeSchedule,
    noise: np.ndarray,
    t_prev: int | None = None,
) -> np.ndarray:
    """Sample the previous state: posterior mean plus sqrt(variance)*noise."""
    _check_shapes(p_t, noise)
    mean, variance = posterior_params(p_t, p0_hat, q, t, sched, t_prev)
    if variance == 0.0:
        return mean
    return mean + np.sqrt(variance) * noise


def sample_translation(
    q: np.ndarray,
    predict_x0: Callable[[np.ndarray, int], np.ndarray],
    sched: BridgeSchedule,
    rng: np.random.Generator,
    stride: int = 1,
) -> np.ndarray:
    """Translate q by walking the reverse chain from t = T down to 0.

    ``predict_x0(p_t, t)`` supplies the clean-image estimate used by the
    analytic posterior at each step; its signature deliberately admits no
    conditioning input besides the current state.  ``stride`` must divide
    the schedule length; larger strides reuse the same posterior formulas
    over the pair (t, t - stride).
    """
    total = sched.total_steps
    if stride < 1 or total % stride != 0:
        raise ValueError(f"stride {stride} must be >= 1 and divide {total}")
    p = q.copy()
    for t in range(total, 0, -stride):
        p0_hat = predict_x0(p, t)
        _check_shapes(p, p0_hat)
        noise = rng.standard_normal(p.shape)
        p = reverse_step(p, p0_hat, q, t, sched, noise, t_prev=t - stride)
    return p


def make_training_pair(
    p0: np.ndarray, q: np.ndarray, sched: BridgeSchedule, rng: np.random.Generator
) -> tuple[np.ndarray, int, np.ndarray]:
    """Draw (noisy state, step index, regression target) for one train sample.

    t is uniform on {1, ..., T}; the target is the clean image itself, so a
    batch loss is the mean squared error between the predictor output at
    (p_t, t) and p0.
    """
    _check_shapes(p0, q)
    t = int(rng.integers(1, sched.total_steps + 1))
    noise = rng.standard_normal(p0.shape)
    p_t = forward_sample(p0, q, t, sched, noise)
    return p_t, t, p0.copy()
