"""Synthetic phantoms and a physically motivated CBCT-like degradation.

Clean images are randomized multi-ellipse phantoms.  The degraded twin is
produced by genuine sparse-view tomography: forward-project with a parallel
beam Radon transform, reconstruct with filtered backprojection at few views
(which creates real streak artifacts), then add a radial cupping bias,
contrast reduction, and noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

RAY_STEP = 0.5  # ray sampling step, in pixels
ORACLE_RAY_STEP = 0.1


@dataclass(frozen=True)
class Ellipse:
    """center in [-1,1]^2 coordinates, semi-axes, rotation, additive intensity."""

    cx: float
    cy: float
    ax: float
    ay: float
    angle: float
    intensity: float

    def __post_init__(self):
        if self.ax <= 0 or self.ay <= 0:
            raise ValueError("ellipse semi-axes must be positive")


@dataclass(frozen=True)
class PhantomSpec:
    size: int
    body: Ellipse
    features: tuple[Ellipse, ...]


@dataclass(frozen=True)
class DegradationConfig:
    """Sparse-view FBP degradation settings.

    n_views: 180 gives a near-faithful reconstruction, the sparse default
    gives heavy streaks.  cupping_amplitude adds a*(r/R)^2 - a/2 inside the
    body; contrast_scale compresses values about the image mean.
    """

    n_views: int = 10
    cupping_amplitude: float = 0.12
    noise_sigma: float = 0.08
    contrast_scale: float = 0.75

    def __post_init__(self):
        if self.n_views < 1:
            raise ValueError("n_views must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0 < self.contrast_scale <= 1:
            raise ValueError("contrast_scale must lie in (0, 1]")


DENSE_VIEWS = 180


def _ellipse_mask(spec_size: int, e: Ellipse) -> np.ndarray:
    coords = (np.arange(spec_size) - (spec_size - 1) / 2.0) / ((spec_size - 1) / 2.0)
    xg, yg = np.meshgrid(coords, coords)
    dx = xg - e.cx
    dy = yg - e.cy
    c, s = np.cos(e.angle), np.sin(e.angle)
    u = dx * c + dy * s
    v = -dx * s + dy * c
    return (u / e.ax) ** 2 + (v / e.ay) ** 2 <= 1.0


def rasterize_phantom(spec: PhantomSpec) -> np.ndarray:
    """Sum ellipse intensities, zero everything outside the body, clamp to [0,1]."""
    img = np.zeros((spec.size, spec.size), dtype=np.float64)
    body = _ellipse_mask(spec.size, spec.body)
    img[body] = spec.body.intensity
    for e in spec.features:
        img[_ellipse_mask(spec.size, e)] += e.intensity
    img[~body] = 0.0
    np.clip(img, 0.0, 1.0, out=img)
    return img[None, :, :]


def make_phantom_spec(seed, size: int) -> PhantomSpec:
    """Randomized spec: one body ellipse, 3-8 soft features, 0-3 bone-like spots.

    The body stays inside the scanner field of view (the inscribed circle).
    """
    rng = np.random.default_rng(seed)
    body = Ellipse(
        cx=rng.uniform(-0.06, 0.06),
        cy=rng.uniform(-0.06, 0.06),
        ax=rng.uniform(0.62, 0.82),
        ay=rng.uniform(0.62, 0.82),
        angle=rng.uniform(0.0, np.pi),
        intensity=rng.uniform(0.20, 0.32),
    )
    features = []
    n_soft = int(rng.integers(3, 9))
    for i in range(n_soft):
        r = rng.uniform(0.0, 0.55)
        phi = rng.uniform(0.0, 2 * np.pi)
        if i == 0:  # one sizable bright region, so intensity modes never collapse
            ax, ay = rng.uniform(0.18, 0.32, size=2)
            intensity = rng.uniform(0.12, 0.30)
        elif i == 1:  # and one sizable dark region
            ax, ay = rng.uniform(0.14, 0.26, size=2)
            intensity = rng.uniform(-0.14, -0.05)
        else:
            ax, ay = rng.uniform(0.05, 0.28, size=2)
            intensity = rng.uniform(-0.12, 0.30)
        features.append(
            Ellipse(
                cx=body.cx + r * body.ax * np.cos(phi),
                cy=body.cy + r * body.ay * np.sin(phi),
                ax=float(ax),
                ay=float(ay),
                angle=rng.uniform(0.0, np.pi),
                intensity=float(intensity),
            )
        )
    for _ in range(int(rng.integers(0, 4))):
        r = rng.uniform(0.45, 0.8)
        phi = rng.uniform(0.0, 2 * np.pi)
        features.append(
            Ellipse(
                cx=body.cx + r * body.ax * np.cos(phi),
                cy=body.cy + r * body.ay * np.sin(phi),
                ax=rng.uniform(0.03, 0.09),
                ay=rng.uniform(0.03, 0.09),
                angle=rng.uniform(0.0, np.pi),
                intensity=rng.uniform(0.45, 0.68),
            )
        )
    return PhantomSpec(size=size, body=body, features=tuple(features))


def generate_phantom(seed, size: int) -> np.ndarray:
    """Deterministic random phantom as a [1, size, size] array in [0, 1]."""
    if size < 16:
        raise ValueError(f"size must be >= 16, got {size}")
    return rasterize_phantom(make_phantom_spec(seed, size))


def _bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample img[row=y, col=x] at fractional coordinates; outside reads 0."""
    n_rows, n_cols = img.shape
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0
    out = np.zeros(x.shape, dtype=np.float64)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            valid = (xi >= 0) & (xi < n_cols) & (yi >= 0) & (yi < n_rows)
            wgt = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            vals = np.zeros(x.shape, dtype=np.float64)
            vals[valid] = img[yi[valid], xi[valid]]
            out += wgt * vals
    return out


def radon_transform(image: np.ndarray, angles: Sequence[float], ray_step: float = RAY_STEP) -> np.ndarray:
    """Parallel-beam line integrals over the inscribed circular field of view.

    image is [1,N,N] or [N,N]; one detector per image column.  Rays are
    sampled with bilinear interpolation at ray_step-pixel intervals; sample
    points outside the field of view contribute nothing, so content must
    stay inside the inscribed circle (the phantom generator guarantees it).
    """
    angles = np.asarray(angles, dtype=np.float64)
    if angles.size == 0:
        raise ValueError("angle list must be non-empty")
    img = image[0] if image.ndim == 3 else image
    n = img.shape[0]
    if img.shape[0] != img.shape[1]:
        raise ValueError(f"image must be square, got {img.shape}")
    center = (n - 1) / 2.0
    radius = (n - 1) / 2.0
    s = np.arange(n, dtype=np.float64) - center
    n_u = int(round(2 * radius / ray_step)) + 1
    u = -radius + ray_step * np.arange(n_u)
    sg, ug = np.meshgrid(s, u, indexing="ij")
    fov = sg * sg + ug * ug <= radius * radius + 1e-9
    sino = np.empty((angles.size, n), dtype=np.float64)
    for i, theta in enumerate(angles):
        ct, st = np.cos(theta), np.sin(theta)
        x = sg * ct - ug * st + center
        y = sg * st + ug * ct + center
        vals = _bilinear(img, x, y)
        sino[i] = (vals * fov).sum(axis=1) * ray_step
    return sino


def ramp_filter_kernel(n_det: int) -> np.ndarray:
    """Band-limited spatial-domain Ram-Lak kernel, unit detector spacing."""
    n = np.arange(-(n_det - 1), n_det, dtype=np.float64)
    h = np.zeros_like(n)
    h[n == 0] = 0.25
    odd = (n.astype(np.int64) % 2) != 0
    h[odd] = -1.0 / (np.pi * n[odd]) ** 2
    return h


def fbp_reconstruct(sinogram: np.ndarray, angles: Sequence[float], size: int) -> np.ndarray:
    """Ram-Lak filtered backprojection; negatives clamped at zero."""
    angles = np.asarray(angles, dtype=np.float64)
    if sinogram.ndim != 2 or sinogram.shape[0] != angles.size:
        raise ValueError(f"sinogram shape {sinogram.shape} does not match {angles.size} angles")
    n_det = sinogram.shape[1]
    kernel = ramp_filter_kernel(n_det)
    filtered = np.empty_like(sinogram)
    for i in range(angles.size):
        filtered[i] = np.convolve(sinogram[i], kernel, mode="full")[n_det - 1 : 2 * n_det - 1]

    center = (size - 1) / 2.0
    det_center = (n_det - 1) / 2.0
    radius = (size - 1) / 2.0
    xs = np.arange(size, dtype=np.float64) - center
    xg, yg = np.meshgrid(xs, xs)
    fov = xg * xg + yg * yg <= radius * radius + 1e-9
    recon = np.zeros((size, size), dtype=np.float64)
    for i, theta in enumerate(angles):
        tpos = xg * np.cos(theta) + yg * np.sin(theta) + det_center
        t0 = np.floor(tpos).astype(np.int64)
        ft = tpos - t0
        for dt, wgt in ((t0, 1.0 - ft), (t0 + 1, ft)):
            valid = (dt >= 0) & (dt < n_det)
            contrib = np.zeros_like(recon)
            contrib[valid] = filtered[i][dt[valid]]
            recon += wgt * contrib
    recon *= np.pi / angles.size
    recon[~fov] = 0.0
    np.clip(recon, 0.0, None, out=recon)
    return recon[None, :, :]


def view_angles(n_views: int) -> np.ndarray:
    return np.arange(n_views) * np.pi / n_views


def degrade_to_cbct(pct: np.ndarray, cfg: DegradationConfig, seed) -> np.ndarray:
    """Contrast reduction -> sparse-view radon/FBP -> cupping -> noise -> clamp."""
    img = pct[0] if pct.ndim == 3 else pct
    n = img.shape[0]
    body = img > 0.0

    mean = img.mean()
    reduced = mean + cfg.contrast_scale * (img - mean)
    sino = radon_transform(reduced, view_angles(cfg.n_views))
    recon = fbp_reconstruct(sino, view_angles(cfg.n_views), n)[0]

    coords = np.arange(n, dtype=np.float64) - (n - 1) / 2.0
    xg, yg = np.meshgrid(coords, coords)
    r2 = (xg * xg + yg * yg) / ((n - 1) / 2.0) ** 2
    recon[body] += cfg.cupping_amplitude * (r2[body] - 0.5)

    if cfg.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        recon += rng.normal(0.0, cfg.noise_sigma, size=recon.shape)
    np.clip(recon, 0.0, 1.0, out=recon)
    return recon[None, :, :]


def normalize_intensity(image: np.ndarray, window: tuple[float, float] = (0.0, 1.0)) -> np.ndarray:
    """Linear map window -> [-1, 1], clamping values outside the window."""
    lo, hi = window
    if lo >= hi:
        raise ValueError(f"window must satisfy lo < hi, got ({lo}, {hi})")
    out = 2.0 * (image - lo) / (hi - lo) - 1.0
    return np.clip(out, -1.0, 1.0)
