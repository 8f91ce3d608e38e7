"""Image-pair quality metrics: MSE, PSNR, SSIM, and set-level reports."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _flat2d(a: np.ndarray) -> np.ndarray:
    if a.ndim == 3 and a.shape[0] == 1:
        return a[0]
    if a.ndim == 2:
        return a
    raise ValueError(f"expected a single-channel image, got shape {a.shape}")


def mse(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.mean(d * d))


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10*log10(peak^2 / mse); +inf for identical images.

    Written as a difference of logs so that at peak 1 the result is
    exactly -10*log10(mse).
    """
    if peak <= 0:
        raise ValueError("peak must be positive")
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 20.0 * math.log10(peak) - 10.0 * math.log10(err)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    ax = np.arange(size) - half
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma * sigma))
    return g / g.sum()


def ssim(
    a: np.ndarray,
    b: np.ndarray,
    L: float = 2.0,
    win_size: int = 11,
    sigma: float = 1.5,
) -> float:
    """Structural similarity with Gaussian-weighted local statistics.

    Windows are evaluated at valid positions only (no padding) and the
    per-window index is averaged.  C1 = (0.01*L)^2, C2 = (0.03*L)^2.  L
    defaults to 2.0, the dynamic range of [-1, 1] images.
    """
    if L <= 0:
        raise ValueError("dynamic range L must be positive")
    x = _flat2d(np.asarray(a, dtype=np.float64))
    y = _flat2d(np.asarray(b, dtype=np.float64))
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape) < win_size:
        raise ValueError(f"image {x.shape} smaller than {win_size}x{win_size} window")
    w = gaussian_window(win_size, sigma)
    xw = sliding_window_view(x, (win_size, win_size))
    yw = sliding_window_view(y, (win_size, win_size))
    mu_x = np.einsum("hwij,ij->hw", xw, w)
    mu_y = np.einsum("hwij,ij->hw", yw, w)
    xx = np.einsum("hwij,ij->hw", xw * xw, w)
    yy = np.einsum("hwij,ij->hw", yw * yw, w)
    xy = np.einsum("hwij,ij->hw", xw * yw, w)
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y
    c1 = (0.01 * L) ** 2
    c2 = (0.03 * L) ** 2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class ImageMetrics:
    image_id: str
    mse: float
    psnr_db: float
    ssim: float


@dataclass
class MetricsReport:
    """Per-image metrics plus arithmetic-mean aggregates.

    Infinite PSNR entries (identical pairs) are excluded from the PSNR
    mean; psnr_excluded records how many were dropped.
    """

    per_image: list[ImageMetrics]
    mean_mse: float
    mean_psnr_db: float
    mean_ssim: float
    psnr_excluded: int
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "metadata": self.metadata,
            "aggregate": {
                "mse": self.mean_mse,
                "ssim": self.mean_ssim,
                "psnr_db": self.mean_psnr_db,
                "psnr_excluded": self.psnr_excluded,
            },
            "per_image": [
                {"id": m.image_id, "mse": m.mse, "ssim": m.ssim, "psnr_db": m.psnr_db}
                for m in self.per_image
            ],
        }


def evaluate_pairs(
    preds: list[np.ndarray],
    truths: list[np.ndarray],
    ids: list[str],
    peak: float = 1.0,
    L: float = 2.0,
    metadata: dict | None = None,
) -> MetricsReport:
    if not (len(preds) == len(truths) == len(ids)):
        raise ValueError(f"length mismatch: {len(preds)} preds, {len(truths)} truths, {len(ids)} ids")
    if not preds:
        raise ValueError("cannot evaluate an empty pair list")
    per_image = [
        ImageMetrics(image_id=i, mse=mse(p, t), psnr_db=psnr(p, t, peak), ssim=ssim(p, t, L))
        for p, t, i in zip(preds, truths, ids)
    ]
    finite_psnr = [m.psnr_db for m in per_image if math.isfinite(m.psnr_db)]
    meta = dict(metadata or {})
    meta.setdefault("peak", peak)
    meta.setdefault("ssim_window", {"size": 11, "sigma": 1.5, "L": L})
    return MetricsReport(
        per_image=per_image,
        mean_mse=float(np.mean([m.mse for m in per_image])),
        mean_psnr_db=float(np.mean(finite_psnr)) if finite_psnr else math.inf,
        mean_ssim=float(np.mean([m.ssim for m in per_image])),
        psnr_excluded=len(per_image) - len(finite_psnr),
        metadata=meta,
    )


def render_table(rows: list[tuple[str, MetricsReport]]) -> str:
    """Aligned text table of aggregates, columns MSE / SSIM / PSNR."""
    header = f"{'Model':<12} {'MSE':>10} {'SSIM':>10} {'PSNR':>10}"
    lines = [header, "-" * len(header)]
    for name, rep in rows:
        p = "inf" if math.isinf(rep.mean_psnr_db) else f"{rep.mean_psnr_db:10.2f}"
        lines.append(f"{name:<12} {rep.mean_mse:10.4f} {rep.mean_ssim:10.4f} {p:>10}")
    return "\n".join(lines)
