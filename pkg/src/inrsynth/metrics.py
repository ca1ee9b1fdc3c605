"""PSNR, SSIM, Dice and slice-band Dice."""
import math

import numpy as np
from scipy.signal import correlate2d

from .errors import InvalidArgumentError

PSNR_CAP = 99.0
BANDS = ("volume", "bottom25", "middle50", "top25")
STRUCTURES = ("myo", "fib")


def _data(x):
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def psnr(a, b, peak=1.0, cap=PSNR_CAP):
    """``10 log10(peak^2 / MSE)``; zero error gives ``inf``, clipped to ``cap`` unless cap is None."""
    a, b = _data(a), _data(b)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch {a.shape} vs {b.shape}")
    if not peak > 0:
        raise InvalidArgumentError("peak must be > 0")
    err = float(np.mean((a - b) ** 2))
    value = math.inf if err == 0 else 10.0 * math.log10(peak**2 / err)
    return value if cap is None else min(value, cap)


def gaussian_window(size=7, sigma=1.5):
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, peak=1.0, size=7, sigma=1.5, k1=0.01, k2=0.03):
    """Mean SSIM over all fully-contained windows of a 2D slice pair."""
    a, b = _data(a), _data(b)
    if a.ndim != 2 or a.shape != b.shape:
        raise InvalidArgumentError(f"ssim needs two equal 2D slices, got {a.shape} and {b.shape}")
    if min(a.shape) < size:
        raise InvalidArgumentError(f"slice {a.shape} smaller than the {size}x{size} window")
    w = gaussian_window(size, sigma)

    def filt(x):
        return correlate2d(x, w, mode="valid")

    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def middle_slice(volume):
    data = _data(volume)
    return data[data.shape[0] // 2]


def dice(a, b):
    """``2|A & B| / (|A| + |B|)``; two empty masks score 1."""
    a, b = np.asarray(a).astype(bool), np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    return 1.0 if total == 0 else 2.0 * int((a & b).sum()) / total


def band_slices(dz):
    """Index ranges of the bottom (first quarter), middle and top (last quarter) z-bands."""
    if dz < 4:
        raise InvalidArgumentError(f"slice bands need Dz >= 4, got {dz}")
    q = math.ceil(dz / 4)
    return {"bottom25": range(0, q), "middle50": range(q, dz - q), "top25": range(dz - q, dz)}


def slice_band_dice(pred, gt):
    """Dice per structure over the whole volume and each z-band (voxels pooled per band)."""
    if pred.dims != gt.dims:
        raise InvalidArgumentError(f"dims mismatch {pred.dims} vs {gt.dims}")
    bands = band_slices(gt.dims[2])
    out = {}
    for s in STRUCTURES:
        p, g = getattr(pred, s), getattr(gt, s)
        row = {"volume": dice(p, g)}
        for name, rng in bands.items():
            row[name] = dice(p[rng.start:rng.stop], g[rng.start:rng.stop])
        out[s] = row
    return out


def cohort_similarity(synthetic, real, peak=1.0):
    """Mean PSNR and SSIM over every (synthetic, real) pair of middle slices."""
    ps, ss = [], []
    for a in synthetic:
        sa = middle_slice(a)
        for b in real:
            sb = middle_slice(b)
            ps.append(psnr(sa, sb, peak))
            ss.append(ssim(sa, sb, peak))
    return {"psnr": float(np.mean(ps)), "ssim": float(np.mean(ss)), "pairs": len(ps)}


def evaluation_rows(case_ids, preds, gts):
    """Long-format rows ``(case, structure, band, metric, value)`` for a set of cases."""
    rows = []
    for cid, p, g in zip(case_ids, preds, gts):
        for s, bands in slice_band_dice(p, g).items():
            for band in BANDS:
                rows.append((cid, s, band, "dice", bands[band]))
    return rows
