"""Reconstruction quality metrics: NRMSE, SSIM, HFEN and ROI statistics.

Filter constants (recorded in every report header):

* SSIM: Gaussian window sigma 1.5 voxels truncated at radius 5, K1 = 0.01,
  K2 = 0.03, dynamic range = max - min of the reference inside the mask,
  edges handled by nearest-voxel extension.
* HFEN: 15^3 Laplacian-of-Gaussian kernel, sigma 1.5, radius 7, made
  zero-sum, nearest-voxel edge extension.
"""

import csv
import io
from dataclasses import asdict, dataclass, field
from typing import Dict, Tuple

import numpy as np
from scipy import ndimage

from .volume import as_array

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_SIGMA = 1.5
SSIM_RADIUS = 5
LOG_SIGMA = 1.5
LOG_RADIUS = 7
DEFAULT_EROSION = 2


def _prep(pred, truth, mask):
    pred = as_array(pred).astype(np.float64)
    truth = as_array(truth).astype(np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if mask is None:
        mask = np.ones(truth.shape, dtype=bool)
    else:
        mask = as_array(mask).astype(bool)
        if mask.shape != truth.shape:
            raise ValueError(f"mask shape {mask.shape} does not match {truth.shape}")
    if not mask.any():
        raise ValueError("mask is empty")
    return pred, truth, mask


def erode(mask, voxels=DEFAULT_EROSION):
    mask = as_array(mask).astype(bool)
    if voxels <= 0:
        return mask
    return ndimage.binary_erosion(mask, iterations=voxels)


def nrmse(pred, truth, mask=None):
    """``100 ||pred - truth|| / ||truth||`` over masked voxels, in percent."""
    pred, truth, mask = _prep(pred, truth, mask)
    ref = np.linalg.norm(truth[mask])
    if ref == 0:
        raise ValueError("reference has zero norm inside the mask")
    return 100.0 * np.linalg.norm(pred[mask] - truth[mask]) / ref


def _gauss1d(sigma, radius):
    r = np.arange(-radius, radius + 1, dtype=np.float64)
    return np.exp(-(r**2) / (2 * sigma**2))


def gaussian_window(sigma=SSIM_SIGMA, radius=SSIM_RADIUS):
    """Dense normalized 3D window (the metrics apply it as separable passes)."""
    g = _gauss1d(sigma, radius)
    w = g[:, None, None] * g[None, :, None] * g[None, None, :]
    return w / w.sum()


def _separable(v, kernels):
    """Correlate ``v`` with the outer product of one 1D kernel per axis."""
    for axis, k in enumerate(kernels):
        v = ndimage.correlate1d(v, k, axis=axis, mode="nearest")
    return v


def _local_mean(v, sigma=SSIM_SIGMA, radius=SSIM_RADIUS):
    g = _gauss1d(sigma, radius)
    g /= g.sum()
    return _separable(v, (g, g, g))


def ssim_map(pred, truth, data_range):
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mx = _local_mean(pred)
    my = _local_mean(truth)
    sxx = _local_mean(pred * pred) - mx * mx
    syy = _local_mean(truth * truth) - my * my
    sxy = _local_mean(pred * truth) - mx * my
    return ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx**2 + my**2 + c1) * (sxx + syy + c2))


def ssim(pred, truth, mask=None, data_range=None):
    """Mean local 3D SSIM over masked voxels.

    ``data_range`` defaults to ``max - min`` of ``truth`` inside the mask.
    """
    pred, truth, mask = _prep(pred, truth, mask)
    if data_range is None:
        data_range = float(truth[mask].max() - truth[mask].min())
    if not data_range > 0:
        raise ValueError("degenerate dynamic range")
    return float(ssim_map(pred, truth, data_range)[mask].mean())


def log_kernel(sigma=LOG_SIGMA, radius=LOG_RADIUS):
    """Zero-sum 3D Laplacian-of-Gaussian kernel of size ``2 radius + 1``."""
    r = np.arange(-radius, radius + 1, dtype=np.float64)
    x, y, z = np.meshgrid(r, r, r, indexing="ij")
    r2 = x**2 + y**2 + z**2
    h = np.exp(-r2 / (2 * sigma**2))
    h /= h.sum()
    k = h * (r2 - 3 * sigma**2) / sigma**4
    return k - k.mean()


def log_filter(v, sigma=LOG_SIGMA, radius=LOG_RADIUS):
    """Correlate with :func:`log_kernel` using separable passes.

    The kernel splits into three axis-wise Gaussian-derivative products, a
    scaled Gaussian and the constant that makes it zero-sum.
    """
    g = _gauss1d(sigma, radius)
    r = np.arange(-radius, radius + 1, dtype=np.float64)
    norm = g.sum() ** 3
    g2 = g * r**2 / sigma**4
    out = -3.0 / sigma**2 * _separable(v, (g, g, g))
    for axis in range(3):
        ks = [g, g, g]
        ks[axis] = g2
        out += _separable(v, ks)
    out /= norm
    # zero-sum correction: the dense kernel's mean times a box sum
    size = 2 * radius + 1
    kmean = (3 * g2.sum() * g.sum() ** 2 / norm - 3.0 / sigma**2) / size**3
    box = np.ones(size)
    return out - kmean * _separable(v, (box, box, box))


def hfen(pred, truth, mask=None, sigma=LOG_SIGMA, radius=LOG_RADIUS):
    """``100 ||LoG(pred) - LoG(truth)|| / ||LoG(truth)||`` over masked voxels, in percent."""
    pred, truth, mask = _prep(pred, truth, mask)
    lp = log_filter(pred, sigma, radius)
    lt = log_filter(truth, sigma, radius)
    ref = np.linalg.norm(lt[mask])
    if ref == 0:
        raise ValueError("LoG of the reference vanishes inside the mask")
    return 100.0 * np.linalg.norm(lp[mask] - lt[mask]) / ref


def roi_stats(pred, roi_mask):
    """``(mean, population std)`` over ROI voxels."""
    pred = as_array(pred)
    roi = as_array(roi_mask).astype(bool)
    if roi.shape != pred.shape:
        raise ValueError(f"ROI shape {roi.shape} does not match {pred.shape}")
    if not roi.any():
        raise ValueError("ROI is empty")
    vals = pred[roi]
    return float(vals.mean()), float(vals.std())


@dataclass
class MetricReport:
    nrmse: float
    ssim: float
    hfen: float
    erosion: int = DEFAULT_EROSION
    rois: Dict[str, Tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.nrmse < 0 or self.hfen < 0:
            raise ValueError("nrmse and hfen must be non-negative")
        if not -1.0 - 1e-12 <= self.ssim <= 1.0 + 1e-12:
            raise ValueError(f"ssim out of range: {self.ssim}")

    def row(self):
        out = {k: v for k, v in asdict(self).items() if k != "rois"}
        for name, (mean, std) in self.rois.items():
            out[f"{name}_mean"] = mean
            out[f"{name}_std"] = std
        return out


def evaluate(pred, truth, mask, erosion=DEFAULT_EROSION, rois=None):
    """Full report inside ``mask`` eroded by ``erosion`` voxels.

    ``rois`` maps names to boolean masks; ROI statistics use the
    uneroded ROI.
    """
    em = erode(mask, erosion)
    rep = MetricReport(nrmse(pred, truth, em), ssim(pred, truth, em), hfen(pred, truth, em),
                       erosion)
    for name, roi in (rois or {}).items():
        rep.rois[name] = roi_stats(pred, roi)
    return rep


def report_header():
    return (f"# ssim: sigma={SSIM_SIGMA} radius={SSIM_RADIUS} k1={SSIM_K1} k2={SSIM_K2}; "
            f"hfen: LoG sigma={LOG_SIGMA} radius={LOG_RADIUS}")


def rows_to_csv(rows, header=True):
    """Render a list of dicts as CSV text (with the filter-constant comment line)."""
    buf = io.StringIO()
    if header:
        buf.write(report_header() + "\n")
    if rows:
        keys = list(rows[0].keys())
        for r in rows[1:]:
            keys += [k for k in r if k not in keys]
        w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def format_table(rows):
    """Fixed-width text table for terminal output."""
    if not rows:
        return ""
    keys = list(rows[0].keys())
    cells = [[f"{r.get(k, ''):.4g}" if isinstance(r.get(k), float) else str(r.get(k, ""))
              for k in keys] for r in rows]
    widths = [max(len(k), *(len(c[i]) for c in cells)) for i, k in enumerate(keys)]
    lines = ["  ".join(k.rjust(w) for k, w in zip(keys, widths))]
    lines += ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)
