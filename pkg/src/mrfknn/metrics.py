"""Map-quality metrics: relative MAE (%), SSIM and NRMSE over a foreground mask."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = ["mae_pct", "ssim", "nrmse", "gaussian_window", "EvalReport", "write_report_csv",
           "TABLE_COLUMNS"]


def _mask(mask, shape):
    mask = np.ones(shape, bool) if mask is None else np.asarray(mask, bool)
    if not mask.any():
        raise ValueError("empty mask")
    return mask


def mae_pct(pred, gt, mask=None) -> float:
    """``100 * mean(|pred - gt| / gt)`` over the mask."""
    pred, gt = np.asarray(pred, float), np.asarray(gt, float)
    mask = _mask(mask, gt.shape)
    g = gt[mask]
    if np.any(g == 0):
        raise ValueError("ground truth is zero inside the mask")
    return float(100 * np.mean(np.abs(pred[mask] - g) / np.abs(g)))


def nrmse(pred, gt, mask=None) -> float:
    """RMSE over the mask divided by the ground-truth range on the mask."""
    pred, gt = np.asarray(pred, float), np.asarray(gt, float)
    mask = _mask(mask, gt.shape)
    g = gt[mask]
    rng = g.max() - g.min()
    if rng == 0:
        raise ValueError("ground truth is constant on the mask; NRMSE undefined")
    return float(np.sqrt(np.mean((pred[mask] - g) ** 2)) / rng)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-ax ** 2 / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(pred, gt, mask=None, win: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean local SSIM over mask pixels whose full window fits the mask's bounding box.

    Dynamic range is the ground-truth maximum on the mask.
    """
    pred, gt = np.asarray(pred, float), np.asarray(gt, float)
    mask = _mask(mask, gt.shape)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    sl = np.s_[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]
    x, y, m = pred[sl], gt[sl], mask[sl]
    if min(x.shape) < win:
        raise ValueError(f"mask bounding box {x.shape} is smaller than the {win}x{win} window")
    L = gt[mask].max()
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    w = gaussian_window(win, sigma)

    def filt(a):
        return np.einsum("ijkl,kl->ij", sliding_window_view(a, (win, win)), w)

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx ** 2
    syy = filt(y * y) - my ** 2
    sxy = filt(x * y) - mx * my
    smap = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx ** 2 + my ** 2 + c1) * (sxx + syy + c2))
    h = win // 2
    centers = m[h:m.shape[0] - h, h:m.shape[1] - h]
    if not centers.any():
        raise ValueError("no mask pixel has a full SSIM window inside the bounding box")
    return float(smap[centers].mean())


TABLE_COLUMNS = ["method", "mae_t1", "mae_t2", "ssim_t1", "ssim_t2", "nrmse_t1", "nrmse_t2",
                 "recon_s", "match_s", "total_s"]


@dataclass
class EvalReport:
    method: str
    mae_t1: float
    mae_t2: float
    ssim_t1: float
    ssim_t2: float
    nrmse_t1: float
    nrmse_t2: float
    recon_s: float | None = None
    match_s: float | None = None
    total_s: float | None = None
    manifest: dict = field(default_factory=dict)

    @classmethod
    def from_maps(cls, method, t1, t2, gt_t1, gt_t2, mask, **timing):
        return cls(method=method,
                   mae_t1=mae_pct(t1, gt_t1, mask), mae_t2=mae_pct(t2, gt_t2, mask),
                   ssim_t1=ssim(t1, gt_t1, mask), ssim_t2=ssim(t2, gt_t2, mask),
                   nrmse_t1=nrmse(t1, gt_t1, mask), nrmse_t2=nrmse(t2, gt_t2, mask), **timing)

    def row(self) -> list:
        return [getattr(self, c) for c in TABLE_COLUMNS]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def write_report_csv(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_COLUMNS)
        for r in reports:
            w.writerow(["" if v is None else v for v in r.row()])
