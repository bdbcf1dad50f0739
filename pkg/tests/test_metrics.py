import csv
import json
import math

import numpy as np
import pytest

from mrfknn.core import rng
from mrfknn.metrics import EvalReport, mae_pct, nrmse, ssim, write_report_csv


def loop_mae(pred, gt, mask):
    tot, n = 0.0, 0
    for p, g, m in zip(pred.ravel(), gt.ravel(), mask.ravel()):
        if m:
            tot += abs(p - g) / abs(g)
            n += 1
    return 100 * tot / n


def loop_nrmse(pred, gt, mask):
    vals = [(p, g) for p, g, m in zip(pred.ravel(), gt.ravel(), mask.ravel()) if m]
    rmse = math.sqrt(sum((p - g) ** 2 for p, g in vals) / len(vals))
    gs = [g for _, g in vals]
    return rmse / (max(gs) - min(gs))


def loop_ssim(x, y, mask, win=11, sigma=1.5):
    """Windowed SSIM written out window by window."""
    rows = [i for i in range(mask.shape[0]) if mask[i].any()]
    cols = [j for j in range(mask.shape[1]) if mask[:, j].any()]
    r0, r1, c0, c1 = rows[0], rows[-1], cols[0], cols[-1]
    L = max(y[i, j] for i in range(mask.shape[0]) for j in range(mask.shape[1]) if mask[i, j])
    C1, C2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    h = win // 2
    w = [[math.exp(-((a - h) ** 2 + (b - h) ** 2) / (2 * sigma ** 2)) for b in range(win)]
         for a in range(win)]
    ws = sum(map(sum, w))
    vals = []
    for i in range(r0 + h, r1 - h + 1):
        for j in range(c0 + h, c1 - h + 1):
            if not mask[i, j]:
                continue
            mx = my = sxx = syy = sxy = 0.0
            for a in range(win):
                for b in range(win):
                    wt = w[a][b] / ws
                    xv, yv = x[i - h + a, j - h + b], y[i - h + a, j - h + b]
                    mx += wt * xv
                    my += wt * yv
                    sxx += wt * xv * xv
                    syy += wt * yv * yv
                    sxy += wt * xv * yv
            vx, vy, cxy = sxx - mx * mx, syy - my * my, sxy - mx * my
            vals.append(((2 * mx * my + C1) * (2 * cxy + C2))
                        / ((mx * mx + my * my + C1) * (vx + vy + C2)))
    return sum(vals) / len(vals)


def pair(M=32, seed=0):
    g = rng(seed)
    gt = g.uniform(100, 2000, (M, M))
    pred = gt * (1 + 0.1 * g.standard_normal((M, M)))
    mask = np.zeros((M, M), bool)
    mask[3:29, 5:30] = True
    mask[10:14, 10:14] = False
    return pred, gt, mask


def test_mae_closed_forms():
    pred, gt, mask = pair()
    assert mae_pct(gt, gt, mask) == 0
    assert mae_pct(1.1 * gt, gt, mask) == pytest.approx(10.0, rel=1e-12)


def test_mae_oracle():
    pred, gt, mask = pair(seed=1)
    assert abs(mae_pct(pred, gt, mask) - loop_mae(pred, gt, mask)) < 1e-12


def test_mae_rejects_zero_truth():
    gt = np.ones((4, 4))
    gt[0, 0] = 0
    with pytest.raises(ValueError):
        mae_pct(gt, gt)
    with pytest.raises(ValueError):
        mae_pct(gt, gt, np.zeros((4, 4), bool))


def test_nrmse_closed_forms():
    pred, gt, mask = pair(seed=2)
    assert nrmse(gt, gt, mask) == 0
    rng_ = gt[mask].max() - gt[mask].min()
    assert nrmse(gt + 7.0, gt, mask) == pytest.approx(7.0 / rng_, rel=1e-12)
    assert abs(nrmse(pred, gt, mask) - loop_nrmse(pred, gt, mask)) < 1e-12
    with pytest.raises(ValueError):
        nrmse(gt, np.ones_like(gt), mask)


def test_scale_covariance():
    pred, gt, mask = pair(seed=3)
    assert mae_pct(3 * pred, 3 * gt, mask) == pytest.approx(mae_pct(pred, gt, mask), rel=1e-12)
    assert nrmse(3 * pred, 3 * gt, mask) == pytest.approx(nrmse(pred, gt, mask), rel=1e-12)


def test_permutation_invariance():
    pred, gt, mask = pair(seed=4)
    perm = rng(5).permutation(gt.size)
    p2, g2, m2 = (a.ravel()[perm].reshape(a.shape) for a in (pred, gt, mask))
    assert mae_pct(p2, g2, m2) == pytest.approx(mae_pct(pred, gt, mask), rel=1e-12)
    assert nrmse(p2, g2, m2) == pytest.approx(nrmse(pred, gt, mask), rel=1e-12)


def test_ssim_identity_and_offset():
    _, gt, mask = pair(seed=6)
    assert ssim(gt, gt, mask) == pytest.approx(1.0, abs=1e-12)
    assert ssim(gt + 100 * gt.max(), gt, mask) < 0.5


def test_ssim_oracle():
    pred, gt, mask = pair(seed=7)
    assert abs(ssim(pred, gt, mask) - loop_ssim(pred, gt, mask)) < 1e-9


def test_ssim_whole_image_flip():
    pred, gt, mask = pair(seed=8)
    a = ssim(pred, gt, mask)
    b = ssim(pred[::-1, ::-1], gt[::-1, ::-1], mask[::-1, ::-1])
    assert a == pytest.approx(b, abs=1e-12)


def test_ssim_small_mask_rejected():
    gt = np.ones((32, 32))
    mask = np.zeros((32, 32), bool)
    mask[2:6, 2:6] = True
    with pytest.raises(ValueError):
        ssim(gt, gt, mask)


def test_report_csv(tmp_path):
    pred, gt, mask = pair(seed=9)
    r = EvalReport.from_maps("dm", pred, 0.1 * pred, gt, 0.1 * gt, mask, recon_s=0.5)
    assert r.mae_t1 == pytest.approx(r.mae_t2)
    write_report_csv(tmp_path / "r.csv", [r])
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows[0][0] == "method" and rows[1][0] == "dm" and rows[1][-1] == ""
    assert json.loads(r.to_json())["recon_s"] == 0.5
