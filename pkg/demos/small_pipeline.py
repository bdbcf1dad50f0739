"""The whole command chain on a small configuration, in a temporary directory.

Equivalent to running ``mrfknn synth``, ``dict``, ``baseline``, ``train``
and ``eval`` with the same ``--out``. The grid is 32x32 and training runs
for a handful of epochs, so the learned maps are rough. The point is to
show the artifacts each step writes and how the comparison table looks.

Run with ``python demos/small_pipeline.py``.
"""
import tempfile
from pathlib import Path

from mrfknn import pipeline

cfg = pipeline.ExperimentConfig(M=32, n=128, R=16, turns=6, T=192, train_slices=3,
                                test_slices=1, epochs=20, D_t1=16, D_t2=16,
                                unet_channels=[16, 32, 32], timing_repeats=1)

with tempfile.TemporaryDirectory() as tmp:
    out = Path(tmp)
    pipeline.cmd_synth(cfg, out)
    pipeline.cmd_dict(cfg, out)
    curves = pipeline.cmd_train(cfg, out)
    print(f"KNN table built in {curves['table_build_s']:.2f} s")
    for target in ("t1", "t2"):
        first, last = curves[target][0][1], curves[target][-1][1]
        print(f"{target} training loss {first:.3f} -> {last:.3f}")

    reports = pipeline.cmd_eval(cfg, out)
    print(f"{'method':>9} {'T1 MAE %':>9} {'T2 MAE %':>9} {'seconds':>8}")
    for r in reports:
        print(f"{r.method:>9} {r.mae_t1:9.1f} {r.mae_t2:9.1f} {r.total_s:8.3f}")

    print("artifacts:")
    for p in sorted(out.rglob("*")):
        if p.is_dir() and p.parent != out and p.parent.parent != out:
            continue
        if p.is_dir():
            print("  ", p.relative_to(out))
