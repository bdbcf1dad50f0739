"""Fingerprint simulation and dictionary construction.

The signal model is a spoiled inversion-prepared gradient-echo recursion:
per frame the transverse signal is ``Mz * sin(flip) * exp(-TE/T2)``, the
pulse leaves ``Mz * cos(flip)`` and longitudinal recovery over TR follows.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import load_tensor, rng, save_tensor
from .phantom import T1_BOUNDS, T2_BOUNDS

__all__ = [
    "SequenceParams",
    "Dictionary",
    "default_schedule",
    "default_t1_grid",
    "default_t2_grid",
    "simulate_fingerprint",
    "simulate_fingerprints",
    "build_dictionary",
    "svd_compress",
    "singular_energy",
    "stack_dictionary",
    "save_dictionary",
    "load_dictionary",
]


@dataclass(frozen=True)
class SequenceParams:
    flip_deg: np.ndarray
    tr_ms: np.ndarray
    te_ms: np.ndarray
    inversion: bool = True

    def __post_init__(self):
        f, tr, te = (np.asarray(a, dtype=np.float64) for a in (self.flip_deg, self.tr_ms, self.te_ms))
        if not (f.shape == tr.shape == te.shape) or f.ndim != 1:
            raise ValueError("flip, TR and TE must be 1-D arrays of equal length")
        # flip 0 is allowed so a pure delay can be expressed as a frame
        if np.any(f < 0) or np.any(f > 90):
            raise ValueError("flip angles must lie in [0, 90] degrees")
        if np.any(te >= tr) or np.any(te <= 0):
            raise ValueError("need 0 < TE < TR for every frame")
        object.__setattr__(self, "flip_deg", f)
        object.__setattr__(self, "tr_ms", tr)
        object.__setattr__(self, "te_ms", te)

    @property
    def T(self) -> int:
        return self.flip_deg.size

    def truncate(self, frames: int) -> "SequenceParams":
        return SequenceParams(self.flip_deg[:frames], self.tr_ms[:frames],
                              self.te_ms[:frames], self.inversion)


def default_schedule(T: int, seed: int = 0, window: int = 48) -> SequenceParams:
    """Sinusoidal flip train with pseudo-random TR/TE drawn from ``seed``."""
    if T % window:
        raise ValueError(f"T={T} must be divisible by the stacking window {window}")
    g = rng(seed)
    t = np.arange(T)
    flip = 10 + 50 * np.abs(np.sin(np.pi * t / 200))
    tr = 12 + 3 * g.random(T)
    te = np.minimum(5 + 60 * g.random(T), tr - 1)
    return SequenceParams(flip, tr, te, inversion=True)


def _check_t(t1, t2):
    t1 = np.asarray(t1, dtype=np.float64)
    t2 = np.asarray(t2, dtype=np.float64)
    if np.any(t1 < T1_BOUNDS[0]) or np.any(t1 > T1_BOUNDS[1]) or np.any(t2 < T2_BOUNDS[0]):
        raise ValueError("T1/T2 outside the supported tissue range")
    return t1, t2


def simulate_fingerprints(t1, t2, seq: SequenceParams) -> np.ndarray:
    """Vectorized recursion over many (T1, T2) pairs; returns ``(L, T)`` complex.

    T2 is only bounded below so the long-T2 limit stays reachable.
    """
    t1, t2 = _check_t(np.atleast_1d(t1), np.atleast_1d(t2))
    fa = np.deg2rad(seq.flip_deg)
    sin_fa, cos_fa = np.sin(fa), np.cos(fa)
    mz = np.full(t1.shape, -1.0 if seq.inversion else 1.0)
    out = np.empty((t1.size, seq.T))
    for t in range(seq.T):
        out[:, t] = mz * sin_fa[t] * np.exp(-seq.te_ms[t] / t2)
        mz = mz * cos_fa[t]
        mz = 1 + (mz - 1) * np.exp(-seq.tr_ms[t] / t1)
    return out.astype(np.complex128)


def simulate_fingerprint(t1: float, t2: float, seq: SequenceParams) -> np.ndarray:
    return simulate_fingerprints([t1], [t2], seq)[0]


def default_t1_grid() -> np.ndarray:
    return np.concatenate([np.arange(100, 2001, 50), np.arange(2200, 5001, 200)]).astype(float)


def default_t2_grid() -> np.ndarray:
    return np.concatenate([np.arange(10, 301, 5), np.arange(320, 501, 20)]).astype(float)


@dataclass
class Dictionary:
    """Row-normalized fingerprints with their (T1, T2) labels.

    When ``basis`` is set (``T x r``), ``entries`` holds the compressed
    ``L x r`` coefficients and series are projected with ``x @ conj(basis)``.
    """
    entries: np.ndarray
    labels: np.ndarray
    basis: np.ndarray | None = None

    @property
    def L(self) -> int:
        return self.labels.shape[0]

    @property
    def rank(self) -> int | None:
        return None if self.basis is None else self.basis.shape[1]

    def label_index(self) -> dict:
        return {(float(a), float(b)): i for i, (a, b) in enumerate(self.labels)}


def _normalize_rows(a):
    n = np.linalg.norm(a, axis=1, keepdims=True)
    return a / np.where(n > 0, n, 1.0)


def build_dictionary(t1_grid, t2_grid, seq: SequenceParams) -> Dictionary:
    """Simulate and normalize every grid pair with ``T2 < T1``, sorted by (T1, T2)."""
    t1_grid = np.unique(np.asarray(t1_grid, dtype=np.float64))
    t2_grid = np.unique(np.asarray(t2_grid, dtype=np.float64))
    if t1_grid.size == 0 or t2_grid.size == 0:
        raise ValueError("empty T1 or T2 grid")
    a, b = np.meshgrid(t1_grid, t2_grid, indexing="ij")
    keep = b < a
    labels = np.stack([a[keep], b[keep]], axis=1)
    if labels.shape[0] == 0:
        raise ValueError("no (T1, T2) pair satisfies T2 < T1")
    entries = _normalize_rows(simulate_fingerprints(labels[:, 0], labels[:, 1], seq))
    return Dictionary(entries=entries, labels=labels)


def stack_dictionary(d: Dictionary, window: int) -> Dictionary:
    """Mean over each ``window``-frame block, renormalized; matches stacked series."""
    if d.basis is not None:
        raise ValueError("stack the dictionary before compressing it")
    L, T = d.entries.shape
    if T % window:
        raise ValueError(f"dictionary length {T} not divisible by window {window}")
    means = d.entries.reshape(L, T // window, window).mean(axis=2)
    return Dictionary(entries=_normalize_rows(means), labels=d.labels.copy())


def svd_compress(d: Dictionary, rank: int) -> Dictionary:
    """Project the dictionary onto its top ``rank`` right singular vectors."""
    if d.basis is not None:
        raise ValueError("dictionary is already compressed")
    L, T = d.entries.shape
    if not 1 <= rank <= min(L, T):
        raise ValueError(f"rank {rank} outside [1, {min(L, T)}]")
    e = d.entries
    if np.iscomplexobj(e) and not np.any(e.imag):
        e = e.real
    _, _, vh = np.linalg.svd(e, full_matrices=False)
    basis = vh[:rank].conj().T
    comp = _normalize_rows(d.entries @ basis.conj())
    return Dictionary(entries=comp, labels=d.labels.copy(), basis=basis)


def singular_energy(d: Dictionary, rank: int) -> float:
    """Fraction of squared singular-value mass captured by the top ``rank`` terms."""
    s = np.linalg.svd(d.entries, compute_uv=False)
    return float(np.sum(s[:rank] ** 2) / np.sum(s ** 2))


def save_dictionary(directory, d: Dictionary, manifest: dict | None = None) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    save_tensor(out / "entries.mrft", d.entries)
    save_tensor(out / "labels.mrft", d.labels)
    if d.basis is not None:
        save_tensor(out / "basis.mrft", d.basis)
    meta = dict(manifest or {})
    meta.update(L=d.L, rank=d.rank)
    (out / "dictionary.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_dictionary(directory) -> Dictionary:
    src = Path(directory)
    basis = load_tensor(src / "basis.mrft") if (src / "basis.mrft").exists() else None
    return Dictionary(entries=load_tensor(src / "entries.mrft"),
                      labels=load_tensor(src / "labels.mrft"), basis=basis)
