"""Dictionary matching (DM) and SVD-compressed dictionary matching (SDM)."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import save_tensor
from .sequence import Dictionary

__all__ = ["MatchResult", "dm_match", "sdm_match", "save_match"]


@dataclass
class MatchResult:
    t1_map: np.ndarray
    t2_map: np.ndarray
    score_map: np.ndarray
    index_map: np.ndarray   # dictionary row per pixel, -1 on background


def _match(coeffs: np.ndarray, entries: np.ndarray, chunk: int = 4096):
    """Best |<entry, x>| / ||x|| per row of ``coeffs``; first index wins ties."""
    best = np.empty(coeffs.shape[0], dtype=np.int64)
    score = np.empty(coeffs.shape[0])
    eh = entries.conj().T
    for s in range(0, coeffs.shape[0], chunk):
        x = coeffs[s:s + chunk]
        corr = np.abs(x @ eh)
        best[s:s + chunk] = np.argmax(corr, axis=1)
        norm = np.linalg.norm(x, axis=1)
        top = corr[np.arange(x.shape[0]), best[s:s + chunk]]
        score[s:s + chunk] = np.divide(top, norm, out=np.zeros_like(top), where=norm > 0)
    return best, score


def _assemble(series, d, mask, coeff_fn):
    series = np.asarray(series)
    M0, M1, _ = series.shape
    mask = np.ones((M0, M1), bool) if mask is None else np.asarray(mask, bool)
    px = series[mask]
    best, score = _match(coeff_fn(px), d.entries)
    t1 = np.zeros((M0, M1))
    t2 = np.zeros((M0, M1))
    sc = np.zeros((M0, M1))
    idx = np.full((M0, M1), -1, dtype=np.int64)
    t1[mask] = d.labels[best, 0]
    t2[mask] = d.labels[best, 1]
    sc[mask] = score
    idx[mask] = best
    return MatchResult(t1, t2, sc, idx)


def dm_match(series: np.ndarray, d: Dictionary, mask: np.ndarray | None = None) -> MatchResult:
    """Match each foreground pixel's ``(T',)`` series against the full dictionary.

    The dictionary must already have the series' temporal length (see
    :func:`mrfknn.sequence.stack_dictionary`).
    """
    if d.basis is not None:
        raise ValueError("dm_match expects an uncompressed dictionary; use sdm_match")
    if series.shape[-1] != d.entries.shape[1]:
        raise ValueError(
            f"series length {series.shape[-1]} != dictionary length {d.entries.shape[1]}")
    return _assemble(series, d, mask, lambda px: px)


def sdm_match(series: np.ndarray, d: Dictionary, mask: np.ndarray | None = None) -> MatchResult:
    """Project series onto the dictionary's SVD basis, then match in the subspace."""
    if d.basis is None:
        raise ValueError("dictionary carries no compression basis")
    if series.shape[-1] != d.basis.shape[0]:
        raise ValueError(f"series length {series.shape[-1]} != basis length {d.basis.shape[0]}")
    return _assemble(series, d, mask, lambda px: px @ d.basis.conj())


def save_match(directory, res: MatchResult, manifest: dict | None = None) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    save_tensor(out / "t1.mrft", res.t1_map)
    save_tensor(out / "t2.mrft", res.t2_map)
    save_tensor(out / "score.mrft", res.score_map)
    (out / "match.json").write_text(json.dumps(manifest or {}, indent=2, sort_keys=True))
