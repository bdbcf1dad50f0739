"""Spiral trajectories, sliding-window stacking, KNN tables and the
agglomerated per-grid-point network input.

Point ``i`` of a trajectory is sample ``s`` of arm ``j`` with ``i = j*n + s``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "Trajectory",
    "NeighborTable",
    "N_GEOM",
    "make_spiral",
    "cartesian_trajectory",
    "stack_sliding_window",
    "knn_table",
    "grid_locations",
    "agglomerate",
    "feature_channel_mask",
    "active_channels",
]

N_GEOM = 5  # (dkx, dky, |p - q|, r, theta)


@dataclass(frozen=True)
class Trajectory:
    points: np.ndarray   # (N, 2) cycles/pixel
    arm_of: np.ndarray   # (N,) arm index
    n: int
    R: int

    @property
    def N(self) -> int:
        return self.points.shape[0]

    def polar(self) -> tuple[np.ndarray, np.ndarray]:
        """Radius and angle in [0, 2*pi) about the k-space origin; theta(origin) = 0."""
        r = np.hypot(self.points[:, 0], self.points[:, 1])
        theta = np.mod(np.arctan2(self.points[:, 1], self.points[:, 0]), 2 * np.pi)
        theta[r == 0] = 0.0
        theta[theta >= 2 * np.pi] = 0.0
        return r, theta

    def digest(self) -> str:
        h = hashlib.sha256(np.ascontiguousarray(self.points, dtype="<f8").tobytes())
        h.update(f"{self.n},{self.R}".encode())
        return h.hexdigest()[:16]


def make_spiral(n: int, R: int, turns: float) -> Trajectory:
    """Archimedean spiral, ``R`` arms of ``n`` samples each.

    Arm 0 is ``0.5*tau*(cos(2*pi*turns*tau), sin(2*pi*turns*tau))`` with
    ``tau = s/(n-1)``; arm ``j`` is arm 0 rotated by ``2*pi*j/R``.
    """
    if n < 2 or R < 1 or turns < 1:
        raise ValueError(f"invalid spiral counts n={n}, R={R}, turns={turns}")
    tau = np.arange(n) / (n - 1)
    phase = 2 * np.pi * turns * tau
    rot = 2 * np.pi * np.arange(R) / R
    ang = rot[:, None] + phase[None, :]
    rad = 0.5 * tau[None, :] * np.ones((R, 1))
    pts = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=-1).reshape(-1, 2)
    # exact arm-0 geometry; rotation of the endpoint rounds otherwise
    pts[:n, 0] = 0.5 * tau * np.cos(phase)
    pts[:n, 1] = 0.5 * tau * np.sin(phase)
    arm_of = np.repeat(np.arange(R), n)
    return Trajectory(points=pts, arm_of=arm_of, n=n, R=R)


def cartesian_trajectory(M: int, R: int = 1) -> Trajectory:
    """All ``M*M`` grid nodes, split into ``R`` interleaved arms of equal size.

    Node ``(a, b)`` sits at ``((a - M/2)/M, (b - M/2)/M)`` like the KNN grid.
    """
    if (M * M) % R:
        raise ValueError(f"M*M={M * M} not divisible by R={R}")
    a, b = np.meshgrid(np.arange(M), np.arange(M), indexing="ij")
    pts = np.stack([(a.ravel() - M / 2) / M, (b.ravel() - M / 2) / M], axis=-1)
    n = M * M // R
    order = np.concatenate([np.arange(j, M * M, R) for j in range(R)])
    return Trajectory(points=pts[order], arm_of=np.repeat(np.arange(R), n), n=n, R=R)


def stack_sliding_window(raw: np.ndarray, traj: Trajectory) -> np.ndarray:
    """Combine each run of ``R`` consecutive single-arm frames into one composite frame.

    ``raw`` is ``(n, T)`` where frame ``t`` was acquired on arm ``t % R``.
    Returns the ``(N, T // R)`` matrix of per-point feature vectors.
    """
    raw = np.asarray(raw)
    n, T = raw.shape
    if n != traj.n:
        raise ValueError(f"raw has {n} samples per frame, trajectory arms have {traj.n}")
    if T % traj.R:
        raise ValueError(f"T={T} is not divisible by R={traj.R}")
    Tp = T // traj.R
    # raw[s, w*R + j] -> out[j*n + s, w]
    return raw.reshape(n, Tp, traj.R).transpose(2, 0, 1).reshape(traj.R * n, Tp)


@dataclass(frozen=True)
class NeighborTable:
    M: int
    K: int
    idx: np.ndarray    # (M, M, K) int
    feat: np.ndarray   # (M, M, K, 5)


def grid_locations(M: int) -> np.ndarray:
    """k-space location of every grid node, shape ``(M, M, 2)``."""
    c = (np.arange(M) - M / 2) / M
    a, b = np.meshgrid(c, c, indexing="ij")
    return np.stack([a, b], axis=-1)


def _rank_candidates(pts, q, cand):
    d = pts[cand] - q[:, None, :]
    d2 = d[..., 0] ** 2 + d[..., 1] ** 2
    order = np.lexsort((cand, d2), axis=-1)
    return np.take_along_axis(cand, order, -1), np.take_along_axis(d2, order, -1)


def knn_table(traj: Trajectory, M: int, K: int) -> NeighborTable:
    """Exact K nearest trajectory points for every grid node.

    Candidates come from a KD-tree, then get re-ranked by exact squared
    distance with ties broken by lower point index. Nodes whose K-th
    distance ties the last candidate are re-queried with more candidates.
    """
    if K < 1 or M < 2:
        raise ValueError(f"invalid K={K} or M={M}")
    pts = traj.points
    N = pts.shape[0]
    if K > N:
        raise ValueError(f"K={K} exceeds number of trajectory points N={N}")
    q = grid_locations(M).reshape(-1, 2)
    tree = cKDTree(pts)

    idx = np.empty((q.shape[0], K), dtype=np.int64)
    todo = np.arange(q.shape[0])
    kq = min(N, K + 4)
    while todo.size:
        _, cand = tree.query(q[todo], k=kq)
        cand = np.asarray(cand).reshape(todo.size, kq)
        cand, d2 = _rank_candidates(pts, q[todo], cand)
        idx[todo] = cand[:, :K]
        if kq == N:
            break
        # the KD-tree radius is inexact at ties, so leave margin on the boundary
        unsure = d2[:, K - 1] >= d2[:, -1] * (1 - 1e-9)
        todo = todo[unsure]
        kq = min(N, 2 * kq)

    p = pts[idx]                                    # (Q, K, 2)
    delta = p - q[:, None, :]
    r, theta = traj.polar()
    feat = np.concatenate(
        [delta, np.hypot(delta[..., 0], delta[..., 1])[..., None],
         r[idx][..., None], theta[idx][..., None]], axis=-1)
    return NeighborTable(M=M, K=K, idx=idx.reshape(M, M, K), feat=feat.reshape(M, M, K, N_GEOM))


def agglomerate(signal: np.ndarray, table: NeighborTable, dtype=np.float64) -> np.ndarray:
    """Gather neighbor signals and geometry into an ``(M, M, K*(2T'+5))`` tensor.

    Per neighbor block: ``[Re f (T'), Im f (T'), dkx, dky, dist, r, theta]``.
    """
    signal = np.asarray(signal)
    if signal.ndim != 2:
        raise ValueError("signal must be (N, T') complex")
    if table.idx.max() >= signal.shape[0]:
        raise ValueError(
            f"neighbor table references point {table.idx.max()} but signal has {signal.shape[0]}")
    f = signal[table.idx]                           # (M, M, K, T')
    blocks = np.concatenate([f.real, f.imag, table.feat], axis=-1)
    return blocks.reshape(table.M, table.M, -1).astype(dtype, copy=False)


def feature_channel_mask(K: int, T_prime: int, xy: bool = True, density: bool = True) -> np.ndarray:
    """Boolean keep-mask over agglomerated channels for the feature ablation.

    ``xy`` covers the relative offsets and distance, ``density`` the polar
    coordinates ``(r, theta)``.
    """
    block = np.ones(2 * T_prime + N_GEOM, dtype=bool)
    block[2 * T_prime:2 * T_prime + 3] = xy
    block[2 * T_prime + 3:] = density
    return np.tile(block, K)


def active_channels(K: int, T_prime: int, xy: bool = True, density: bool = True) -> int:
    return int(feature_channel_mask(K, T_prime, xy, density).sum())
