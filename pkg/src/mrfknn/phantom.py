"""Ellipse phantoms carrying ground-truth T1/T2 maps."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import load_tensor, rng, save_tensor

__all__ = [
    "T1_BOUNDS",
    "T2_BOUNDS",
    "Ellipse",
    "PhantomSpec",
    "TissueMap",
    "tissue_defaults",
    "phantom_ellipses",
    "render_ellipses",
    "generate_phantom",
    "save_tissue_map",
    "load_tissue_map",
]

T1_BOUNDS = (100.0, 5000.0)
T2_BOUNDS = (10.0, 500.0)


def tissue_defaults() -> list[tuple[float, float]]:
    """(T1, T2) in ms for white matter, gray matter, CSF, muscle, fat and a lesion."""
    return [(850.0, 50.0), (1300.0, 80.0), (4000.0, 450.0),
            (1100.0, 40.0), (350.0, 130.0), (1500.0, 120.0)]


def _check_class(t1, t2):
    if not (T1_BOUNDS[0] <= t1 <= T1_BOUNDS[1] and T2_BOUNDS[0] <= t2 <= T2_BOUNDS[1] and t2 < t1):
        raise ValueError(f"tissue class ({t1}, {t2}) violates T1/T2 bounds or T2 < T1")


@dataclass(frozen=True)
class Ellipse:
    cx: float
    cy: float
    a: float
    b: float
    angle: float     # radians
    tissue: int      # index into PhantomSpec.tissue_classes


@dataclass(frozen=True)
class PhantomSpec:
    M: int = 64
    num_ellipses: int = 8
    tissue_classes: tuple = field(default_factory=lambda: tuple(tissue_defaults()))
    seed: int = 0

    def __post_init__(self):
        if self.num_ellipses < 1:
            raise ValueError("num_ellipses must be >= 1")
        if self.M < 16:
            raise ValueError(f"M={self.M} is too small for three 2x downsamplings (need >= 16)")
        if not self.tissue_classes:
            raise ValueError("at least one tissue class is required")
        for t1, t2 in self.tissue_classes:
            _check_class(t1, t2)


@dataclass
class TissueMap:
    t1: np.ndarray
    t2: np.ndarray
    mask: np.ndarray

    @property
    def M(self) -> int:
        return self.t1.shape[0]


def phantom_ellipses(spec: PhantomSpec) -> list[Ellipse]:
    """Ellipse list in drawing order; the first one is the outer head outline.

    Coordinates are normalized so the image spans ``[-1, 1]`` on each axis.
    """
    g = rng(spec.seed)
    n_cls = len(spec.tissue_classes)
    order = g.permutation(n_cls)
    ells = [Ellipse(cx=g.uniform(-0.03, 0.03), cy=g.uniform(-0.03, 0.03),
                    a=g.uniform(0.78, 0.9), b=g.uniform(0.65, 0.8),
                    angle=g.uniform(-0.2, 0.2), tissue=int(order[0]))]
    head = ells[0]
    for e in range(1, spec.num_ellipses):
        a = g.uniform(0.12, 0.45) * head.a
        b = g.uniform(0.12, 0.45) * head.b
        r = g.uniform(0, 0.45)
        phi = g.uniform(0, 2 * np.pi)
        ells.append(Ellipse(cx=head.cx + r * head.a * np.cos(phi),
                            cy=head.cy + r * head.b * np.sin(phi),
                            a=a, b=b, angle=g.uniform(0, np.pi),
                            tissue=int(order[e % n_cls])))
    return ells


def _pixel_coords(M):
    c = (np.arange(M) + 0.5) / M * 2 - 1
    return np.meshgrid(c, c, indexing="ij")


def render_ellipses(ellipses, classes, M: int) -> TissueMap:
    """Paint ellipses back to front; later ellipses overwrite earlier ones."""
    x, y = _pixel_coords(M)
    t1 = np.zeros((M, M))
    t2 = np.zeros((M, M))
    mask = np.zeros((M, M), dtype=bool)
    for e in ellipses:
        c, s = np.cos(e.angle), np.sin(e.angle)
        u = (x - e.cx) * c + (y - e.cy) * s
        v = -(x - e.cx) * s + (y - e.cy) * c
        inside = (u / e.a) ** 2 + (v / e.b) ** 2 <= 1.0
        t1[inside], t2[inside] = classes[e.tissue]
        mask |= inside
    return TissueMap(t1=t1, t2=t2, mask=mask)


def generate_phantom(spec: PhantomSpec) -> TissueMap:
    return render_ellipses(phantom_ellipses(spec), spec.tissue_classes, spec.M)


def save_tissue_map(directory, tm: TissueMap, spec: PhantomSpec | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_tensor(d / "t1.mrft", tm.t1)
    save_tensor(d / "t2.mrft", tm.t2)
    save_tensor(d / "mask.mrft", tm.mask)
    if spec is not None:
        meta = asdict(spec)
        meta["tissue_classes"] = [list(c) for c in spec.tissue_classes]
        (d / "phantom.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_tissue_map(directory) -> TissueMap:
    d = Path(directory)
    return TissueMap(t1=load_tensor(d / "t1.mrft"), t2=load_tensor(d / "t2.mrft"),
                     mask=load_tensor(d / "mask.mrft").astype(bool))
