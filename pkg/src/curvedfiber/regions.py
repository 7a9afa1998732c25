"""Geometric selectors used to pick vertex sets from config files."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BoxSelector:
    lo: tuple
    hi: tuple

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        return np.all((points >= lo) & (points <= hi), axis=1)


@dataclass(frozen=True)
class SphereSelector:
    center: tuple
    radius: float

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        c = np.asarray(self.center, dtype=np.float64)
        return np.linalg.norm(points - c, axis=1) <= self.radius


@dataclass(frozen=True)
class IndexSelector:
    indices: tuple

    def contains(self, points: np.ndarray) -> np.ndarray:
        mask = np.zeros(len(np.atleast_2d(points)), dtype=bool)
        idx = np.asarray(self.indices, dtype=np.int64)
        mask[idx] = True
        return mask


def parse_selector(spec: dict):
    kind = spec.get("type")
    if kind == "box":
        return BoxSelector(lo=tuple(spec["min"]), hi=tuple(spec["max"]))
    if kind == "sphere":
        return SphereSelector(center=tuple(spec["center"]), radius=float(spec["radius"]))
    if kind == "indices":
        return IndexSelector(indices=tuple(int(i) for i in spec["values"]))
    raise ValueError(f"unknown selector type {kind!r}")


def select_vertices(points: np.ndarray, selectors) -> np.ndarray:
    """Indices of points inside any of the selectors."""
    mask = np.zeros(len(points), dtype=bool)
    for sel in selectors:
        mask |= sel.contains(points)
    return np.nonzero(mask)[0]
