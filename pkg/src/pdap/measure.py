"""Finitely supported vector measures u = sum_n u_n delta_{x_n} over a box domain."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box [lower, upper] in R^d."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size < 1:
            raise ValueError("domain bounds must be vectors of equal length d >= 1")
        if not np.all(lo < hi):
            raise ValueError("domain requires lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def interval(cls, a: float, b: float) -> "Domain":
        return cls(np.array([a]), np.array([b]))

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, x, atol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol))

    def clamp(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def grid(self, n_total: int) -> np.ndarray:
        """Tensor grid with ceil(n_total**(1/d)) points per axis, endpoints included."""
        per_axis = int(np.ceil(n_total ** (1.0 / self.dim) - 1e-12))
        per_axis = max(per_axis, 2)
        axes = [np.linspace(lo, hi, per_axis) for lo, hi in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass(frozen=True)
class CoeffSpace:
    """Real coordinates of H; each complex channel occupies an interleaved (re, im) pair."""

    channels: tuple = ("complex", "complex")

    def __post_init__(self):
        for tag in self.channels:
            if tag not in ("real", "complex"):
                raise ValueError(f"unknown channel tag {tag!r}")
        if not self.channels:
            raise ValueError("at least one channel required")

    @property
    def dim_h(self) -> int:
        return sum(2 if tag == "complex" else 1 for tag in self.channels)


@dataclass(frozen=True)
class DiscreteMeasure:
    """Points (n, d) and H-coefficients (n, dim_h). Treated as immutable."""

    points: np.ndarray
    coeffs: np.ndarray
    _norms: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        cfs = np.asarray(self.coeffs, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if cfs.ndim == 1:
            cfs = cfs.reshape(len(pts), -1) if len(pts) else cfs.reshape(0, max(cfs.size, 1))
        if pts.shape[0] != cfs.shape[0]:
            raise ValueError("points and coeffs must have equal length")
        pts = pts.copy()
        cfs = cfs.copy()
        pts.setflags(write=False)
        cfs.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "coeffs", cfs)
        norms = np.linalg.norm(cfs, axis=1) if len(cfs) else np.zeros(0)
        object.__setattr__(self, "_norms", norms)

    @classmethod
    def empty(cls, d: int, dim_h: int) -> "DiscreteMeasure":
        return cls(np.zeros((0, d)), np.zeros((0, dim_h)))

    @classmethod
    def dirac(cls, x, coeff) -> "DiscreteMeasure":
        return cls(np.atleast_2d(np.asarray(x, dtype=float)), np.atleast_2d(np.asarray(coeff, dtype=float)))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def dim_h(self) -> int:
        return self.coeffs.shape[1]

    @property
    def coeff_norms(self) -> np.ndarray:
        return self._norms

    def min_separation(self) -> float:
        if len(self) < 2:
            return np.inf
        diff = self.points[:, None, :] - self.points[None, :, :]
        dist = np.linalg.norm(diff, axis=-1)
        np.fill_diagonal(dist, np.inf)
        return float(dist.min())

    def total(self) -> np.ndarray:
        """u(Omega), summed left to right."""
        out = np.zeros(self.dim_h)
        for c in self.coeffs:
            out = out + c
        return out

    def to_json(self) -> str:
        return measure_to_json(self)


def tv_norm(m: DiscreteMeasure) -> float:
    """Total variation sum_n ||u_n||_H."""
    return float(np.sum(m.coeff_norms))


def prune(m: DiscreteMeasure, eps: float = 0.0) -> DiscreteMeasure:
    keep = m.coeff_norms > eps
    return DiscreteMeasure(m.points[keep], m.coeffs[keep])


def axpy(m: DiscreteMeasure, s: float, delta: DiscreteMeasure) -> DiscreteMeasure:
    """Return m + s*delta; coefficients at exactly coincident points are merged, zeros kept."""
    points = [p for p in m.points]
    coeffs = [c.copy() for c in m.coeffs]
    index = {tuple(p): i for i, p in enumerate(points)}
    for p, c in zip(delta.points, delta.coeffs):
        key = tuple(p)
        if key in index:
            coeffs[index[key]] = coeffs[index[key]] + s * c
        else:
            index[key] = len(points)
            points.append(p.copy())
            coeffs.append(s * c)
    if not points:
        return DiscreteMeasure.empty(max(m.d, delta.d), max(m.dim_h, delta.dim_h))
    return DiscreteMeasure(np.array(points), np.array(coeffs))


def _clusters(points: np.ndarray, radius: float) -> list[list[int]]:
    """Single-linkage components of the graph {|x_i - x_j| <= radius}, ordered by first member."""
    n = len(points)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if np.linalg.norm(points[i] - points[j]) <= radius:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def lump(m: DiscreteMeasure, radius: float) -> DiscreteMeasure:
    """Merge clusters (single linkage at distance <= radius) into one Dirac each.

    The merged position is the coefficient-norm weighted mean of the cluster
    (plain mean if all weights vanish); the merged coefficient is the vector sum.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if len(m) == 0:
        return m
    groups = _clusters(m.points, radius)
    pts, cfs = [], []
    for g in groups:
        if len(g) == 1:
            pts.append(m.points[g[0]])
            cfs.append(m.coeffs[g[0]])
            continue
        total = np.zeros(m.dim_h)
        for i in g:
            total = total + m.coeffs[i]
        w = m.coeff_norms[g]
        if w.sum() > 0:
            centre = (w[:, None] * m.points[g]).sum(axis=0) / w.sum()
        else:
            centre = m.points[g].mean(axis=0)
        pts.append(centre)
        cfs.append(total)
    return DiscreteMeasure(np.array(pts), np.array(cfs))


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def measure_to_json(m: DiscreteMeasure) -> str:
    pts = ",".join("[" + ",".join(_fmt(v) for v in p) + "]" for p in m.points)
    cfs = ",".join("[" + ",".join(_fmt(v) for v in c) + "]" for c in m.coeffs)
    return '{"points": [' + pts + '], "coeffs": [' + cfs + "]}"


def measure_from_json(text: str, d: int = 1, dim_h: int | None = None) -> DiscreteMeasure:
    data = json.loads(text)
    pts = np.array(data["points"], dtype=float)
    cfs = np.array(data["coeffs"], dtype=float)
    if pts.size == 0:
        return DiscreteMeasure.empty(d, dim_h if dim_h is not None else max(cfs.shape[-1], 1))
    return DiscreteMeasure(pts, cfs)


def save_measure(m: DiscreteMeasure, path) -> None:
    Path(path).write_text(measure_to_json(m) + "\n")


def load_measure(path, d: int = 1, dim_h: int | None = None) -> DiscreteMeasure:
    return measure_from_json(Path(path).read_text(), d=d, dim_h=dim_h)
