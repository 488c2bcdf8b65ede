"""Exact hypervolume for minimisation problems, plus front normalisation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


def nondominated_mask(points: np.ndarray) -> np.ndarray:
    """True for rows not dominated by any other row (minimisation).

    Exact duplicates are all kept.
    """
    p = np.asarray(points, dtype=float)
    n = len(p)
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        if not keep[i]:
            continue
        dominated = np.all(p[i] <= p, axis=1) & np.any(p[i] < p, axis=1)
        keep &= ~dominated
    return keep


def _hv2d(p: np.ndarray, ref: np.ndarray) -> float:
    p = p[np.lexsort((p[:, 1], p[:, 0]))]
    total, best_y = 0.0, ref[1]
    for x, y in p:
        if y < best_y:
            total += (ref[0] - x) * (best_y - y)
            best_y = y
    return total


def _hv(p: np.ndarray, ref: np.ndarray) -> float:
    if len(p) == 0:
        return 0.0
    d = p.shape[1]
    if d == 1:
        return float(ref[0] - p[:, 0].min())
    if d == 2:
        return _hv2d(p, ref)
    # slice along the last objective and sweep
    p = p[np.argsort(p[:, -1], kind="stable")]
    total = 0.0
    for i in range(len(p)):
        upper = p[i + 1, -1] if i + 1 < len(p) else ref[-1]
        depth = upper - p[i, -1]
        if depth <= 0:
            continue
        sub = p[: i + 1, :-1]
        sub = sub[nondominated_mask(sub)]
        total += depth * _hv(sub, ref[:-1])
    return total


def hypervolume(points, reference_point) -> float:
    """Lebesgue measure dominated by ``points`` and bounded by ``reference_point``.

    Points that do not strictly dominate the reference in every coordinate
    are dropped with a warning.
    """
    ref = np.asarray(reference_point, dtype=float)
    p = np.asarray(points, dtype=float).reshape(-1, ref.size)
    ok = np.all(p < ref, axis=1)
    if not ok.all():
        warnings.warn(f"discarding {int((~ok).sum())} points outside the reference box", RuntimeWarning, stacklevel=2)
        p = p[ok]
    if len(p) == 0:
        return 0.0
    return float(_hv(p[nondominated_mask(p)], ref))


@dataclass(frozen=True)
class Normalizer:
    """Affine map of each objective onto [0, 1] from recorded bounds."""

    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def from_fronts(cls, fronts) -> Normalizer:
        pts = [np.asarray(f, dtype=float) for f in fronts if len(f)]
        if not pts:
            raise ValueError("no points to normalise")
        allp = np.vstack(pts)
        finite = np.where(np.isfinite(allp), allp, np.nan)
        return cls(np.nanmin(finite, axis=0), np.nanmax(finite, axis=0))

    def __call__(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, self.lower.size)
        span = np.where(self.upper > self.lower, self.upper - self.lower, 1.0)
        return (p - self.lower) / span


def normalized_hypervolumes(fronts, reference: float = 1.1) -> tuple[list[float], Normalizer]:
    """HV of each front after joint min/max normalisation; empty fronts score 0."""
    norm = Normalizer.from_fronts(fronts)
    ref = np.full(norm.lower.size, reference)
    out = []
    for f in fronts:
        if len(f) == 0:
            out.append(0.0)
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            out.append(hypervolume(norm(f), ref))
    return out, norm
