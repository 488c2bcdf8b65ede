"""Independent reference computations used by the tests."""

from __future__ import annotations

from collections import deque

import numpy as np


def birth_death(rho: float, buffer: int) -> np.ndarray:
    """Stationary distribution of the M/M/1/B chain on states 0..B."""
    w = np.array([rho**k for k in range(buffer + 1)], dtype=float)
    return w / w.sum()


def bd_loss(rho, buffer):
    return birth_death(rho, buffer)[-1]


def bd_length(rho, buffer):
    p = birth_death(rho, buffer)
    return float(np.dot(np.arange(buffer + 1), p))


def bd_busy(rho, buffer):
    return 1.0 - birth_death(rho, buffer)[0]


def bfs_all_shortest(adjacency, src: int, dst: int) -> set[tuple[int, ...]]:
    """Every shortest component sequence from src to dst, by plain BFS."""
    dist = {src: 0}
    parents: dict[int, list[int]] = {src: []}
    q = deque([src])
    while q:
        u = q.popleft()
        for v in adjacency[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                parents[v] = [u]
                q.append(v)
            elif dist[v] == dist[u] + 1:
                parents[v].append(u)
    out = set()

    def walk(node, suffix):
        if node == src:
            out.add((src,) + suffix)
            return
        for p in parents[node]:
            walk(p, (node,) + suffix)

    if dst in dist:
        walk(dst, ())
    return out


def pareto_set(points) -> set[tuple[float, ...]]:
    """Distinct nondominated points, rounded to 12 significant digits."""
    pts = {tuple(float(f"{x:.12g}") for x in p) for p in points}
    keep = set()
    for p in pts:
        if not any(all(a <= b for a, b in zip(q, p)) and q != p for q in pts):
            keep.add(p)
    return keep
