"""Navigation metrics: TL, NE, SR, SPL, CLS, nDTW, SDTW and GP.

Geodesic distances (NE, SPL, GP) use the scene graph; nDTW and CLS compare
node positions with straight-line distances.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from .world import Scene, path_length

SUCCESS_RADIUS = 3.0
METRIC_NAMES = ("tl", "ne", "sr", "spl", "cls", "ndtw", "sdtw", "gp")


@dataclass(frozen=True)
class MetricVector:
    tl: float
    ne: float
    sr: float
    spl: float
    cls: float
    ndtw: float
    sdtw: float
    gp: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def tl(scene: Scene, path: Sequence[int]) -> float:
    """Trajectory length in metres."""
    return path_length(scene, path)


def ne(scene: Scene, path: Sequence[int], goal: int) -> float:
    """Geodesic distance from the stop node to the goal."""
    return scene.distance(path[-1], goal)


def sr(scene: Scene, path: Sequence[int], goal: int, radius: float = SUCCESS_RADIUS) -> float:
    return 1.0 if ne(scene, path, goal) < radius else 0.0


def success_from_error(error: float, radius: float = SUCCESS_RADIUS) -> float:
    return 1.0 if error < radius else 0.0


def spl(scene: Scene, path: Sequence[int], route: Sequence[int], radius: float = SUCCESS_RADIUS) -> float:
    shortest = scene.distance(route[0], route[-1])
    taken = tl(scene, path)
    s = sr(scene, path, route[-1], radius)
    if s == 0.0:
        return 0.0
    return s * shortest / max(shortest, taken) if max(shortest, taken) > 0 else s


def dtw(a: np.ndarray, b: np.ndarray) -> float:
    """Classic DTW over Euclidean point distances (sum of matched costs)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, m = len(a), len(b)
    cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            acc[i, j] = cost[i - 1, j - 1] + min(acc[i - 1, j], acc[i, j - 1], acc[i - 1, j - 1])
    return float(acc[n, m])


def ndtw(scene: Scene, path: Sequence[int], route: Sequence[int], radius: float = SUCCESS_RADIUS) -> float:
    d = dtw(scene.positions[list(path)], scene.positions[list(route)])
    return math.exp(-d / (len(route) * radius))


def sdtw(scene: Scene, path: Sequence[int], route: Sequence[int], radius: float = SUCCESS_RADIUS) -> float:
    return sr(scene, path, route[-1], radius) * ndtw(scene, path, route, radius)


def cls(scene: Scene, path: Sequence[int], route: Sequence[int], radius: float = SUCCESS_RADIUS) -> float:
    """Coverage of the reference weighted by length conformity."""
    p = scene.positions[list(path)]
    r = scene.positions[list(route)]
    nearest = np.linalg.norm(r[:, None, :] - p[None, :, :], axis=-1).min(axis=1)
    coverage = float(np.mean(np.exp(-nearest / radius)))
    expected = coverage * path_length(scene, route)
    taken = tl(scene, path)
    denom = expected + abs(expected - taken)
    ls = expected / denom if denom > 0 else 1.0
    return coverage * ls


def gp(scene: Scene, path: Sequence[int], route: Sequence[int]) -> float:
    """Goal progress in metres."""
    goal = route[-1]
    return scene.distance(route[0], goal) - scene.distance(path[-1], goal)


def evaluate(scene: Scene, path: Sequence[int], route: Sequence[int], radius: float = SUCCESS_RADIUS) -> MetricVector:
    goal = route[-1]
    error = ne(scene, path, goal)
    success = success_from_error(error, radius)
    n = ndtw(scene, path, route, radius)
    return MetricVector(
        tl=tl(scene, path),
        ne=error,
        sr=success,
        spl=spl(scene, path, route, radius),
        cls=cls(scene, path, route, radius),
        ndtw=n,
        sdtw=success * n,
        gp=gp(scene, path, route),
    )


def check_ranges(m: MetricVector, tol: float = 1e-12) -> list[str]:
    """Names of violated MetricVector invariants (empty when all hold)."""
    bad = []
    if m.tl < 0:
        bad.append("tl")
    if m.ne < 0:
        bad.append("ne")
    if m.sr not in (0.0, 1.0):
        bad.append("sr")
    for name in ("spl", "cls", "sdtw"):
        if not -tol <= getattr(m, name) <= 1 + tol:
            bad.append(name)
    if not 0 < m.ndtw <= 1 + tol:
        bad.append("ndtw")
    if m.sdtw > m.ndtw + tol or m.spl > m.sr + tol or (m.sr == 0 and m.sdtw != 0):
        bad.append("ordering")
    return bad


def aggregate(vectors: Iterable[MetricVector]) -> dict[str, float]:
    """Per-metric arithmetic mean; ``math.fsum`` makes it order independent."""
    vs = list(vectors)
    if not vs:
        raise ValueError("nothing to aggregate")
    return {f.name: math.fsum(getattr(v, f.name) for v in vs) / len(vs) for f in fields(MetricVector)}


def summarize(vectors: Iterable[MetricVector]) -> dict[str, tuple[float, float]]:
    """Per-metric (mean, sample standard deviation)."""
    vs = list(vectors)
    means = aggregate(vs)
    out = {}
    for name in METRIC_NAMES:
        vals = [getattr(v, name) for v in vs]
        out[name] = (means[name], statistics.stdev(vals) if len(vals) > 1 else 0.0)
    return out
