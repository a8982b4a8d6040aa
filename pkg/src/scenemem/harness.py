"""Evaluation protocols and reports.

Protocols
---------
single   memory starts empty per scene and persists across episodes
twopass  a first pass over all episodes only fills memory; the second is scored
reinit   memory is cleared before every episode
zero     retrieval always returns zeros (memory-free baseline, same weights)
"""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from .agent import AgentConfig, CheckpointError, Params
from .memory import EpisodicMemory, ZeroMemory
from .metrics import METRIC_NAMES, MetricVector, aggregate, check_ranges, evaluate, summarize
from .rollout import rollout
from .world import Dataset

PROTOCOLS = ("single", "twopass", "reinit", "zero")
PROB_TOL = 1e-9


@dataclass(frozen=True)
class Protocol:
    kind: str = "single"
    shuffle_seed: int | None = None
    freeze_second_pass: bool = False

    def __post_init__(self) -> None:
        if self.kind not in PROTOCOLS:
            raise ValueError(f"protocol must be one of {PROTOCOLS}, got {self.kind!r}")

    @property
    def label(self) -> str:
        return self.kind if self.shuffle_seed is None else f"{self.kind}@shuffle{self.shuffle_seed}"


@dataclass
class EvalRecord:
    episode_id: str
    scene_id: str
    protocol: str
    order_index: int
    path: list[int]
    metrics: MetricVector
    memory_size: tuple[int, int]
    stopped: bool
    prob_violations: int = 0
    seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "scene_id": self.scene_id,
            "protocol": self.protocol,
            "order_index": self.order_index,
            "seed": self.seed,
            "path": self.path,
            "stopped": self.stopped,
            "memory_nodes": self.memory_size[0],
            "memory_edges": self.memory_size[1],
            "prob_violations": self.prob_violations,
            **self.metrics.as_dict(),
        }


def check_compatible(cfg: AgentConfig, dataset: Dataset) -> None:
    """Raise CheckpointError when the dataset cannot be fed to this agent."""
    for sc in dataset.scenes.values():
        if sc.v_lm != cfg.v_lm:
            raise CheckpointError(f"scene {sc.scene_id} has v_lm={sc.v_lm}, agent expects {cfg.v_lm}")
        if max(len(a) for a in sc.adjacency) > cfg.k_max:
            raise CheckpointError(f"scene {sc.scene_id} exceeds k_max={cfg.k_max}")
    for ep in dataset.episodes:
        if len(ep.instruction) > cfg.l_max:
            raise CheckpointError(f"episode {ep.episode_id} instruction longer than l_max={cfg.l_max}")
        if max(ep.instruction) >= cfg.vocab:
            raise CheckpointError(f"episode {ep.episode_id} uses tokens outside the vocabulary")


def distribution_violations(probs: np.ndarray, mask: np.ndarray, tol: float = PROB_TOL) -> int:
    bad = 0
    if abs(math.fsum(probs.tolist()) - 1.0) > tol:
        bad += 1
    if np.any(probs < 0):
        bad += 1
    if np.any(probs[~mask] != 0.0):
        bad += 1
    return bad


def episode_order(n: int, shuffle_seed: int | None) -> list[int]:
    if shuffle_seed is None:
        return list(range(n))
    return [int(i) for i in np.random.default_rng([shuffle_seed, 2]).permutation(n)]


def run_eval(
    params: Params,
    cfg: AgentConfig,
    dataset: Dataset,
    protocol: Protocol,
    *,
    seed: int | None = None,
) -> list[EvalRecord]:
    """Greedy evaluation of every episode under ``protocol``; records in execution order."""
    check_compatible(cfg, dataset)
    torch.set_num_threads(1)
    order = episode_order(len(dataset.episodes), protocol.shuffle_seed)
    memory: EpisodicMemory = ZeroMemory(cfg.d, cfg.pooling) if protocol.kind == "zero" else EpisodicMemory(cfg.d, cfg.pooling)
    records: list[EvalRecord] = []
    with torch.no_grad():
        if protocol.kind == "twopass":
            for i in order:
                rollout(params, cfg, dataset, [dataset.episodes[i]], memory, "greedy")
        scoring_memory = memory
        for pos, i in enumerate(order):
            ep = dataset.episodes[i]
            if protocol.kind == "reinit":
                memory.reset()
            if protocol.kind == "twopass" and protocol.freeze_second_pass:
                scoring_memory = memory.copy()
            res = rollout(params, cfg, dataset, [ep], scoring_memory, "greedy", keep_probs=True)[0]
            scene = dataset.scene_of(ep)
            mv = evaluate(scene, res.path, ep.route)
            viol = sum(distribution_violations(s.probs, s.mask) for s in res.steps)
            viol += len(check_ranges(mv))
            records.append(
                EvalRecord(
                    episode_id=ep.episode_id, scene_id=ep.scene_id, protocol=protocol.label,
                    order_index=pos, path=res.path, metrics=mv, memory_size=res.memory_size,
                    stopped=res.stopped, prob_violations=viol, seed=seed,
                )
            )
    return records


def summarize_records(records: Sequence[EvalRecord]) -> dict[str, tuple[float, float]]:
    return summarize(r.metrics for r in records)


def mean_metrics(records: Sequence[EvalRecord]) -> dict[str, float]:
    return aggregate(r.metrics for r in records)


def progress_curve(records: Sequence[EvalRecord], window: int, metric: str = "spl") -> list[tuple[float, float]]:
    """Trailing moving average of ``metric`` over execution order.

    Point ``i`` averages records ``i - window + 1 .. i`` and sits at progress
    ``(i + 1) / n``; ``window = n`` yields the single global mean.
    """
    if not records:
        raise ValueError("no records")
    if metric not in METRIC_NAMES:
        raise ValueError(f"unknown metric {metric!r}")
    n = len(records)
    if not 1 <= window <= n:
        raise ValueError(f"window must lie in [1, {n}]")
    vals = [getattr(r.metrics, metric) for r in sorted(records, key=lambda r: r.order_index)]
    return [((i + 1) / n, math.fsum(vals[i - window + 1: i + 1]) / window) for i in range(window - 1, n)]


def quintile_means(records: Sequence[EvalRecord], metric: str = "spl") -> list[float]:
    vals = [getattr(r.metrics, metric) for r in sorted(records, key=lambda r: r.order_index)]
    chunks = np.array_split(np.arange(len(vals)), 5)
    return [math.fsum(vals[j] for j in c) / len(c) for c in chunks]


@dataclass
class StabilityReport:
    protocol: str
    orders: list[int]
    per_order: list[dict[str, float]]
    mean: dict[str, float] = field(default_factory=dict)
    std: dict[str, float] = field(default_factory=dict)


def stability_report(
    params: Params,
    cfg: AgentConfig,
    dataset: Dataset,
    n_orders: int = 5,
    *,
    kind: str = "single",
    base_seed: int = 0,
    orders: Sequence[int] | None = None,
) -> StabilityReport:
    """Mean and sample standard deviation of split-level metrics over shuffled orders."""
    if n_orders < 2:
        raise ValueError("need at least two orders")
    seeds = list(orders) if orders is not None else [base_seed + k for k in range(n_orders)]
    per_order = [mean_metrics(run_eval(params, cfg, dataset, Protocol(kind, s))) for s in seeds]
    return _stability(kind, seeds, per_order)


def _stability(kind: str, seeds: list, per_order: list[dict[str, float]]) -> StabilityReport:
    rep = StabilityReport(kind, list(seeds), per_order)
    for name in METRIC_NAMES:
        vals = [m[name] for m in per_order]
        rep.mean[name] = math.fsum(vals) / len(vals)
        rep.std[name] = statistics.stdev(vals)
    return rep


@dataclass
class Comparison:
    deltas: dict[str, float]
    paired: dict[str, dict[str, float]]


def compare(a: Sequence[EvalRecord], b: Sequence[EvalRecord]) -> Comparison:
    """A minus B: split-level mean deltas and per-episode paired differences."""
    ma, mb = mean_metrics(a), mean_metrics(b)
    by_b = {r.episode_id: r for r in b}
    paired = {}
    for r in a:
        other = by_b.get(r.episode_id)
        if other is None:
            continue
        paired[r.episode_id] = {
            n: getattr(r.metrics, n) - getattr(other.metrics, n) for n in METRIC_NAMES
        }
    return Comparison({n: ma[n] - mb[n] for n in METRIC_NAMES}, paired)


# ---------------------------------------------------------------------------
# delimited output


def records_jsonl(records: Iterable[EvalRecord]) -> str:
    return "".join(json.dumps(r.to_dict(), separators=(",", ":")) + "\n" for r in records)


def summary_csv(summary: dict[str, tuple[float, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "mean", "std"])
    for name in METRIC_NAMES:
        mean, std = summary[name]
        w.writerow([name, repr(mean), repr(std)])
    return buf.getvalue()


def curve_csv(points: Sequence[tuple[float, float]], metric: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["progress", metric])
    for p, v in points:
        w.writerow([repr(p), repr(v)])
    return buf.getvalue()


def comparison_csv(comps: dict[str, Comparison]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["comparison", *METRIC_NAMES])
    for label, c in comps.items():
        w.writerow([label, *(repr(c.deltas[n]) for n in METRIC_NAMES)])
    return buf.getvalue()


def read_records(path: str | Path) -> list[EvalRecord]:
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        out.append(
            EvalRecord(
                episode_id=d["episode_id"], scene_id=d["scene_id"], protocol=d["protocol"],
                order_index=d["order_index"], path=d["path"],
                metrics=MetricVector(**{n: d[n] for n in METRIC_NAMES}),
                memory_size=(d["memory_nodes"], d["memory_edges"]), stopped=d["stopped"],
                prob_violations=d.get("prob_violations", 0), seed=d.get("seed"),
            )
        )
    return out
