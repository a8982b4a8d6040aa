"""Per-scene episodic memory graphs.

Each scene gets its own graph.  A viewpoint is added the first time the agent
stands on it; its feature is the pooled plain features of the navigable views
seen there.  Edges connect the new node to any of its navigable neighbours that
are already stored.  Revisiting a stored viewpoint changes nothing.

Snapshot format (JSON, UTF-8)::

    {"format": "scenemem-memory", "version": 1, "d": 32, "pooling": "max",
     "scenes": {"<scene_id>": {"nodes": [[viewpoint, [d floats]], ...],
                               "edges": [[u, v], ...]}}}

Floats are written with ``repr`` so restoring is bit exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

SNAPSHOT_FORMAT = "scenemem-memory"
SNAPSHOT_VERSION = 1


class Pooling(str, Enum):
    MAX = "max"
    MEAN = "mean"


class SnapshotError(ValueError):
    """Malformed memory snapshot."""


def pool(features: Sequence[np.ndarray] | np.ndarray, mode: Pooling | str = Pooling.MAX) -> np.ndarray:
    """Element-wise max or mean over a non-empty stack of equal-length vectors."""
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("pool needs a non-empty sequence of equal-length vectors")
    mode = Pooling(mode)
    if mode is Pooling.MAX:
        return arr.max(axis=0)
    return arr.mean(axis=0)


@dataclass
class SceneGraph:
    nodes: dict[int, np.ndarray] = field(default_factory=dict)
    edges: set[tuple[int, int]] = field(default_factory=set)

    @property
    def size(self) -> tuple[int, int]:
        return len(self.nodes), len(self.edges)

    def adjacency_matrix(self, order: Sequence[int]) -> np.ndarray:
        index = {v: i for i, v in enumerate(order)}
        a = np.zeros((len(order), len(order)))
        for u, v in self.edges:
            if u in index and v in index:
                a[index[u], index[v]] = a[index[v], index[u]] = 1.0
        return a


class EpisodicMemory:
    """Scene-keyed store of memory graphs."""

    def __init__(self, d: int, pooling: Pooling | str = Pooling.MAX) -> None:
        self.d = int(d)
        self.pooling = Pooling(pooling)
        self.scenes: dict[str, SceneGraph] = {}

    def graph(self, scene_id: str) -> SceneGraph:
        return self.scenes.get(scene_id) or SceneGraph()

    def size(self, scene_id: str) -> tuple[int, int]:
        g = self.scenes.get(scene_id)
        return g.size if g is not None else (0, 0)

    def update(self, scene_id: str, ob) -> "EpisodicMemory":
        g = self.scenes.setdefault(scene_id, SceneGraph())
        vp = ob.viewpoint
        if vp in g.nodes:
            return self
        feats = ob.navigable_feats
        if feats.shape[1] != self.d:
            raise ValueError(f"observation feature dim {feats.shape[1]} != memory dim {self.d}")
        g.nodes[vp] = pool(feats, self.pooling)
        for v in ob.navigable_views:
            if v in g.nodes and v != vp:
                g.edges.add((min(vp, v), max(vp, v)))
        return self

    def retrieve(self, scene_id: str, candidates: Iterable[int]) -> np.ndarray:
        """Stored feature per candidate, or zeros for unknown viewpoints."""
        cands = list(candidates)
        out = np.zeros((len(cands), self.d))
        g = self.scenes.get(scene_id)
        if g is None:
            return out
        for i, v in enumerate(cands):
            m = g.nodes.get(v)
            if m is not None:
                out[i] = m
        return out

    def reset(self, scene_id: str | None = None) -> "EpisodicMemory":
        """Empty one scene's graph, or every graph when ``scene_id`` is None."""
        if scene_id is None:
            self.scenes.clear()
        else:
            self.scenes.pop(scene_id, None)
        return self

    def copy(self) -> "EpisodicMemory":
        return EpisodicMemory.restore(self.snapshot())

    def snapshot(self) -> bytes:
        doc = {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "d": self.d,
            "pooling": self.pooling.value,
            "scenes": {
                sid: {
                    "nodes": [[int(v), [float(x) for x in m]] for v, m in sorted(g.nodes.items())],
                    "edges": [[u, v] for u, v in sorted(g.edges)],
                }
                for sid, g in sorted(self.scenes.items())
            },
        }
        return json.dumps(doc, separators=(",", ":")).encode("utf-8")

    @classmethod
    def restore(cls, blob: bytes) -> "EpisodicMemory":
        try:
            doc = json.loads(blob.decode("utf-8"))
            if doc.get("format") != SNAPSHOT_FORMAT:
                raise SnapshotError("not a memory snapshot")
            if doc.get("version") != SNAPSHOT_VERSION:
                raise SnapshotError(f"unsupported snapshot version {doc.get('version')}")
            mem = cls(int(doc["d"]), doc["pooling"])
            for sid, sg in doc["scenes"].items():
                g = SceneGraph()
                for v, m in sg["nodes"]:
                    vec = np.asarray(m, dtype=np.float64)
                    if vec.shape != (mem.d,) or not np.all(np.isfinite(vec)):
                        raise SnapshotError(f"bad node feature for viewpoint {v} in {sid}")
                    g.nodes[int(v)] = vec
                for u, v in sg["edges"]:
                    u, v = int(u), int(v)
                    if u not in g.nodes or v not in g.nodes:
                        raise SnapshotError(f"edge ({u}, {v}) references a missing node")
                    g.edges.add((min(u, v), max(u, v)))
                mem.scenes[str(sid)] = g
        except SnapshotError:
            raise
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError, AttributeError) as exc:
            raise SnapshotError(f"malformed memory snapshot: {exc}") from exc
        return mem

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EpisodicMemory):
            return NotImplemented
        return self.snapshot() == other.snapshot()


class ZeroMemory(EpisodicMemory):
    """Retrieval stub that always returns zeros and never stores anything."""

    def update(self, scene_id: str, ob) -> "ZeroMemory":
        return self

    def retrieve(self, scene_id: str, candidates: Iterable[int]) -> np.ndarray:
        return np.zeros((len(list(candidates)), self.d))
