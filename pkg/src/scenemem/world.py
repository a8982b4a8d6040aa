"""Synthetic navigation scenes, panoramic observations and expert routes.

Scenes are random geometric graphs on a square floor plan.  Every viewpoint
carries a landmark token; the view towards a neighbour is encoded as a fixed
landmark embedding, an orientation encoding and a small bounded perturbation.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

STOP = -1

# instruction vocabulary
PAD, CLS, UNK, STRAIGHT, LEFT, RIGHT = range(6)
N_SPECIAL = 6

DATASET_FORMAT = "scenemem-dataset"
DATASET_VERSION = 1

FEATURE_DIM = 32
ORIENT_DIM = 4
SIGMA_OBS = 0.05
K_MAX = 8
L_MAX = 24
EXTENT = 10.0


class WorldError(ValueError):
    """Invalid scene parameters, viewpoints or actions."""


def vocab_size(v_lm: int) -> int:
    return N_SPECIAL + v_lm


def landmark_token(landmark: int) -> int:
    return N_SPECIAL + int(landmark)


def wrap_angle(a: float) -> float:
    """Map an angle to [-pi, pi)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def orientation_encoding(theta, phi=0.0) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.broadcast_to(np.asarray(phi, dtype=np.float64), theta.shape)
    return np.stack([np.sin(theta), np.cos(theta), np.sin(phi), np.cos(phi)], axis=-1)


@lru_cache(maxsize=16)
def landmark_table(v_lm: int, d_lm: int, feature_seed: int = 0) -> np.ndarray:
    """Frozen landmark embeddings shared by every scene (offline view features).

    Rows are orthogonalised when ``v_lm <= d_lm`` and scaled to unit RMS entry.
    """
    rng = np.random.default_rng([feature_seed, v_lm, d_lm])
    g = rng.standard_normal((max(v_lm, d_lm), d_lm))
    if v_lm <= d_lm:
        q, _ = np.linalg.qr(g)
        table = q[:v_lm] * math.sqrt(d_lm)
    else:
        table = g[:v_lm] / np.linalg.norm(g[:v_lm], axis=1, keepdims=True) * math.sqrt(d_lm)
    table.setflags(write=False)
    return table


@dataclass
class Scene:
    """A connected viewpoint graph.  Treat instances as immutable."""

    scene_id: str
    seed: int
    positions: np.ndarray  # (n, 2) metres
    landmarks: np.ndarray  # (n,) ints in [0, v_lm)
    edges: tuple[tuple[int, int], ...]  # sorted (u < v)
    v_lm: int
    k_max: int = K_MAX

    @property
    def n_nodes(self) -> int:
        return len(self.landmarks)

    @cached_property
    def adjacency(self) -> tuple[tuple[int, ...], ...]:
        adj: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        return tuple(tuple(sorted(a)) for a in adj)

    def neighbors(self, v: int) -> tuple[int, ...]:
        self._check(v)
        return self.adjacency[v]

    def has_edge(self, u: int, v: int) -> bool:
        return v in self.adjacency[u]

    def length(self, u: int, v: int) -> float:
        """Edge length in metres (Euclidean distance of the endpoints)."""
        return float(np.linalg.norm(self.positions[u] - self.positions[v]))

    def heading(self, u: int, v: int) -> float:
        dx, dy = self.positions[v] - self.positions[u]
        return math.atan2(dy, dx)

    @cached_property
    def _all_pairs(self) -> tuple[np.ndarray, tuple[tuple[tuple[int, ...], ...], ...]]:
        runs = [_dijkstra(self, s) for s in range(self.n_nodes)]
        return np.array([r[0] for r in runs]), tuple(tuple(r[1]) for r in runs)

    @property
    def geodesic(self) -> np.ndarray:
        """All-pairs shortest-path distances (n, n)."""
        return self._all_pairs[0]

    def distance(self, u: int, v: int) -> float:
        return float(self.geodesic[u, v])

    def _check(self, v: int) -> None:
        if not (isinstance(v, (int, np.integer)) and 0 <= v < self.n_nodes):
            raise WorldError(f"unknown viewpoint {v!r} in scene {self.scene_id}")

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "seed": self.seed,
            "v_lm": self.v_lm,
            "k_max": self.k_max,
            "positions": self.positions.tolist(),
            "landmarks": self.landmarks.tolist(),
            "edges": [[u, v, self.length(u, v)] for u, v in self.edges],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        edges = tuple((int(u), int(v)) for u, v, _ in d["edges"])
        return cls(
            scene_id=str(d["scene_id"]),
            seed=int(d["seed"]),
            positions=np.asarray(d["positions"], dtype=np.float64).reshape(-1, 2),
            landmarks=np.asarray(d["landmarks"], dtype=np.int64),
            edges=edges,
            v_lm=int(d["v_lm"]),
            k_max=int(d.get("k_max", K_MAX)),
        )


@dataclass(frozen=True)
class Candidate:
    viewpoint: int
    heading: float  # relative to the agent heading, radians
    elevation: float
    feature: np.ndarray
    navigable: bool = True


@dataclass(frozen=True)
class Observation:
    viewpoint: int
    heading: float
    candidates: tuple[Candidate, ...]

    @property
    def navigable_views(self) -> list[int]:
        return [c.viewpoint for c in self.candidates if c.navigable]

    @property
    def navigable_feats(self) -> np.ndarray:
        return np.stack([c.feature for c in self.candidates if c.navigable])

    @property
    def features(self) -> np.ndarray:
        return np.stack([c.feature for c in self.candidates])

    @property
    def orientations(self) -> np.ndarray:
        return orientation_encoding(
            [c.heading for c in self.candidates], [c.elevation for c in self.candidates]
        )


@dataclass
class Episode:
    episode_id: str
    scene_id: str
    instruction: list[int]
    route: list[int]
    start_heading: float

    @property
    def goal(self) -> int:
        return self.route[-1]

    def to_dict(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "scene_id": self.scene_id,
            "instruction": list(self.instruction),
            "route": list(self.route),
            "start_heading": self.start_heading,
            "goal": self.goal,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Episode":
        ep = cls(
            episode_id=str(d["episode_id"]),
            scene_id=str(d["scene_id"]),
            instruction=[int(t) for t in d["instruction"]],
            route=[int(v) for v in d["route"]],
            start_heading=float(d["start_heading"]),
        )
        if "goal" in d and int(d["goal"]) != ep.goal:
            raise WorldError(f"episode {ep.episode_id}: goal does not match route end")
        return ep


# ---------------------------------------------------------------------------
# scene generation


class _DisjointSet:
    def __init__(self, n: int) -> None:
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[max(ra, rb)] = min(ra, rb)
        return True


def generate_scene(
    seed: int,
    n_nodes: int,
    mean_degree: float,
    *,
    v_lm: int = 8,
    k_max: int = K_MAX,
    extent: float = EXTENT,
    scene_id: str | None = None,
) -> Scene:
    """Random geometric scene on an ``extent`` x ``extent`` metre square.

    Edges: Euclidean minimum spanning tree, then every node is raised to
    degree 2 with its nearest admissible neighbour, then the globally shortest
    remaining pairs are added until the mean degree is reached.  No node ever
    exceeds ``k_max`` neighbours.
    """
    if n_nodes < 3:
        raise WorldError("a connected graph with minimum degree 2 needs at least 3 nodes")
    if not 2 <= mean_degree < n_nodes:
        raise WorldError(f"mean_degree must lie in [2, n_nodes), got {mean_degree}")
    if mean_degree > k_max or k_max < 2:
        raise WorldError(f"mean_degree {mean_degree} incompatible with k_max={k_max}")
    if v_lm < 1:
        raise WorldError("v_lm must be positive")

    rng = np.random.default_rng([seed, n_nodes])
    min_sep = 0.35 * extent / math.sqrt(n_nodes)
    pos = np.empty((n_nodes, 2))
    for i in range(n_nodes):
        for _ in range(1000):
            p = rng.uniform(0.0, extent, size=2)
            if i == 0 or np.min(np.linalg.norm(pos[:i] - p, axis=1)) >= min_sep:
                break
        pos[i] = p
    landmarks = rng.integers(0, v_lm, size=n_nodes)

    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    pairs = sorted(
        ((dist[u, v], u, v) for u in range(n_nodes) for v in range(u + 1, n_nodes)),
    )
    edges: set[tuple[int, int]] = set()
    degree = [0] * n_nodes

    def add(u: int, v: int) -> None:
        edges.add((min(u, v), max(u, v)))
        degree[u] += 1
        degree[v] += 1

    ds = _DisjointSet(n_nodes)
    for _, u, v in pairs:
        if ds.union(u, v):
            add(u, v)
    for u in range(n_nodes):
        order = np.argsort(dist[u], kind="stable")
        for v in order:
            if degree[u] >= 2:
                break
            v = int(v)
            if v == u or (min(u, v), max(u, v)) in edges or degree[v] >= k_max:
                continue
            add(u, v)
        if degree[u] < 2:
            raise WorldError("cannot reach minimum degree 2 under k_max")
    target = int(round(n_nodes * mean_degree / 2.0))
    for _, u, v in pairs:
        if len(edges) >= target:
            break
        if (u, v) in edges or degree[u] >= k_max or degree[v] >= k_max:
            continue
        add(u, v)
    if max(degree) > k_max:
        raise WorldError("spanning tree exceeds k_max; raise k_max")

    return Scene(
        scene_id=scene_id if scene_id is not None else f"scene{seed:05d}",
        seed=int(seed),
        positions=pos,
        landmarks=landmarks.astype(np.int64),
        edges=tuple(sorted(edges)),
        v_lm=v_lm,
        k_max=k_max,
    )


# ---------------------------------------------------------------------------
# observation


def observe(
    scene: Scene,
    viewpoint: int,
    heading: float,
    noise_seed: int,
    *,
    d: int = FEATURE_DIM,
    sigma_obs: float = SIGMA_OBS,
    feature_seed: int = 0,
) -> Observation:
    """Panorama at ``viewpoint``: one navigable candidate per graph neighbour.

    Feature layout is ``[landmark embedding (d - 4); sin th, cos th, sin ph,
    cos ph]`` plus uniform noise in ``[-sigma_obs, sigma_obs]``.
    """
    nbrs = scene.neighbors(viewpoint)
    if d <= ORIENT_DIM:
        raise WorldError(f"feature dim must exceed {ORIENT_DIM}")
    table = landmark_table(scene.v_lm, d - ORIENT_DIM, feature_seed)
    rel = np.array([wrap_angle(scene.heading(viewpoint, v) - heading) for v in nbrs])
    base = np.concatenate(
        [table[scene.landmarks[list(nbrs)]], orientation_encoding(rel)], axis=1
    )
    rng = np.random.default_rng([noise_seed & 0xFFFFFFFF, scene.seed, viewpoint])
    feats = base + rng.uniform(-sigma_obs, sigma_obs, size=base.shape)
    cands = tuple(
        Candidate(viewpoint=v, heading=float(rel[i]), elevation=0.0, feature=feats[i])
        for i, v in enumerate(nbrs)
    )
    return Observation(viewpoint=viewpoint, heading=heading, candidates=cands)


def step(scene: Scene, ob: Observation, action: int) -> int | None:
    """Apply an action: ``STOP`` returns ``None``, otherwise the chosen neighbour."""
    if action == STOP:
        return None
    if not isinstance(action, (int, np.integer)) or not 0 <= action < len(ob.candidates):
        raise WorldError(f"action {action!r} out of range for {len(ob.candidates)} candidates")
    cand = ob.candidates[action]
    if not cand.navigable:
        raise WorldError(f"candidate {action} is not navigable")
    return cand.viewpoint


# ---------------------------------------------------------------------------
# expert


def _dijkstra(scene: Scene, source: int) -> tuple[list[float], list[tuple[int, ...]]]:
    """Lexicographic (length, node sequence) shortest paths from ``source``."""
    n = scene.n_nodes
    best: list[tuple[float, tuple[int, ...]] | None] = [None] * n
    heap: list[tuple[float, tuple[int, ...]]] = [(0.0, (source,))]
    while heap:
        dist, path = heapq.heappop(heap)
        u = path[-1]
        if best[u] is not None:
            continue
        best[u] = (dist, path)
        for v in scene.adjacency[u]:
            if best[v] is None:
                heapq.heappush(heap, (dist + scene.length(u, v), path + (v,)))
    return [b[0] for b in best], [b[1] for b in best]  # type: ignore[index]


def shortest_path(scene: Scene, start: int, goal: int) -> list[int]:
    """Geodesic route; ties go to the lexicographically smallest id sequence."""
    scene._check(start)
    scene._check(goal)
    return list(_paths_from(scene, start)[goal])


def _paths_from(scene: Scene, start: int) -> tuple[tuple[int, ...], ...]:
    return scene._all_pairs[1][start]


def path_length(scene: Scene, path: Sequence[int]) -> float:
    total = 0.0
    for u, v in zip(path[:-1], path[1:]):
        total += scene.length(u, v)
    return total


def is_valid_path(scene: Scene, path: Sequence[int]) -> bool:
    if len(path) == 0:
        return False
    if any(not 0 <= v < scene.n_nodes for v in path):
        return False
    return all(scene.has_edge(u, v) for u, v in zip(path[:-1], path[1:]))


# ---------------------------------------------------------------------------
# instructions


def turn_token(delta: float, straight_tol: float = math.pi / 4) -> int:
    delta = wrap_angle(delta)
    if abs(delta) <= straight_tol:
        return STRAIGHT
    return LEFT if delta > 0 else RIGHT


def synthesize_instruction(
    scene: Scene,
    route: Sequence[int],
    seed: int,
    *,
    l_max: int = L_MAX,
    landmark_dropout: float = 0.0,
) -> list[int]:
    """Landmark/turn token sequence for ``route``, padded with PAD to ``l_max``.

    Layout is ``lm(R0) turn(R0->R1) lm(R1) ... turn lm(R_last)``.  The agent
    starts facing its first move, so the first turn is always STRAIGHT.
    Interior landmarks are replaced with UNK with probability
    ``landmark_dropout`` (seeded); the first and final landmarks are kept.
    """
    if len(route) < 2:
        raise WorldError("route needs at least 2 nodes")
    if not is_valid_path(scene, route):
        raise WorldError("route is not a path in the scene")
    rng = np.random.default_rng([seed & 0xFFFFFFFF, scene.seed, len(route)])
    drops = rng.random(len(route)) < landmark_dropout
    tokens = [landmark_token(scene.landmarks[route[0]])]
    prev_heading = scene.heading(route[0], route[1])
    for i in range(1, len(route)):
        h = scene.heading(route[i - 1], route[i])
        tokens.append(turn_token(h - prev_heading))
        prev_heading = h
        keep = i == len(route) - 1 or not drops[i]
        tokens.append(landmark_token(scene.landmarks[route[i]]) if keep else UNK)
    tokens = tokens[:l_max]
    return tokens + [PAD] * (l_max - len(tokens))


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    scenes: dict[str, Scene]
    episodes: list[Episode]
    meta: dict = field(default_factory=dict)

    def scene_of(self, ep: Episode) -> Scene:
        return self.scenes[ep.scene_id]

    def subset(self, episodes: Sequence[Episode]) -> "Dataset":
        ids = {e.scene_id for e in episodes}
        return Dataset({k: v for k, v in self.scenes.items() if k in ids}, list(episodes), dict(self.meta))

    def to_json(self) -> str:
        doc = {
            "format": DATASET_FORMAT,
            "version": DATASET_VERSION,
            "meta": self.meta,
            "scenes": [s.to_dict() for s in self.scenes.values()],
            "episodes": [e.to_dict() for e in self.episodes],
        }
        return json.dumps(doc, indent=None, separators=(",", ":"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "Dataset":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise WorldError(f"dataset is not valid JSON: {exc}") from exc
        if doc.get("format") != DATASET_FORMAT:
            raise WorldError("not a scenemem dataset document")
        if doc.get("version") != DATASET_VERSION:
            raise WorldError(f"unsupported dataset version {doc.get('version')}")
        scenes = {}
        for s in doc["scenes"]:
            sc = Scene.from_dict(s)
            scenes[sc.scene_id] = sc
        episodes = [Episode.from_dict(e) for e in doc["episodes"]]
        for ep in episodes:
            if ep.scene_id not in scenes:
                raise WorldError(f"episode {ep.episode_id} references unknown scene {ep.scene_id}")
        return cls(scenes, episodes, dict(doc.get("meta", {})))

    @classmethod
    def load(cls, path: str | Path) -> "Dataset":
        return cls.from_json(Path(path).read_text())


def sample_episodes(
    scene: Scene,
    count: int,
    seed: int,
    *,
    min_edges: int = 3,
    max_edges: int = 6,
    min_goal_dist: float = 0.0,
    l_max: int = L_MAX,
    landmark_dropout: float = 0.0,
    prefix: str = "",
) -> list[Episode]:
    """Shortest-path episodes with ``min_edges..max_edges`` moves."""
    rng = np.random.default_rng([seed & 0xFFFFFFFF, scene.seed, 7])
    n = scene.n_nodes
    pool = []
    for s in range(n):
        for g in range(n):
            if s == g:
                continue
            route = _paths_from(scene, s)[g]
            if min_edges <= len(route) - 1 <= max_edges and scene.distance(s, g) >= min_goal_dist:
                pool.append(route)
    if not pool:
        raise WorldError(f"scene {scene.scene_id} has no routes of {min_edges}-{max_edges} edges")
    picks = rng.choice(len(pool), size=count, replace=count > len(pool))
    episodes = []
    for i, p in enumerate(picks):
        route = list(pool[int(p)])
        ins_seed = int(rng.integers(0, 2**31 - 1))
        episodes.append(
            Episode(
                episode_id=f"{prefix}{scene.scene_id}_{i:03d}",
                scene_id=scene.scene_id,
                instruction=synthesize_instruction(
                    scene, route, ins_seed, l_max=l_max, landmark_dropout=landmark_dropout
                ),
                route=route,
                start_heading=scene.heading(route[0], route[1]),
            )
        )
    return episodes


def make_dataset(
    seed: int,
    n_scenes: int,
    episodes_per_scene: int,
    n_nodes: int,
    mean_degree: float = 3.0,
    *,
    v_lm: int = 8,
    k_max: int = K_MAX,
    extent: float = EXTENT,
    l_max: int = L_MAX,
    min_edges: int = 3,
    max_edges: int = 6,
    min_goal_dist: float = 0.0,
    landmark_dropout: float = 0.0,
    interleave: bool = True,
) -> Dataset:
    """Generate scenes and episodes; episodes are round-robin over scenes by default."""
    scenes: dict[str, Scene] = {}
    per_scene: list[list[Episode]] = []
    for i in range(n_scenes):
        sc = generate_scene(
            seed * 100_003 + i, n_nodes, mean_degree, v_lm=v_lm, k_max=k_max, extent=extent,
            scene_id=f"s{seed}_{i:03d}",
        )
        scenes[sc.scene_id] = sc
        per_scene.append(
            sample_episodes(
                sc, episodes_per_scene, seed, min_edges=min_edges, max_edges=max_edges,
                min_goal_dist=min_goal_dist, l_max=l_max, landmark_dropout=landmark_dropout,
            )
        )
    if interleave:
        episodes = [eps[j] for j in range(episodes_per_scene) for eps in per_scene]
    else:
        episodes = [e for eps in per_scene for e in eps]
    meta = {
        "seed": seed, "n_scenes": n_scenes, "episodes_per_scene": episodes_per_scene,
        "n_nodes": n_nodes, "mean_degree": mean_degree, "v_lm": v_lm, "k_max": k_max,
        "extent": extent, "l_max": l_max, "landmark_dropout": landmark_dropout,
    }
    return Dataset(scenes, episodes, meta)
