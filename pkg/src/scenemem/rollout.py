"""Episode rollouts: observe, retrieve memory, decide, update memory, move."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .agent import (
    DTYPE,
    AgentConfig,
    EncodedInstruction,
    NumericFault,
    Params,
    StepOutput,
    encode_instruction,
    forward_step,
    graph_encode,
    history_token,
)
from .memory import EpisodicMemory
from .metrics import SUCCESS_RADIUS
from .world import STOP, Dataset, Episode, Observation, Scene, observe, shortest_path

STOP_BONUS = 2.0
MODES = ("greedy", "sample", "teacher", "replay")


def noise_seed(episode_id: str, salt: int, t: int) -> int:
    return zlib.crc32(f"{episode_id}|{salt}|{t}".encode())


def teacher_action(scene: Scene, ob: Observation, goal: int) -> int:
    """Candidate index of the next geodesic node, or STOP at the goal."""
    if ob.viewpoint == goal:
        return STOP
    nxt = shortest_path(scene, ob.viewpoint, goal)[1]
    for i, c in enumerate(ob.candidates):
        if c.viewpoint == nxt:
            return i
    raise AssertionError("geodesic successor missing from candidates")


@dataclass
class StepRecord:
    t: int
    viewpoint: int
    action: int
    log_prob: torch.Tensor
    value: torch.Tensor
    teacher: int | None = None
    reward: float = 0.0
    probs: np.ndarray | None = None
    mask: np.ndarray | None = None


@dataclass
class EpisodeResult:
    episode: Episode
    path: list[int]
    steps: list[StepRecord] = field(default_factory=list)
    stopped: bool = False
    memory_size: tuple[int, int] = (0, 0)


@dataclass
class EpisodeContext:
    """Per-episode state carried between single ``act`` calls."""

    episode: Episode
    instr: EncodedInstruction
    history: list[torch.Tensor] = field(default_factory=list)
    visited: list[int] = field(default_factory=list)


def _pad_observations(obs: Sequence[Observation], mems: Sequence[np.ndarray], k_max: int, d: int):
    A = len(obs)
    feats = np.zeros((A, k_max, d))
    mem = np.zeros((A, k_max, d))
    orient = np.zeros((A, k_max, 4))
    mask = np.zeros((A, k_max), dtype=bool)
    for i, (ob, m) in enumerate(zip(obs, mems)):
        n = len(ob.candidates)
        if n > k_max:
            raise ValueError(f"{n} candidates exceed k_max={k_max}")
        feats[i, :n] = ob.features
        mem[i, :n] = m
        orient[i, :n] = ob.orientations
        mask[i, :n] = [c.navigable for c in ob.candidates]
    return (
        torch.from_numpy(feats),
        torch.from_numpy(mem),
        torch.from_numpy(orient),
        torch.from_numpy(mask),
    )


def _graph_token(memory: EpisodicMemory, scene_id: str, exclude: set[int], params: Params) -> torch.Tensor:
    g = memory.graph(scene_id)
    keep = sorted(v for v in g.nodes if v not in exclude)
    feats = np.array([g.nodes[v] for v in keep]).reshape(len(keep), memory.d)
    return graph_encode(feats, g.adjacency_matrix(keep), params)


def decide(
    params: Params,
    cfg: AgentConfig,
    instr: EncodedInstruction,
    hist: torch.Tensor | None,
    obs: Sequence[Observation],
    mems: Sequence[np.ndarray],
    ge_tokens: torch.Tensor | None = None,
) -> StepOutput:
    feats, mem, orient, mask = _pad_observations(obs, mems, cfg.k_max, cfg.d)
    out = forward_step(params, cfg, instr, feats, mem, orient, mask, hist, None, ge_tokens)
    out.extras["orient"] = orient
    return out


def choose(log_probs: torch.Tensor, mode: str, generator: np.random.Generator | None) -> int:
    """Slot index from one row of log-probabilities (last slot is STOP)."""
    p = log_probs.detach().exp().numpy()
    if not np.all(np.isfinite(p)):
        raise NumericFault("non-finite action distribution")
    if mode == "greedy":
        return int(np.argmax(p))
    if mode == "sample":
        if generator is None:
            raise ValueError("sampling needs a generator")
        return int(generator.choice(len(p), p=p / p.sum()))
    raise ValueError(f"unknown mode {mode!r}")


def act(
    params: Params,
    cfg: AgentConfig,
    ctx: EpisodeContext,
    ob: Observation,
    memory: EpisodicMemory,
    mode: str = "greedy",
    generator: np.random.Generator | None = None,
) -> tuple[int, torch.Tensor]:
    """One decision for a single episode; returns (action, probabilities).

    The caller owns memory updates and history bookkeeping (see ``advance``).
    """
    sid = ctx.episode.scene_id
    m = memory.retrieve(sid, [c.viewpoint for c in ob.candidates])
    hist = torch.stack(ctx.history)[None] if ctx.history else None
    ge = None
    if cfg.graph_encoding:
        ge = _graph_token(memory, sid, set(ctx.visited) | {ob.viewpoint}, params)[None]
    out = decide(params, cfg, ctx.instr, hist, [ob], [m], ge)
    slot = choose(out.log_probs[0], mode, generator)
    action = STOP if slot == cfg.k_max else slot
    ctx._last = (out, slot)  # type: ignore[attr-defined]
    return action, out.log_probs[0].detach().exp()


def advance(params: Params, cfg: AgentConfig, ctx: EpisodeContext, ob: Observation) -> None:
    """Record the last ``act`` decision into the episode history."""
    out, slot = ctx._last  # type: ignore[attr-defined]
    ctx.visited.append(ob.viewpoint)
    if slot == cfg.k_max:
        return
    t = len(ctx.history)
    ctx.history.append(history_token(out.enhanced[0, slot], out.extras["orient"][0, slot], t, params))


def rollout(
    params: Params,
    cfg: AgentConfig,
    dataset: Dataset,
    episodes: Sequence[Episode],
    memory: EpisodicMemory,
    mode: str,
    *,
    generator: np.random.Generator | None = None,
    noise_salt: int = 0,
    keep_probs: bool = False,
    actions: Sequence[Sequence[int]] | None = None,
) -> list[EpisodeResult]:
    """Run a batch of episodes in lock-step.

    At each step every active episode retrieves from the memory state left by
    the previous step, then all observations are written to memory in batch
    order.  ``teacher`` follows the expert and records its log-probability;
    ``sample`` and ``greedy`` follow the policy; ``replay`` re-executes the
    recorded ``actions`` of an earlier rollout.  Episodes that never stop are
    terminated after ``cfg.max_steps`` decisions.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if (mode == "replay") != (actions is not None):
        raise ValueError("actions are required for replay and only for replay")
    B = len(episodes)
    scenes = [dataset.scene_of(e) for e in episodes]
    instr = encode_instruction(torch.tensor([e.instruction for e in episodes]), params, cfg)
    results = [
        EpisodeResult(e, [e.route[0]], memory_size=memory.size(e.scene_id)) for e in episodes
    ]
    cur = [e.route[0] for e in episodes]
    heading = [e.start_heading for e in episodes]
    done = [False] * B
    hist: list[torch.Tensor] = []
    d = cfg.d

    for t in range(cfg.max_steps):
        active = [b for b in range(B) if not done[b]]
        if not active:
            break
        idx = torch.tensor(active)
        obs = [
            observe(scenes[b], cur[b], heading[b], noise_seed(episodes[b].episode_id, noise_salt, t), d=d)
            for b in active
        ]
        mems = [memory.retrieve(episodes[b].scene_id, [c.viewpoint for c in ob.candidates]) for b, ob in zip(active, obs)]
        ge = None
        if cfg.graph_encoding:
            ge = torch.stack([
                _graph_token(memory, episodes[b].scene_id, set(results[b].path), params) for b in active
            ])
        sub_instr = EncodedInstruction(instr.tokens[idx], instr.mask[idx])
        h = torch.stack(hist, dim=1)[idx] if hist else None
        out = decide(params, cfg, sub_instr, h, obs, mems, ge)
        last = t == cfg.max_steps - 1

        moved_rows, moved_tokens = [], []
        for i, b in enumerate(active):
            ob, sc, ep = obs[i], scenes[b], episodes[b]
            teacher = teacher_action(sc, ob, ep.goal) if mode == "teacher" else None
            if mode == "teacher":
                slot = cfg.k_max if teacher == STOP else teacher
            elif mode == "replay":
                a = actions[b][t]
                slot = cfg.k_max if a == STOP else a
            else:
                slot = choose(out.log_probs[i], mode, generator)
            action = STOP if slot == cfg.k_max else slot
            rec = StepRecord(
                t=t, viewpoint=cur[b], action=action, log_prob=out.log_probs[i, slot],
                value=out.values[i], teacher=teacher,
            )
            if keep_probs:
                rec.probs = out.log_probs[i].detach().exp().numpy().copy()
                rec.mask = out.mask[i].numpy().copy()
            before = sc.distance(cur[b], ep.goal)
            if action == STOP:
                done[b] = True
                results[b].stopped = True
                rec.reward = STOP_BONUS if before < SUCCESS_RADIUS else -STOP_BONUS
            else:
                nxt = ob.candidates[action].viewpoint
                heading[b] = sc.heading(cur[b], nxt)
                cur[b] = nxt
                results[b].path.append(nxt)
                after = sc.distance(nxt, ep.goal)
                rec.reward = before - after
                moved_rows.append(b)
                moved_tokens.append(history_token(out.enhanced[i, slot], out.extras["orient"][i, slot], t, params))
                if last:
                    done[b] = True
                    rec.reward += STOP_BONUS if after < SUCCESS_RADIUS else -STOP_BONUS
            results[b].steps.append(rec)

        for i, b in enumerate(active):
            memory.update(episodes[b].scene_id, obs[i])

        if moved_rows:
            h_new = torch.zeros(B, d, dtype=DTYPE).index_copy(
                0, torch.tensor(moved_rows), torch.stack(moved_tokens)
            )
            hist.append(h_new)
    return results
