"""Imitation + advantage actor-critic training.

Per iteration a batch is rolled out twice: once sampling from the policy (A2C
term, discounted return-to-go against the critic) and once teacher-forced along
the expert route (imitation term weighted by ``alpha``).  Both passes write to
the episodic memory, which persists across batches and is cleared at every
epoch boundary.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .agent import AgentConfig, NumericFault, Params, clone_params, init_params
from .memory import EpisodicMemory
from .rollout import EpisodeResult, StepRecord, rollout
from .world import Dataset

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    alpha: float = 0.2
    gamma: float = 0.9
    lr: float = 1e-3
    batch_size: int = 8
    iterations: int = 2000
    seed: int = 0
    critic_weight: float = 0.5
    rl_weight: float = 1.0
    grad_clip: float = 5.0
    log_every: int = 50
    val_every: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1 or self.iterations < 0:
            raise ValueError("batch_size >= 1 and iterations >= 0 required")


def il_loss(steps: Sequence[StepRecord], alpha: float) -> torch.Tensor:
    """-alpha * sum_t log P(a_t = a*_t) over a teacher-forced rollout."""
    total = torch.zeros((), dtype=torch.float64)
    for s in steps:
        if not torch.isfinite(s.log_prob):
            raise NumericFault(f"teacher action has zero probability at step {s.t}")
        total = total + s.log_prob
    return -alpha * total


def discounted_returns(rewards: Sequence[float], gamma: float) -> list[float]:
    out = [0.0] * len(rewards)
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


def rl_loss(
    steps: Sequence[StepRecord], gamma: float, returns: Sequence[float] | None = None
) -> tuple[torch.Tensor, torch.Tensor]:
    """(policy term, critic term) of the A2C objective.

    The advantage ``R_t - v_t`` is detached, so the policy term carries no
    gradient into the critic head.  The critic term is ``sum (R_t - v_t)^2``.
    """
    if returns is None:
        returns = discounted_returns([s.reward for s in steps], gamma)
    policy = torch.zeros((), dtype=torch.float64)
    value = torch.zeros((), dtype=torch.float64)
    for s, ret in zip(steps, returns):
        adv = ret - s.value.detach()
        policy = policy - s.log_prob * adv
        value = value + (ret - s.value) ** 2
    return policy, value


def gradients(loss: torch.Tensor, params: Params) -> dict[str, torch.Tensor]:
    """Reverse-mode gradient of ``loss`` for every parameter tensor."""
    names = list(params)
    grads = torch.autograd.grad(loss, [params[n] for n in names], allow_unused=True)
    out = {}
    for n, g in zip(names, grads):
        g = torch.zeros_like(params[n]) if g is None else g
        if not torch.all(torch.isfinite(g)):
            raise NumericFault(f"non-finite gradient for {n}")
        out[n] = g
    return out


def batch_loss(
    il: Sequence[EpisodeResult], rl: Sequence[EpisodeResult], cfg: TrainConfig
) -> tuple[torch.Tensor, dict[str, float]]:
    """Eq. mixture averaged over the batch: IL + policy + critic_weight * critic."""
    n = max(len(il), len(rl), 1)
    il_total = sum((il_loss(r.steps, cfg.alpha) for r in il), torch.zeros((), dtype=torch.float64))
    pol_total = torch.zeros((), dtype=torch.float64)
    val_total = torch.zeros((), dtype=torch.float64)
    for r in rl:
        p, v = rl_loss(r.steps, cfg.gamma)
        pol_total = pol_total + p
        val_total = val_total + v
    loss = (il_total + cfg.rl_weight * (pol_total + cfg.critic_weight * val_total)) / n
    parts = {
        "il_loss": il_total.item() / n,
        "rl_loss": pol_total.item() / n,
        "critic_loss": val_total.item() / n,
    }
    return loss, parts


@dataclass
class TrainResult:
    params: Params
    log: list[dict] = field(default_factory=list)


def train(
    dataset: Dataset,
    agent_cfg: AgentConfig,
    cfg: TrainConfig,
    *,
    params: Params | None = None,
    val_dataset: Dataset | None = None,
    callback: Callable[[dict], None] | None = None,
    memory: EpisodicMemory | None = None,
) -> TrainResult:
    """Train from ``params`` (or a fresh seeded initialisation).

    Deterministic for a given seed: episode order, action sampling and
    parameter initialisation all derive from ``cfg.seed``.
    """
    if not dataset.episodes:
        raise ValueError("empty training set")
    torch.set_num_threads(1)
    params = clone_params(params) if params is not None else init_params(agent_cfg, cfg.seed)
    if cfg.iterations == 0:
        return TrainResult(params, [])
    opt = torch.optim.Adam(list(params.values()), lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 1])
    if memory is None:
        memory = EpisodicMemory(agent_cfg.d, agent_cfg.pooling)
    order: list[int] = []
    cursor = 0
    epoch = -1
    history: list[dict] = []

    for it in range(cfg.iterations):
        if cursor + cfg.batch_size > len(order):
            order = list(rng.permutation(len(dataset.episodes)))
            cursor = 0
            epoch += 1
            memory.reset()
        batch = [dataset.episodes[i] for i in order[cursor: cursor + cfg.batch_size]]
        cursor += cfg.batch_size

        rl = []
        if cfg.rl_weight > 0:
            rl = rollout(params, agent_cfg, dataset, batch, memory, "sample", generator=rng, noise_salt=2 * it + 1)
        il = rollout(params, agent_cfg, dataset, batch, memory, "teacher", noise_salt=2 * it)
        loss, parts = batch_loss(il, rl, cfg)
        loss_value = loss.item()
        if not math.isfinite(loss_value):
            raise NumericFault(f"non-finite loss at iteration {it}")
        opt.zero_grad()
        loss.backward()
        for n, p in params.items():
            if p.grad is not None and not torch.all(torch.isfinite(p.grad)):
                raise NumericFault(f"non-finite gradient for {n} at iteration {it}")
        if cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(list(params.values()), cfg.grad_clip)
        opt.step()

        entry = {"iteration": it, "epoch": epoch, "loss": loss_value, **parts}
        entry["memory_nodes"] = sum(g.size[0] for g in memory.scenes.values())
        entry["train_sr"] = float(np.mean([_success(dataset, r) for r in rl])) if rl else None
        if val_dataset is not None and cfg.val_every and (it + 1) % cfg.val_every == 0:
            from .harness import Protocol, run_eval, summarize_records

            recs = run_eval(params, agent_cfg, val_dataset, Protocol("single"))
            entry["val"] = {k: v[0] for k, v in summarize_records(recs).items()}
        history.append(entry)
        if callback is not None:
            callback(entry)
        if cfg.log_every and (it + 1) % cfg.log_every == 0:
            log.info("iter %d loss %.4f il %.4f rl %.4f", it + 1, entry["loss"], entry["il_loss"], entry["rl_loss"])
    return TrainResult(params, history)


def _success(dataset: Dataset, r: EpisodeResult) -> float:
    from .metrics import SUCCESS_RADIUS

    scene = dataset.scene_of(r.episode)
    return 1.0 if scene.distance(r.path[-1], r.episode.goal) < SUCCESS_RADIUS else 0.0


def write_log(path: str | Path, entries: Sequence[dict]) -> None:
    with open(path, "w") as fh:
        for e in entries:
            fh.write(json.dumps(e, sort_keys=True) + "\n")


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
