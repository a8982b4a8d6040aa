"""Navigation network with memory-enhanced candidates.

Small attention encoders replace the deep transformer stacks: one
self-attention layer over the instruction, a linear history projection and a
cross-modal layer in which candidates attend to text and history while the CLS
token attends to candidates.  All functions take a leading batch dimension.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import torch

from .world import CLS, ORIENT_DIM, PAD, vocab_size

DTYPE = torch.float64
CHECKPOINT_FORMAT = "scenemem-checkpoint"
CHECKPOINT_VERSION = 1
VARIANTS = ("CE", "CE+GE")

Params = dict[str, torch.Tensor]


class CheckpointError(ValueError):
    """Checkpoint/config mismatch or malformed checkpoint."""


class NumericFault(RuntimeError):
    """Non-finite loss, gradient or action distribution."""


@dataclass
class AgentConfig:
    d: int = 32
    heads: int = 2
    k_max: int = 8
    l_max: int = 24
    v_lm: int = 8
    max_steps: int = 12
    variant: str = "CE"
    pooling: str = "max"

    def __post_init__(self) -> None:
        if self.d % 2 or self.d % self.heads:
            raise ValueError("d must be even and divisible by heads")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.pooling not in ("max", "mean"):
            raise ValueError("pooling must be 'max' or 'mean'")

    @property
    def vocab(self) -> int:
        return vocab_size(self.v_lm)

    @property
    def graph_encoding(self) -> bool:
        return self.variant == "CE+GE"


def _shapes(cfg: AgentConfig) -> dict[str, tuple[int, ...]]:
    d, h = cfg.d, cfg.d // 2
    s: dict[str, tuple[int, ...]] = {
        "tok_emb": (cfg.vocab, d),
        "pos_tok": (cfg.l_max + 1, d),
        "pos_hist": (cfg.max_steps, d),
        "type_txt": (d,),
        "type_vis": (d,),
        "nav_emb": (2, d),  # row 0 navigable view, row 1 STOP
        "orient_W": (ORIENT_DIM, d),
        "fuse_W1": (2 * d, d), "fuse_b1": (d,), "fuse_W2": (d, d), "fuse_b2": (d,),
        "hist_W": (d + ORIENT_DIM, d), "hist_b": (d,),
        "pred_W1": (d, d), "pred_b1": (d,), "pred_W2": (d, 1), "pred_b2": (1,),
        "critic_W1": (d, d), "critic_b1": (d,), "critic_W2": (d, 1), "critic_b2": (1,),
    }
    for blk in ("txt", "xm", "xc"):
        for w in "qkvo":
            s[f"{blk}_W{w}"] = (d, d)
    for i in (1, 2, 3):
        s[f"ge{i}_Wa"] = (1 + d, h)
        s[f"ge{i}_ba"] = (h,)
        s[f"ge{i}_Wb"] = (h, h)
        s[f"ge{i}_bb"] = (h,)
    return s


def _is_bias(name: str) -> bool:
    return name.rsplit("_", 1)[-1].startswith("b")


def init_params(cfg: AgentConfig, seed: int) -> Params:
    """Uniform(-1/sqrt(d), 1/sqrt(d)) weights, zero biases, fixed generator."""
    gen = torch.Generator().manual_seed(int(seed))
    bound = 1.0 / math.sqrt(cfg.d)
    params: Params = {}
    for name, shape in _shapes(cfg).items():
        if _is_bias(name):
            t = torch.zeros(shape, dtype=DTYPE)
        else:
            t = (torch.rand(shape, generator=gen, dtype=DTYPE) * 2.0 - 1.0) * bound
        params[name] = t.requires_grad_(True)
    return params


def clone_params(params: Params) -> Params:
    return {k: v.detach().clone().requires_grad_(True) for k, v in params.items()}


def save_checkpoint(path: str | Path, params: Params, cfg: AgentConfig, meta: dict | None = None) -> None:
    """Flat tensor archive: name, shape and row-major doubles per tensor."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(cfg),
        "meta": meta or {},
        "tensors": [
            {"name": k, "shape": list(v.shape), "data": v.detach().reshape(-1).tolist()}
            for k, v in sorted(params.items())
        ],
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")))


def load_checkpoint(path: str | Path) -> tuple[Params, AgentConfig, dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError("unsupported checkpoint format")
    cfg = AgentConfig(**doc["config"])
    expected = _shapes(cfg)
    params: Params = {}
    for t in doc["tensors"]:
        shape = tuple(t["shape"])
        if expected.get(t["name"]) != shape:
            raise CheckpointError(f"tensor {t['name']} has shape {shape}, expected {expected.get(t['name'])}")
        params[t["name"]] = torch.tensor(t["data"], dtype=DTYPE).reshape(shape).requires_grad_(True)
    missing = set(expected) - set(params)
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors {sorted(missing)}")
    return params, cfg, doc.get("meta", {})


# ---------------------------------------------------------------------------
# building blocks


def mlp2(x: torch.Tensor, W1, b1, W2, b2) -> torch.Tensor:
    return torch.tanh(x @ W1 + b1) @ W2 + b2


def attend(
    q_in: torch.Tensor,
    kv_in: torch.Tensor,
    kv_mask: torch.Tensor,
    params: Params,
    block: str,
    heads: int,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Multi-head attention; returns (output (B, Q, d), weights (B, H, Q, S))."""
    B, Q, d = q_in.shape
    S = kv_in.shape[1]
    dh = d // heads
    q = (q_in @ params[f"{block}_Wq"]).view(B, Q, heads, dh).transpose(1, 2)
    k = (kv_in @ params[f"{block}_Wk"]).view(B, S, heads, dh).transpose(1, 2)
    v = (kv_in @ params[f"{block}_Wv"]).view(B, S, heads, dh).transpose(1, 2)
    scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
    scores = scores.masked_fill(~kv_mask[:, None, None, :], float("-inf"))
    w = torch.softmax(scores, dim=-1)
    out = (w @ v).transpose(1, 2).reshape(B, Q, d) @ params[f"{block}_Wo"]
    return out, w


def orient_tensor(orient) -> torch.Tensor:
    return torch.as_tensor(orient, dtype=DTYPE)


# ---------------------------------------------------------------------------
# encoders


class EncodedInstruction(NamedTuple):
    tokens: torch.Tensor  # (B, L + 1, d); position 0 is CLS
    mask: torch.Tensor  # (B, L + 1) bool

    @property
    def x_cls(self) -> torch.Tensor:
        return self.tokens[:, 0]


def encode_instruction(tokens: torch.Tensor, params: Params, cfg: AgentConfig) -> EncodedInstruction:
    """Embed ``tokens`` (B, L) behind a CLS slot and run one self-attention layer."""
    tokens = torch.as_tensor(tokens, dtype=torch.long)
    if tokens.dim() == 1:
        tokens = tokens[None]
    if tokens.shape[1] > cfg.l_max:
        raise ValueError(f"instruction longer than l_max={cfg.l_max}")
    if tokens.numel() and (int(tokens.min()) < 0 or int(tokens.max()) >= cfg.vocab):
        raise ValueError("token id outside the vocabulary")
    B, L = tokens.shape
    full = torch.cat([torch.full((B, 1), CLS, dtype=torch.long), tokens], dim=1)
    mask = full != PAD
    e = params["tok_emb"][full] + params["pos_tok"][: L + 1] + params["type_txt"]
    out, _ = attend(e, e, mask, params, "txt", cfg.heads)
    return EncodedInstruction(e + out, mask)


def enhance(m: torch.Tensor, f: torch.Tensor, orient: torch.Tensor, params: Params) -> torch.Tensor:
    """Fuse memory and plain view features, then add type/navigable/orientation embeddings.

    ``m``, ``f``: (..., d); ``orient``: (..., 4).
    """
    if m.shape != f.shape:
        raise ValueError(f"memory {tuple(m.shape)} and view {tuple(f.shape)} shapes differ")
    if f.shape[-1] != params["fuse_W2"].shape[1]:
        raise ValueError("feature dim does not match parameters")
    o = mlp2(torch.cat([m, f], dim=-1), params["fuse_W1"], params["fuse_b1"], params["fuse_W2"], params["fuse_b2"])
    return o + params["type_vis"] + params["nav_emb"][0] + orient @ params["orient_W"]


def stop_token(batch: int, params: Params) -> torch.Tensor:
    """STOP slot: zero vector plus visual-type and STOP embeddings, (B, 1, d)."""
    o_s = params["type_vis"] + params["nav_emb"][1]
    return o_s.expand(batch, 1, -1)


def candidate_tokens(o: torch.Tensor, cand_mask: torch.Tensor, params: Params) -> tuple[torch.Tensor, torch.Tensor]:
    """Append the STOP slot to enhanced candidates (B, K, d) -> (B, K + 1, d)."""
    B = o.shape[0]
    tokens = torch.cat([o, stop_token(B, params)], dim=1)
    mask = torch.cat([cand_mask, torch.ones(B, 1, dtype=torch.bool)], dim=1)
    return tokens, mask


def history_token(o_chosen: torch.Tensor, orient: torch.Tensor, step: int, params: Params) -> torch.Tensor:
    """h_t = W [o_chosen; orientation] + b + step position embedding."""
    h = torch.cat([o_chosen, orient], dim=-1) @ params["hist_W"] + params["hist_b"]
    return h + params["pos_hist"][min(step, params["pos_hist"].shape[0] - 1)]


def cross_modal(
    cands: torch.Tensor,
    cand_mask: torch.Tensor,
    instr: EncodedInstruction,
    hist: torch.Tensor | None,
    hist_mask: torch.Tensor | None,
    params: Params,
    cfg: AgentConfig,
    ge_token: torch.Tensor | None = None,
    return_weights: bool = False,
):
    """Candidates (incl. STOP) attend to text + history (+ graph token); CLS attends to candidates."""
    B = cands.shape[0]
    kv = [instr.tokens]
    kv_mask = [instr.mask]
    if hist is not None and hist.shape[1] > 0:
        kv.append(hist)
        kv_mask.append(hist_mask if hist_mask is not None else torch.ones(hist.shape[:2], dtype=torch.bool))
    if ge_token is not None:
        kv.append(ge_token[:, None, :])
        kv_mask.append(torch.ones(B, 1, dtype=torch.bool))
    kv_t = torch.cat(kv, dim=1)
    kv_m = torch.cat(kv_mask, dim=1)
    upd, w_c = attend(cands, kv_t, kv_m, params, "xm", cfg.heads)
    o_new = cands + upd
    x_cls = instr.x_cls[:, None, :]
    upd_x, w_x = attend(x_cls, cands, cand_mask, params, "xc", cfg.heads)
    x_new = (x_cls + upd_x)[:, 0]
    if return_weights:
        return o_new, x_new, (w_c, w_x)
    return o_new, x_new


def logits(o_new: torch.Tensor, x_cls: torch.Tensor, mask: torch.Tensor, params: Params) -> torch.Tensor:
    """Predictor scores MLP(o'_k * x'_cls) with masked slots at -inf, (B, K + 1)."""
    z = mlp2(o_new * x_cls[:, None, :], params["pred_W1"], params["pred_b1"], params["pred_W2"], params["pred_b2"])
    return z[..., 0].masked_fill(~mask, float("-inf"))


def predict(o_new: torch.Tensor, x_cls: torch.Tensor, mask: torch.Tensor, params: Params) -> torch.Tensor:
    """Log-probabilities over candidates + STOP (last slot)."""
    return torch.log_softmax(logits(o_new, x_cls, mask, params), dim=-1)


def critic(o_new: torch.Tensor, x_cls: torch.Tensor, mask: torch.Tensor, params: Params) -> torch.Tensor:
    """State value from the mean of o'_k * x'_cls over unmasked slots, (B,)."""
    prod = o_new * x_cls[:, None, :]
    w = mask.to(DTYPE)[..., None]
    pooled = (prod * w).sum(1) / w.sum(1)
    v = mlp2(pooled, params["critic_W1"], params["critic_b1"], params["critic_W2"], params["critic_b2"])
    return v[..., 0]


def graph_tensor(node_feats: torch.Tensor, adjacency: torch.Tensor) -> torch.Tensor:
    """(n, n, 1 + d) input: channel 0 holds edges, the diagonal holds node features."""
    n, d = node_feats.shape
    g = torch.zeros(n, n, 1 + d, dtype=DTYPE)
    g[:, :, 0] = adjacency
    idx = torch.arange(n)
    g[idx, idx, 1:] = node_feats
    return g


def graph_encode(node_feats, adjacency, params: Params) -> torch.Tensor:
    """Second-order graph encoding summed to one d-vector.

    Each channel of the first two MLP branches is multiplied as an n x n matrix
    (the product that lifts the block to 3-WL power) and squashed by tanh before
    the sum readout; the third branch passes through.
    """
    node_feats = torch.as_tensor(node_feats, dtype=DTYPE)
    adjacency = torch.as_tensor(adjacency, dtype=DTYPE)
    d = params["fuse_W2"].shape[1]
    n = node_feats.shape[0]
    if n == 0:
        return torch.zeros(d, dtype=DTYPE)
    g = graph_tensor(node_feats, adjacency)
    p = [mlp2(g, params[f"ge{i}_Wa"], params[f"ge{i}_ba"], params[f"ge{i}_Wb"], params[f"ge{i}_bb"]) for i in (1, 2, 3)]
    prod = torch.einsum("ikc,kjc->ijc", p[0], p[1])
    out = torch.cat([torch.tanh(prod), p[2]], dim=-1)
    return out.sum(dim=(0, 1))


@dataclass
class StepOutput:
    log_probs: torch.Tensor  # (B, K + 1)
    values: torch.Tensor  # (B,)
    enhanced: torch.Tensor  # (B, K + 1, d) before cross-modal fusion
    mask: torch.Tensor  # (B, K + 1)
    extras: dict = field(default_factory=dict)


def forward_step(
    params: Params,
    cfg: AgentConfig,
    instr: EncodedInstruction,
    feats: torch.Tensor,
    mem: torch.Tensor,
    orient: torch.Tensor,
    cand_mask: torch.Tensor,
    hist: torch.Tensor | None,
    hist_mask: torch.Tensor | None,
    ge_token: torch.Tensor | None = None,
) -> StepOutput:
    """One decision: candidate enhancing, cross-modal fusion, masked prediction and value."""
    o = enhance(mem, feats, orient, params)
    cands, mask = candidate_tokens(o, cand_mask, params)
    o_new, x_new = cross_modal(cands, mask, instr, hist, hist_mask, params, cfg, ge_token)
    return StepOutput(predict(o_new, x_new, mask, params), critic(o_new, x_new, mask, params), cands, mask)
