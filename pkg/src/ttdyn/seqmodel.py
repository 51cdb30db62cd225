"""Causal transformer over multi-index sequences with per-dimension heads.

The model embeds each quantized state through the tensor coding layer, adds a
learned positional table, runs a pre-norm decoder stack (causal self-attention
plus a 4x GELU feed-forward), and predicts the next state as d independent
M-way classifications. The joint next-state distribution is the product of
the per-dimension conditionals, so the loss is the sum of d cross-entropies.

Everything is float64 on CPU and deterministic: parameters are initialized
from a numpy PCG64 stream, and generation at zero temperature breaks argmax
ties toward the lowest index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .ttcoding import DTYPE, TTCores, embed, init_cores, plan_factors


@dataclass(frozen=True)
class ModelConfig:
    layers: int
    heads: int
    embed_dim: int
    context_len: int
    grid_axis: int
    system_dim: int
    tt_rank: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.embed_dim % self.heads != 0:
            raise ValueError("embed_dim must be divisible by heads")
        if self.context_len < 2:
            raise ValueError("context_len must be >= 2")
        if self.layers < 1 or self.heads < 1 or self.tt_rank < 1:
            raise ValueError("layers, heads, and tt_rank must be >= 1")
        if self.grid_axis < 2 or self.system_dim < 1:
            raise ValueError("grid_axis must be >= 2 and system_dim >= 1")

    def to_dict(self) -> dict:
        return {
            "layers": self.layers, "heads": self.heads, "embed_dim": self.embed_dim,
            "context_len": self.context_len, "grid_axis": self.grid_axis,
            "system_dim": self.system_dim, "tt_rank": self.tt_rank, "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**{k: int(v) for k, v in d.items()})


class DecoderBlock(nn.Module):
    """Pre-norm: x + attn(ln1(x)), then x + mlp(ln2(x))."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.ln1 = nn.LayerNorm(dim, dtype=DTYPE)
        self.ln2 = nn.LayerNorm(dim, dtype=DTYPE)
        self.qkv = nn.Linear(dim, 3 * dim, dtype=DTYPE)
        self.proj = nn.Linear(dim, dim, dtype=DTYPE)
        self.fc_in = nn.Linear(dim, 4 * dim, dtype=DTYPE)
        self.fc_out = nn.Linear(4 * dim, dim, dtype=DTYPE)

    def attention(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        b, t, dim = x.shape
        hd = dim // self.heads
        q, k, v = self.qkv(x).view(b, t, 3, self.heads, hd).permute(2, 0, 3, 1, 4)
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(hd)
        scores = scores.masked_fill(mask[:t, :t], float("-inf"))
        # exp(-inf) is exactly 0, so masked positions contribute nothing:
        # logits at position t are bit-exactly independent of positions > t.
        weights = torch.softmax(scores, dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(b, t, dim)
        return self.proj(out)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = x + self.attention(self.ln1(x), mask)
        x = x + self.fc_out(F.gelu(self.fc_in(self.ln2(x))))
        return x


class SeqModel(nn.Module):
    """Tensor-coded decoder with one classification head per state dimension."""

    def __init__(self, config: ModelConfig, out_factors: tuple | None = None):
        super().__init__()
        self.config = config
        d, dim, m_grid = config.system_dim, config.embed_dim, config.grid_axis
        self.out_factors = tuple(out_factors) if out_factors else plan_factors(d, dim)
        if int(np.prod(self.out_factors)) != dim:
            raise ValueError("out_factors must multiply to embed_dim")

        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 3]))
        tt = init_cores(d, m_grid, self.out_factors, rank=config.tt_rank, seed=rng)
        self.tt_cores = nn.ParameterList(nn.Parameter(c) for c in tt.cores)
        self.positional = nn.Parameter(
            torch.from_numpy(rng.normal(0.0, 0.02, size=(config.context_len, dim))).to(DTYPE)
        )
        self.blocks = nn.ModuleList(DecoderBlock(dim, config.heads) for _ in range(config.layers))
        self.final_norm = nn.LayerNorm(dim, dtype=DTYPE)
        self.head_weight = nn.Parameter(
            torch.from_numpy(rng.normal(0.0, 0.02, size=(d, m_grid, dim))).to(DTYPE)
        )
        self.head_bias = nn.Parameter(torch.zeros((d, m_grid), dtype=DTYPE))
        self._init_blocks(rng)
        mask = torch.triu(torch.ones(config.context_len, config.context_len, dtype=torch.bool), 1)
        self.register_buffer("causal_mask", mask, persistent=False)

    def _init_blocks(self, rng: np.random.Generator) -> None:
        for block in self.blocks:
            for lin in (block.qkv, block.proj, block.fc_in, block.fc_out):
                w = rng.normal(0.0, 0.02, size=tuple(lin.weight.shape))
                with torch.no_grad():
                    lin.weight.copy_(torch.from_numpy(w))
                    lin.bias.zero_()

    def tt(self) -> TTCores:
        return TTCores(list(self.tt_cores))

    def head_parameter_count(self) -> int:
        return self.head_weight.numel() + self.head_bias.numel()

    def forward(self, indices) -> torch.Tensor:
        """Multi-index batch (B, T, d) -> logits (B, T, d, M).

        Position t's logits predict the state at t + 1 and depend only on
        positions <= t (strict causal mask).
        """
        idx = torch.as_tensor(np.asarray(indices), dtype=torch.long)
        if idx.dim() != 3:
            raise ValueError("expected indices of shape (batch, time, dim)")
        b, t, d = idx.shape
        if d != self.config.system_dim:
            raise ValueError(f"expected state dimension {self.config.system_dim}, got {d}")
        if t > self.config.context_len:
            raise ValueError(f"sequence length {t} exceeds context_len {self.config.context_len}")
        x = embed(self.tt(), idx) + self.positional[:t]
        for block in self.blocks:
            x = block(x, self.causal_mask)
        x = self.final_norm(x)
        return torch.einsum("bte,kme->btkm", x, self.head_weight) + self.head_bias


def per_head_loss(logits: torch.Tensor, targets) -> torch.Tensor:
    """Per-dimension cross-entropy, each averaged over all positions: (d,)."""
    tgt = torch.as_tensor(np.asarray(targets), dtype=torch.long)
    logp = F.log_softmax(logits, dim=-1)
    nll = -logp.gather(-1, tgt.unsqueeze(-1)).squeeze(-1)  # (B, T, d)
    return nll.mean(dim=(0, 1))


def sequence_loss(
    logits: torch.Tensor,
    targets,
    dims=None,
    position_mask=None,
) -> torch.Tensor:
    """Mean over positions of the summed per-dimension cross-entropies.

    targets are the inputs shifted by one step. ``dims`` restricts the loss to
    a subset of state dimensions; ``position_mask`` (B, T) selects positions.
    An empty selection yields a zero loss (with zero gradients).
    """
    tgt = torch.as_tensor(np.asarray(targets), dtype=torch.long)
    if tgt.shape != logits.shape[:-1]:
        raise ValueError(f"targets shape {tuple(tgt.shape)} != logits {tuple(logits.shape[:-1])}")
    logp = F.log_softmax(logits, dim=-1)
    nll = -logp.gather(-1, tgt.unsqueeze(-1)).squeeze(-1)  # (B, T, d)
    if dims is not None:
        nll = nll[..., list(dims)]
    per_position = nll.sum(dim=-1)  # (B, T)
    if position_mask is not None:
        mask = torch.as_tensor(np.asarray(position_mask), dtype=torch.bool)
        if int(mask.sum()) == 0:
            return logits.sum() * 0.0
        per_position = per_position[mask]
    return per_position.mean()


def _argmax_lowest(values: np.ndarray) -> np.ndarray:
    # np.argmax documents first-occurrence tie-breaking: lowest index wins.
    return np.argmax(values, axis=-1).astype(np.int64)


def generate_batch(
    model: SeqModel,
    prefixes,
    steps: int,
    temperature: float = 0.0,
    seed: int = 0,
) -> np.ndarray:
    """Roll out ``steps`` states for a batch of prefixes (B, P, d) -> (B, steps, d).

    Zero temperature takes the per-head argmax (ties to the lowest index);
    positive temperature samples each head from softmax(logits / temperature)
    using a PCG64 stream. Once the window exceeds context_len, the oldest
    positions are dropped. Outputs are always in-range indices, so decoded
    states stay inside the grid box by construction.
    """
    pre = np.asarray(prefixes, dtype=np.int64)
    if pre.ndim != 3:
        raise ValueError("prefixes must have shape (batch, time, dim)")
    if pre.shape[1] < 1:
        raise ValueError("prefix must contain at least one state")
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 4])) if temperature > 0 else None
    ctx = model.config.context_len
    window = pre.copy()
    out = np.empty((pre.shape[0], steps, pre.shape[2]), dtype=np.int64)
    with torch.no_grad():
        for s in range(steps):
            logits = model(window[:, -ctx:])[:, -1]  # (B, d, M)
            values = logits.numpy()
            if temperature == 0.0:
                nxt = _argmax_lowest(values)
            else:
                scaled = values / temperature
                scaled -= scaled.max(axis=-1, keepdims=True)
                probs = np.exp(scaled)
                cum = np.cumsum(probs, axis=-1)
                cum /= cum[..., -1:]
                cum[..., -1] = 1.0
                u = rng.random(values.shape[:-1] + (1,))
                nxt = np.argmax(cum >= u, axis=-1).astype(np.int64)
            out[:, s] = nxt
            window = np.concatenate([window, nxt[:, None, :]], axis=1)[:, -ctx:]
    return out


def generate(
    model: SeqModel,
    prefix,
    steps: int,
    temperature: float = 0.0,
    seed: int = 0,
) -> np.ndarray:
    """Single-sequence rollout: prefix (P, d) -> generated continuation (steps, d)."""
    pre = np.asarray(prefix, dtype=np.int64)
    if pre.ndim != 2:
        raise ValueError("prefix must have shape (time, dim)")
    return generate_batch(model, pre[None], steps, temperature, seed)[0]
