"""Shared test utilities: finite-difference gradients and tiny model builders."""

from __future__ import annotations

import numpy as np
import torch

from ttdyn import ModelConfig, SeqModel


def finite_difference_grads(loss_fn, params: dict, eps: float = 1e-5) -> dict:
    """Central-difference gradients of a scalar loss for every tensor entry."""
    out = {}
    with torch.no_grad():
        for name, p in params.items():
            flat = p.view(-1)
            grad = np.zeros(flat.numel())
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                plus = float(loss_fn())
                flat[i] = orig - eps
                minus = float(loss_fn())
                flat[i] = orig
                grad[i] = (plus - minus) / (2.0 * eps)
            out[name] = grad.reshape(tuple(p.shape))
    return out


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """max |a - n| / max(|a|, |n|, floor); the floor absorbs near-zero noise."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def micro_model(
    layers: int = 1,
    heads: int = 1,
    embed_dim: int = 8,
    context_len: int = 4,
    grid_axis: int = 3,
    system_dim: int = 2,
    tt_rank: int = 2,
    seed: int = 0,
) -> SeqModel:
    cfg = ModelConfig(
        layers=layers, heads=heads, embed_dim=embed_dim, context_len=context_len,
        grid_axis=grid_axis, system_dim=system_dim, tt_rank=tt_rank, seed=seed,
    )
    return SeqModel(cfg)


def cycle_corpus(length: int, n_traj: int = 1) -> np.ndarray:
    """Deterministic period-8 multi-index sequence over (M=3, d=2).

    All 8 states are distinct, so the next state is a function of the current
    one and the sequence is memorizable to zero loss.
    """
    pattern = np.array(
        [(0, 0), (1, 1), (2, 2), (1, 0), (0, 1), (2, 0), (1, 2), (0, 2)], dtype=np.int64
    )
    reps = int(np.ceil(length / len(pattern)))
    seq = np.tile(pattern, (reps, 1))[:length]
    return np.stack([seq] * n_traj)
