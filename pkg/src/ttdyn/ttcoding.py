"""Factorized embeddings over the M^d discrete state space.

Instead of one embedding row per discrete state (M^d rows of width D), the
embedding matrix is kept as a chain of d four-way cores, one per physical
dimension: core k has shape (r_{k-1}, M, m_k, r_k) with boundary ranks 1 and
prod(m_k) = D. A single state's embedding is reconstructed by slicing each
core at that dimension's index and contracting the rank axes left to right;
the full matrix is never materialized except as a test oracle.

Grid refinement lifts cores by linear interpolation along the grid axis: even
fine slices copy the coarse slices, odd fine slices average their neighbors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

DTYPE = torch.float64


@dataclass
class TTCores:
    """The chain of cores. Core k: (r_{k-1}, axis_len, m_k, r_k), float64."""

    cores: list

    def __post_init__(self) -> None:
        if not self.cores:
            raise ValueError("need at least one core")
        if self.cores[0].shape[0] != 1 or self.cores[-1].shape[-1] != 1:
            raise ValueError("boundary ranks must be exactly 1")
        m = self.cores[0].shape[1]
        for k, core in enumerate(self.cores):
            if core.dim() != 4:
                raise ValueError(f"core {k} must be 4-way, got shape {tuple(core.shape)}")
            if core.shape[1] != m:
                raise ValueError("all cores must share the same grid-axis length")
            if k + 1 < len(self.cores) and core.shape[-1] != self.cores[k + 1].shape[0]:
                raise ValueError(f"rank mismatch between cores {k} and {k + 1}")
            if not torch.isfinite(core).all():
                raise ValueError(f"core {k} has non-finite entries")

    @property
    def ndim(self) -> int:
        return len(self.cores)

    @property
    def axis_len(self) -> int:
        return self.cores[0].shape[1]

    @property
    def out_factors(self) -> tuple:
        return tuple(int(c.shape[2]) for c in self.cores)

    @property
    def ranks(self) -> tuple:
        return tuple(int(c.shape[0]) for c in self.cores) + (1,)

    @property
    def embed_dim(self) -> int:
        return int(np.prod(self.out_factors))

    def num_parameters(self) -> int:
        return sum(c.numel() for c in self.cores)

    def clone(self) -> "TTCores":
        return TTCores([c.detach().clone() for c in self.cores])


def plan_factors(d: int, embed_dim: int) -> tuple:
    """Split embed_dim into d per-core output factors, as equal as possible.

    Prime factors of embed_dim are dealt out largest-first to the bucket with
    the smallest running product (first bucket on ties), then the buckets are
    sorted in descending order. Factors of 1 are allowed, so any embed_dim >= 1
    has a valid plan.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if embed_dim < 1:
        raise ValueError("embed_dim must be >= 1")
    primes = []
    n = embed_dim
    p = 2
    while p * p <= n:
        while n % p == 0:
            primes.append(p)
            n //= p
        p += 1
    if n > 1:
        primes.append(n)
    buckets = [1] * d
    for p in sorted(primes, reverse=True):
        buckets[int(np.argmin(buckets))] *= p
    return tuple(sorted(buckets, reverse=True))


def init_cores(
    d: int,
    axis_len: int,
    out_factors: Sequence[int] | None = None,
    rank: int = 16,
    seed: int | np.random.Generator = 0,
    embed_dim: int | None = None,
) -> TTCores:
    """Gaussian-initialized cores with fan-in rank normalization.

    Core k entries are N(0, 1/r_{k-1}) with r_0 = 1, which makes reconstructed
    embedding entries have unit variance independent of the rank (each of the
    r^{d-1} rank paths contributes variance r^{-(d-1)}).
    """
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if axis_len < 2:
        raise ValueError("axis_len must be >= 2")
    if out_factors is None:
        if embed_dim is None:
            raise ValueError("provide out_factors or embed_dim")
        out_factors = plan_factors(d, embed_dim)
    out_factors = tuple(int(m) for m in out_factors)
    if len(out_factors) != d:
        raise ValueError("need one output factor per dimension")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    ranks = [1] + [rank] * (d - 1) + [1]
    cores = []
    for k in range(d):
        shape = (ranks[k], axis_len, out_factors[k], ranks[k + 1])
        scale = 1.0 / np.sqrt(ranks[k])
        cores.append(torch.from_numpy(rng.normal(0.0, scale, size=shape)).to(DTYPE))
    return TTCores(cores)


def _as_index_tensor(indices, d: int, axis_len: int) -> torch.Tensor:
    idx = torch.as_tensor(np.asarray(indices), dtype=torch.long)
    if idx.shape[-1] != d:
        raise ValueError(f"expected last axis {d}, got {idx.shape[-1]}")
    if idx.numel() and (idx.min() < 0 or idx.max() >= axis_len):
        raise ValueError(
            f"index out of range [0, {axis_len - 1}]: min={int(idx.min())}, max={int(idx.max())}"
        )
    return idx


def embed(tt: TTCores, indices) -> torch.Tensor:
    """Reconstruct embeddings for multi-indices (..., d) -> (..., D).

    Slices core k at index i_k and contracts rank axes strictly left to right;
    cost O(d * max(m) * r^2) per state, never touching the M^d x D matrix.
    Differentiable with respect to the cores.
    """
    idx = _as_index_tensor(indices, tt.ndim, tt.axis_len)
    lead = idx.shape[:-1]
    flat = idx.reshape(-1, tt.ndim)
    n = flat.shape[0]
    acc = torch.ones((n, 1, 1), dtype=tt.cores[0].dtype)
    for k, core in enumerate(tt.cores):
        sl = core.index_select(1, flat[:, k]).permute(1, 0, 2, 3)  # (n, r_prev, m, r)
        acc = torch.einsum("njr,nrms->njms", acc, sl).reshape(n, -1, core.shape[3])
    return acc.reshape(*lead, tt.embed_dim)


def materialize(tt: TTCores, cap: int = 10_000_000) -> torch.Tensor:
    """Oracle: the full M^d x D embedding matrix by direct chain contraction.

    Rows are ordered lexicographically over the multi-index with the last
    dimension fastest; columns match embed's output layout. Refuses instances
    above ``cap`` entries. This is an independent computational path from
    embed (no index selection), used to cross-check it.
    """
    size = tt.axis_len**tt.ndim * tt.embed_dim
    if size > cap:
        raise ValueError(f"materialize would create {size} entries (cap {cap})")
    acc = torch.ones((1, 1, 1), dtype=tt.cores[0].dtype)
    for core in tt.cores:
        p, q, _ = acc.shape
        _, m_axis, m_out, r_next = core.shape
        acc = torch.einsum("pqr,rijs->piqjs", acc, core).reshape(p * m_axis, q * m_out, r_next)
    return acc.reshape(tt.axis_len**tt.ndim, tt.embed_dim)


def prolong(tt: TTCores) -> TTCores:
    """Lift cores to the refined grid: axis length M -> 2M - 1.

    Fine slice 2i copies coarse slice i; fine slice 2i+1 is the mean of coarse
    slices i and i+1. Ranks and output factors are unchanged.
    """
    fine_cores = []
    for core in tt.cores:
        r0, m_axis, m_out, r1 = core.shape
        fine = core.new_empty((r0, 2 * m_axis - 1, m_out, r1))
        fine[:, 0::2] = core
        fine[:, 1::2] = 0.5 * (core[:, :-1] + core[:, 1:])
        fine_cores.append(fine)
    return TTCores(fine_cores)


def restrict(tt: TTCores) -> TTCores:
    """Keep the even grid-axis slices; the left inverse of prolong."""
    return TTCores([core[:, 0::2].clone() for core in tt.cores])
