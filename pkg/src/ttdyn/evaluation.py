"""Quantitative evaluation of trained models against held-out trajectories.

The headline metric is the RMSE-versus-time curve of zero-temperature
rollouts conditioned on a true prefix, compared to the intrinsic divergence
of real trajectory pairs: a model that stays on the attractor saturates at a
level comparable to the real divergence saturation. Supporting diagnostics
are teacher-forced one-step accuracies and the invariant-set containment
fraction (1.0 by construction; kept as a regression tripwire).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import torch

from .dynamics import DivergenceCurve, TrajectorySet
from .grid import GridSpec
from .seqmodel import SeqModel, generate_batch


@dataclass
class RmseCurve:
    """Root-mean-square Euclidean prediction error at each rollout step.

    rmse[j] = sqrt(mean over trajectories of ||x(t_j) - x_hat(t_j)||^2), with
    times measured from the end of the conditioning prefix.
    """

    times: np.ndarray
    rmse: np.ndarray
    n_trajectories: int
    prefix_len: int

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=np.float64)
        self.rmse = np.asarray(self.rmse, dtype=np.float64)
        if self.times.shape != self.rmse.shape:
            raise ValueError("times and rmse must have equal length")
        if (self.rmse < 0).any():
            raise ValueError("rmse must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "rmse": self.rmse.tolist(),
            "n_trajectories": self.n_trajectories,
            "prefix_len": self.prefix_len,
        }


def rmse_curve(
    model: SeqModel,
    grid: GridSpec,
    test: TrajectorySet,
    prefix_len: int = 100,
    horizon: int = 400,
    n: int | None = None,
) -> RmseCurve:
    """Condition on each test prefix, roll out at zero temperature, decode,
    and average squared errors against the exact continuous truth.

    Comparing against the continuous truth (not its quantization) keeps the
    quantization floor visible in the curve.
    """
    if prefix_len < 1 or horizon < 1:
        raise ValueError("prefix_len and horizon must be >= 1")
    if test.n_steps < prefix_len + horizon:
        raise ValueError(
            f"test trajectories have {test.n_steps} steps; need prefix_len + horizon = "
            f"{prefix_len + horizon}"
        )
    n = test.n_traj if n is None else min(n, test.n_traj)
    prefixes = grid.encode(test.states[:n, :prefix_len])
    rollout = generate_batch(model, prefixes, horizon)
    decoded = grid.decode(rollout)  # (n, horizon, d)
    truth = test.states[:n, prefix_len : prefix_len + horizon]
    sq = np.sum((truth - decoded) ** 2, axis=-1)  # (n, horizon)
    rmse = np.sqrt(sq.mean(axis=0))
    times = test.tau * np.arange(1, horizon + 1)
    return RmseCurve(times=times, rmse=rmse, n_trajectories=n, prefix_len=prefix_len)


def one_step_accuracy(
    model: SeqModel,
    grid: GridSpec,
    test: TrajectorySet,
    max_windows: int | None = None,
) -> dict:
    """Teacher-forced next-index accuracy per dimension.

    Trajectories are encoded and split into context-length windows; at every
    position the per-head argmax is compared with the true next index.
    Returns per-dimension exact-match and within-one (|delta index| <= 1)
    rates plus the number of scored positions.
    """
    indices = grid.encode(test.states)
    ctx = model.config.context_len
    d = model.config.system_dim
    exact = np.zeros(d)
    within = np.zeros(d)
    count = 0
    windows_used = 0
    with torch.no_grad():
        for i in range(test.n_traj):
            traj = indices[i]
            chunks = [traj[s : s + ctx] for s in range(0, len(traj) - 1, ctx)]
            chunks = [c for c in chunks if len(c) >= 2]
            if max_windows is not None:
                chunks = chunks[: max(0, max_windows - windows_used)]
                if not chunks:
                    break
            windows_used += len(chunks)
            for chunk in chunks:
                logits = model(chunk[None])[0, :-1]  # (T-1, d, M)
                pred = np.argmax(logits.numpy(), axis=-1)
                target = chunk[1:]
                exact += (pred == target).sum(axis=0)
                within += (np.abs(pred - target) <= 1).sum(axis=0)
                count += len(target)
    if count == 0:
        raise ValueError("no positions to score")
    return {
        "exact": (exact / count).tolist(),
        "within_one": (within / count).tolist(),
        "positions": count,
    }


def fraction_in_box(states: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float:
    """Fraction of states (..., d) whose every component lies in [lo, hi]."""
    x = np.asarray(states, dtype=np.float64)
    if x.size == 0:
        return 1.0
    inside = np.logical_and(x >= lo, x <= hi).all(axis=-1)
    return float(inside.mean())


def containment_fraction(
    model: SeqModel,
    grid: GridSpec,
    prefixes: np.ndarray,
    horizon: int,
    temperature: float = 0.0,
    seed: int = 0,
) -> float:
    """Fraction of generated decoded states inside the grid box.

    This is 1.0 by construction (generated indices are always in range and
    decode to segment centers); the operation exists as a regression
    tripwire. An empty horizon is vacuously 1.0.
    """
    if horizon == 0:
        return 1.0
    rollout = generate_batch(model, prefixes, horizon, temperature, seed)
    decoded = grid.decode(rollout)
    return fraction_in_box(decoded, grid.lo, grid.hi)


# ---------------------------------------------------------------------------
# Saturation and the divergence comparison
# ---------------------------------------------------------------------------

def saturation_level(values: np.ndarray, tail_fraction: float = 0.2) -> float:
    """Mean of the final ``tail_fraction`` of a curve."""
    v = np.asarray(values, dtype=np.float64)
    k = max(1, int(round(tail_fraction * len(v))))
    return float(v[-k:].mean())


def compare_to_divergence(curve: RmseCurve, divergence: DivergenceCurve) -> dict:
    """Join model RMSE and real-trajectory divergence on the shared time axis.

    Rows pair values at equal elapsed times (RMSE time runs from the prefix
    end, divergence time from the perturbation). Also reports both saturation
    levels (mean of the final 20%) and their ratio.
    """
    div_by_time = {round(float(t), 12): float(v)
                   for t, v in zip(divergence.times, divergence.rms_separation)}
    rows = []
    for t, v in zip(curve.times, curve.rmse):
        key = round(float(t), 12)
        if key in div_by_time:
            rows.append((float(t), float(v), div_by_time[key]))
    rmse_sat = saturation_level(curve.rmse)
    div_sat = saturation_level(divergence.rms_separation)
    return {
        "times": [r[0] for r in rows],
        "rmse": [r[1] for r in rows],
        "divergence": [r[2] for r in rows],
        "rmse_saturation": rmse_sat,
        "divergence_saturation": div_sat,
        "saturation_ratio": rmse_sat / div_sat if div_sat > 0 else float("inf"),
    }


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------

def write_csv(path, columns: dict) -> None:
    """Write named columns as CSV with full-precision (repr) floats."""
    names = list(columns)
    series = [np.asarray(columns[n]).tolist() for n in names]
    length = len(series[0])
    if any(len(s) != length for s in series):
        raise ValueError("all columns must have equal length")
    with open(path, "w") as fh:
        fh.write(",".join(names) + "\n")
        for row in zip(*series):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
