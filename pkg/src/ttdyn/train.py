"""Coarse-to-fine training of the sequence model.

Training walks a schedule of grid sizes (2, 3, 5, 9, ... with M -> 2M - 1
between stages). At each stage the trajectories are re-encoded from the
continuous source on the stage grid and the model is optimized on random
contiguous windows. Between stages the tensor cores and the classification
heads are lifted to the finer grid by even-copy / odd-average interpolation;
the transformer blocks and positional table carry over unchanged.

Every batch is drawn from a counter-derived PCG64 stream keyed by
(seed, stage, step), so runs are bit-reproducible and a resumed run consumes
exactly the batches the interrupted one would have.
"""

from __future__ import annotations

import dataclasses
import math
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .dynamics import TrajectorySet
from .grid import GridSpec, fit_bounds
from .seqmodel import ModelConfig, SeqModel, sequence_loss
from .ttcoding import TTCores, prolong


class TrainingDiverged(RuntimeError):
    """Stage aborted: loss went non-finite or above 10x its initial value."""

    def __init__(self, stage_index: int, step: int, value: float):
        self.stage_index = stage_index
        self.step = step
        super().__init__(
            f"training diverged at stage {stage_index}, step {step}: loss {value}"
        )


@dataclass
class TrainConfig:
    schedule: list
    steps_per_stage: object  # int, or one int per schedule entry
    batch_size: int
    seq_len: int
    learning_rate: float
    lr_warmup: int = 0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    head_refresh: str = "prolong"  # or "random": reinitialize heads per stage
    checkpoint_every: int = 0  # extra mid-stage checkpoints every K steps; 0 = boundaries only
    full_batch: bool = False  # fixed deterministic batch of all non-overlapping windows
    probe_windows: int = 16

    def __post_init__(self) -> None:
        sched = [int(m) for m in self.schedule]
        if not sched:
            raise ValueError("schedule must be nonempty")
        if any(b <= a for a, b in zip(sched, sched[1:])):
            raise ValueError("schedule must be strictly increasing")
        if len(sched) > 1:
            for a, b in zip(sched, sched[1:]):
                if b != 2 * a - 1:
                    raise ValueError(
                        f"progressive schedule needs next == 2*prev - 1, got {a} -> {b}"
                    )
        self.schedule = sched
        if isinstance(self.steps_per_stage, (list, tuple)):
            steps = [int(v) for v in self.steps_per_stage]
            if len(steps) != len(sched):
                raise ValueError("per-stage steps need one entry per schedule entry")
            if any(v < 1 for v in steps):
                raise ValueError("steps_per_stage entries must be >= 1")
            self.steps_per_stage = steps
        elif int(self.steps_per_stage) < 1:
            raise ValueError("steps_per_stage must be >= 1")
        else:
            self.steps_per_stage = int(self.steps_per_stage)
        if self.seq_len < 1:
            raise ValueError("seq_len must be >= 1")
        if not self.full_batch and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.head_refresh not in ("prolong", "random"):
            raise ValueError("head_refresh must be 'prolong' or 'random'")

    def stage_steps(self, stage_index: int) -> int:
        if isinstance(self.steps_per_stage, list):
            return self.steps_per_stage[stage_index]
        return self.steps_per_stage

    def total_steps(self) -> int:
        if isinstance(self.steps_per_stage, list):
            return sum(self.steps_per_stage)
        return self.steps_per_stage * len(self.schedule)


@dataclass
class StageReport:
    """Record of one training stage.

    post_transition_loss and final_loss are measured on the same fixed probe
    batch immediately after the stage begins (i.e. right after the grid
    transition) and after its last optimizer step. wall_clock_s is volatile
    and excluded from to_dict() so exported reports are run-reproducible.
    """

    grid_size: int
    losses: list
    post_transition_loss: float
    final_loss: float
    accuracy_exact: list
    accuracy_within_one: list
    wall_clock_s: float = 0.0
    checkpoint_path: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.losses or not all(math.isfinite(v) for v in self.losses):
            raise ValueError("loss history must be nonempty and finite")

    def to_dict(self) -> dict:
        return {
            "grid_size": self.grid_size,
            "losses": list(self.losses),
            "post_transition_loss": self.post_transition_loss,
            "final_loss": self.final_loss,
            "accuracy_exact": list(self.accuracy_exact),
            "accuracy_within_one": list(self.accuracy_within_one),
            "checkpoint_path": self.checkpoint_path,
        }

    @staticmethod
    def from_dict(d: dict) -> "StageReport":
        return StageReport(
            grid_size=int(d["grid_size"]),
            losses=list(d["losses"]),
            post_transition_loss=float(d["post_transition_loss"]),
            final_loss=float(d["final_loss"]),
            accuracy_exact=list(d["accuracy_exact"]),
            accuracy_within_one=list(d["accuracy_within_one"]),
            checkpoint_path=d.get("checkpoint_path"),
        )


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

class AdamW:
    """Adaptive-moment optimizer with decoupled weight decay.

    update: p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p).
    With a zero gradient the step reduces to p <- p * (1 - lr * weight_decay).
    The moment state is plain float64 tensors and round-trips through
    checkpoints exactly.
    """

    def __init__(
        self,
        params: dict,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = dict(params)
        self.beta1, self.beta2 = beta1, beta2
        self.epsilon = epsilon
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {n: torch.zeros_like(p) for n, p in self.params.items()}
        self.v = {n: torch.zeros_like(p) for n, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        with torch.no_grad():
            for name, p in self.params.items():
                g = p.grad if p.grad is not None else torch.zeros_like(p)
                if not torch.isfinite(g).all():
                    raise FloatingPointError(f"non-finite gradient in parameter group {name!r}")
                m, v = self.m[name], self.v[name]
                m.mul_(self.beta1).add_(g, alpha=1.0 - self.beta1)
                v.mul_(self.beta2).addcmul_(g, g, value=1.0 - self.beta2)
                update = (m / bc1) / ((v / bc2).sqrt() + self.epsilon)
                if self.weight_decay:
                    update = update + self.weight_decay * p
                p.sub_(lr * update)

    def state_dict(self) -> dict:
        return {
            "step": self.step_count,
            "m": {n: t.numpy().copy() for n, t in self.m.items()},
            "v": {n: t.numpy().copy() for n, t in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(state["step"])
        for name in self.params:
            self.m[name] = torch.from_numpy(np.asarray(state["m"][name])).clone()
            self.v[name] = torch.from_numpy(np.asarray(state["v"][name])).clone()


# ---------------------------------------------------------------------------
# Window sampling
# ---------------------------------------------------------------------------

def _step_rng(seed: int, stage: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 0, stage, step]))


def _sample_windows(corpus: np.ndarray, count: int, window: int, rng: np.random.Generator) -> np.ndarray:
    n, t_len, d = corpus.shape
    if t_len < window:
        raise ValueError(f"trajectories of {t_len} steps are too short for seq_len {window - 1}")
    traj = rng.integers(0, n, size=count)
    start = rng.integers(0, t_len - window + 1, size=count)
    return np.stack([corpus[i, s : s + window] for i, s in zip(traj, start)])


def _fixed_windows(corpus: np.ndarray, window: int) -> np.ndarray:
    n, t_len, d = corpus.shape
    per_traj = t_len // window
    if per_traj < 1:
        raise ValueError(f"trajectories of {t_len} steps are too short for seq_len {window - 1}")
    return corpus[:, : per_traj * window].reshape(n * per_traj, window, d)


def _probe_batch(corpus: np.ndarray, cfg: TrainConfig, stage_index: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1, stage_index]))
    return _sample_windows(corpus, cfg.probe_windows, cfg.seq_len + 1, rng)


def _probe_metrics(model: SeqModel, windows: np.ndarray) -> tuple:
    inputs, targets = windows[:, :-1], windows[:, 1:]
    with torch.no_grad():
        logits = model(inputs)
        loss = float(sequence_loss(logits, targets).item())
        pred = np.argmax(logits.numpy(), axis=-1)
    exact = (pred == targets).mean(axis=(0, 1))
    within = (np.abs(pred - targets) <= 1).mean(axis=(0, 1))
    return loss, exact.tolist(), within.tolist()


def eval_loss(model: SeqModel, corpus: np.ndarray, seq_len: int, windows: int = 64, seed: int = 0) -> float:
    """Loss on a deterministic window sample; comparable across models."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    batch = _sample_windows(corpus, windows, seq_len + 1, rng)
    with torch.no_grad():
        return float(sequence_loss(model(batch[:, :-1]), batch[:, 1:]).item())


# ---------------------------------------------------------------------------
# Stage training
# ---------------------------------------------------------------------------

def train_stage(
    model: SeqModel,
    corpus: np.ndarray,
    cfg: TrainConfig,
    stage_index: int = 0,
    optimizer: Optional[AdamW] = None,
    start_step: int = 0,
    prior_losses: Optional[list] = None,
    grid: Optional[GridSpec] = None,
    checkpoint_dir=None,
    completed_reports: Optional[list] = None,
    log: Optional[Callable[[str], None]] = None,
) -> tuple:
    """Optimize the model on one grid; returns (StageReport, optimizer).

    ``corpus`` is the encoded index array (n_traj, t, d) on the model's
    current grid. Aborts with TrainingDiverged if the loss goes non-finite or
    exceeds 10x its first recorded value in this stage.
    """
    if corpus.ndim != 3 or corpus.shape[2] != model.config.system_dim:
        raise ValueError("corpus must be (n_traj, t, d) indices matching the model dimension")
    if corpus.max() >= model.config.grid_axis or corpus.min() < 0:
        raise ValueError("corpus indices out of range for the model's grid axis")
    if optimizer is None:
        optimizer = AdamW(
            dict(model.named_parameters()),
            cfg.beta1, cfg.beta2, cfg.epsilon, cfg.weight_decay,
        )
    t0 = time.perf_counter()
    probe = _probe_batch(corpus, cfg, stage_index)
    post_loss, _, _ = _probe_metrics(model, probe)
    losses = list(prior_losses or [])
    fixed = _fixed_windows(corpus, cfg.seq_len + 1) if cfg.full_batch else None
    stage_total = cfg.stage_steps(stage_index)

    for step in range(start_step, stage_total):
        if cfg.full_batch:
            batch = fixed
        else:
            batch = _sample_windows(
                corpus, cfg.batch_size, cfg.seq_len + 1, _step_rng(cfg.seed, stage_index, step)
            )
        optimizer.zero_grad()
        loss = sequence_loss(model(batch[:, :-1]), batch[:, 1:])
        value = float(loss.item())
        initial = losses[0] if losses else value
        if not math.isfinite(value) or value > 10.0 * initial:
            raise TrainingDiverged(stage_index, step, value)
        losses.append(value)
        loss.backward()
        warm = min(1.0, (step + 1) / cfg.lr_warmup) if cfg.lr_warmup else 1.0
        optimizer.step(lr=cfg.learning_rate * warm)
        done = step + 1
        if (
            checkpoint_dir is not None
            and cfg.checkpoint_every
            and done % cfg.checkpoint_every == 0
            and done < stage_total
        ):
            path = Path(checkpoint_dir) / f"stage_{stage_index:02d}_step_{done:05d}.ckpt"
            save_checkpoint(
                path, model, grid, optimizer.state_dict(), stage_index, done,
                extra={"stage_losses": losses, "reports": completed_reports or []},
            )
        if log is not None and (done % 50 == 0 or done == stage_total):
            log(
                f"stage {stage_index} (M={model.config.grid_axis}) "
                f"step {done}/{stage_total} loss {value:.4f}"
            )

    final_loss, exact, within = _probe_metrics(model, probe)
    report = StageReport(
        grid_size=model.config.grid_axis,
        losses=losses,
        post_transition_loss=post_loss,
        final_loss=final_loss,
        accuracy_exact=exact,
        accuracy_within_one=within,
        wall_clock_s=time.perf_counter() - t0,
    )
    return report, optimizer


# ---------------------------------------------------------------------------
# Prolongation of the whole model
# ---------------------------------------------------------------------------

def _prolong_axis(x: torch.Tensor, axis: int) -> torch.Tensor:
    x = x.movedim(axis, 0)
    out = x.new_empty((2 * x.shape[0] - 1,) + x.shape[1:])
    out[0::2] = x
    out[1::2] = 0.5 * (x[:-1] + x[1:])
    return out.movedim(0, axis)


def prolong_model(model: SeqModel, grid: GridSpec, head_refresh: str = "prolong") -> tuple:
    """Lift model and grid to axis length 2M - 1; returns (model, grid).

    Tensor cores and (by default) classification-head rows and biases are
    interpolated with the even-copy / odd-average rule; transformer blocks,
    final norm, and the positional table are copied unchanged. With
    head_refresh="random" the fine-grid heads keep their fresh seeded init.
    """
    cfg = model.config
    new_cfg = dataclasses.replace(cfg, grid_axis=2 * cfg.grid_axis - 1)
    new_model = SeqModel(new_cfg, out_factors=model.out_factors)
    fine_tt = prolong(TTCores([p.detach() for p in model.tt_cores]))
    with torch.no_grad():
        for p_new, core in zip(new_model.tt_cores, fine_tt.cores):
            p_new.copy_(core)
        new_model.positional.copy_(model.positional)
        new_model.final_norm.load_state_dict(model.final_norm.state_dict())
        for b_new, b_old in zip(new_model.blocks, model.blocks):
            b_new.load_state_dict(b_old.state_dict())
        if head_refresh == "prolong":
            new_model.head_weight.copy_(_prolong_axis(model.head_weight.detach(), 1))
            new_model.head_bias.copy_(_prolong_axis(model.head_bias.detach(), 1))
        elif head_refresh != "random":
            raise ValueError("head_refresh must be 'prolong' or 'random'")
    return new_model, grid.refine()


# ---------------------------------------------------------------------------
# The multigrid driver
# ---------------------------------------------------------------------------

_CKPT_RE = re.compile(r"stage_(\d+)(?:_step_(\d+))?\.ckpt$")


def _latest_checkpoint(checkpoint_dir) -> Optional[Path]:
    best = None
    best_key = None
    for path in Path(checkpoint_dir).glob("stage_*.ckpt"):
        m = _CKPT_RE.match(path.name)
        if not m:
            continue
        stage = int(m.group(1))
        step = int(m.group(2)) if m.group(2) else math.inf  # boundary = complete
        key = (stage, step)
        if best_key is None or key > best_key:
            best, best_key = path, key
    return best


def multigrid_train(
    data: TrajectorySet,
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    bounds=None,
    margin: float = 0.05,
    checkpoint_dir=None,
    resume: bool = False,
    log: Optional[Callable[[str], None]] = None,
) -> tuple:
    """Train through the grid schedule; returns (model, grid, [StageReport]).

    Trajectories are re-encoded from the continuous source at every stage
    (quantization error never compounds through index upsampling). A
    single-entry schedule trains directly at that grid size. Deterministic
    given (data, cfg, model_cfg): reports and checkpoints are bit-identical
    across runs.
    """
    schedule = list(cfg.schedule)
    lo, hi = bounds if bounds is not None else fit_bounds(data.states, margin)

    reports: list = []
    model: Optional[SeqModel] = None
    grid: Optional[GridSpec] = None
    optimizer: Optional[AdamW] = None
    start_stage = 0
    start_step = 0
    prior_losses: list = []

    if resume and checkpoint_dir is not None:
        found = _latest_checkpoint(checkpoint_dir)
        if found is not None:
            ck = load_checkpoint(found)
            model, grid = ck.model, ck.grid
            reports = [StageReport.from_dict(d) for d in ck.extra.get("reports", [])]
            start_stage = ck.stage_index
            boundary = ck.step_in_stage >= cfg.stage_steps(ck.stage_index)
            if boundary:
                if start_stage + 1 >= len(schedule):
                    return model, grid, reports  # run already complete
                model, grid = prolong_model(model, grid, cfg.head_refresh)
                start_stage += 1
            else:
                optimizer = AdamW(
                    dict(model.named_parameters()),
                    cfg.beta1, cfg.beta2, cfg.epsilon, cfg.weight_decay,
                )
                if ck.optimizer_state is not None:
                    optimizer.load_state_dict(ck.optimizer_state)
                start_step = ck.step_in_stage
                prior_losses = list(ck.extra.get("stage_losses", []))
            if log is not None:
                log(f"resuming from {found.name} at stage {start_stage}, step {start_step}")

    if model is None:
        grid = GridSpec(lo, hi, schedule[0])
        model = SeqModel(dataclasses.replace(model_cfg, grid_axis=schedule[0]))

    for s in range(start_stage, len(schedule)):
        if model.config.grid_axis != schedule[s] or grid.axis_len != schedule[s]:
            raise ValueError(
                f"grid/model axis {grid.axis_len}/{model.config.grid_axis} does not match "
                f"schedule entry {schedule[s]} at stage {s}"
            )
        corpus = grid.encode(data.states)
        report, optimizer = train_stage(
            model, corpus, cfg,
            stage_index=s,
            optimizer=optimizer,
            start_step=start_step,
            prior_losses=prior_losses,
            grid=grid,
            checkpoint_dir=checkpoint_dir,
            completed_reports=[r.to_dict() for r in reports],
            log=log,
        )
        start_step = 0
        prior_losses = []
        if checkpoint_dir is not None:
            path = Path(checkpoint_dir) / f"stage_{s:02d}.ckpt"
            report.checkpoint_path = str(path)
            save_checkpoint(
                path, model, grid, optimizer.state_dict(), s, cfg.stage_steps(s),
                extra={"reports": [r.to_dict() for r in reports] + [report.to_dict()]},
            )
        reports.append(report)
        if s + 1 < len(schedule):
            model, grid = prolong_model(model, grid, cfg.head_refresh)
            optimizer = None

    return model, grid, reports
