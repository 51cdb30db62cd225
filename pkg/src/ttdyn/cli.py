"""Command-line entry point: simulate | train | generate | evaluate.

Every command is driven by a resolved RunConfig (defaults <- preset <- config
file <- flags) and is a pure function of that config plus its input files:
rerunning a command reproduces its outputs byte for byte. The one exception
is timings.json, which records wall-clock and is documented as volatile. The
fully resolved config is written next to every output for provenance.

Exit codes: 0 success, 2 configuration error, 3 numeric failure (integrator
blow-up or training divergence).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import dynamics, evaluation
from .checkpoint import load_checkpoint
from .config import (
    ConfigError, RunConfig, make_model_config, make_system, make_train_config,
    resolve_config, write_resolved,
)
from .grid import fit_bounds
from .seqmodel import generate_batch
from .train import TrainingDiverged, _latest_checkpoint, multigrid_train


def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _dataset(cfg: RunConfig, count: int, seed: int) -> dynamics.TrajectorySet:
    system = make_system(cfg)
    s = cfg.system
    return dynamics.generate_dataset(
        system, count, s.steps, s.tau, seed=seed, substeps=s.substeps,
        burn_in=s.burn_in, observation_noise=s.observation_noise,
    )


def cmd_simulate(cfg: RunConfig, force: bool) -> int:
    data_dir = Path(cfg.paths.data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    train_path = data_dir / "train.traj"
    test_path = data_dir / "test.traj"
    for path in (train_path, test_path):
        if path.exists() and not force:
            raise ConfigError(f"{path} exists; pass --force to overwrite")
    s = cfg.system
    test_seed = s.test_seed if s.test_seed is not None else s.seed + 1
    train_set = _dataset(cfg, s.count, s.seed)
    test_set = _dataset(cfg, s.test_count, test_seed)
    dynamics.save_trajectories(train_path, train_set)
    dynamics.save_trajectories(test_path, test_set)
    write_resolved(cfg, data_dir / "config.resolved.json")
    for name, ts, path in (("train", train_set, train_path), ("test", test_set, test_path)):
        lo, hi = fit_bounds(ts.states, margin=0.0)
        print(f"{name}: states {ts.states.shape}, tau {ts.tau}, seed {ts.seed}")
        print(f"{name}: bounds lo {np.round(lo, 4).tolist()} hi {np.round(hi, 4).tolist()}")
        print(f"{name}: sha256 {_file_digest(path)}")
    return 0


def cmd_train(cfg: RunConfig, force: bool, resume: bool) -> int:
    data_dir = Path(cfg.paths.data_dir)
    ckpt_dir = Path(cfg.paths.checkpoint_dir)
    report_dir = Path(cfg.paths.report_dir)
    train_path = data_dir / "train.traj"
    if not train_path.exists():
        raise ConfigError(f"{train_path} not found; run simulate first")
    if ckpt_dir.exists() and any(ckpt_dir.glob("stage_*.ckpt")) and not (resume or force):
        raise ConfigError(f"{ckpt_dir} has checkpoints; pass --resume to continue or --force to retrain")
    if force and not resume and ckpt_dir.exists():
        for old in ckpt_dir.glob("stage_*.ckpt"):
            old.unlink()
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    report_dir.mkdir(parents=True, exist_ok=True)

    data = dynamics.load_trajectories(train_path, system=make_system(cfg))
    train_cfg = make_train_config(cfg)
    model_cfg = make_model_config(cfg, grid_axis=train_cfg.schedule[0])
    t0 = time.perf_counter()
    model, grid, reports = multigrid_train(
        data, train_cfg, model_cfg, margin=cfg.grid.margin,
        checkpoint_dir=ckpt_dir, resume=resume, log=print,
    )
    elapsed = time.perf_counter() - t0

    for i, report in enumerate(reports):
        evaluation.write_json(report_dir / f"stage_{i:02d}.json", report.to_dict())
        evaluation.write_csv(
            report_dir / f"stage_{i:02d}.csv",
            {"step": list(range(len(report.losses))), "loss": report.losses},
        )
    summary = {
        "schedule": train_cfg.schedule,
        "stages": [r.to_dict() for r in reports],
        "final_grid_axis": grid.axis_len,
        "grid": grid.to_dict(),
    }
    evaluation.write_json(report_dir / "train_summary.json", summary)
    with open(report_dir / "timings.json", "w") as fh:
        json.dump({"train_wall_clock_s": elapsed}, fh, indent=2)
        fh.write("\n")
    write_resolved(cfg, report_dir / "config.resolved.json")
    write_resolved(cfg, ckpt_dir / "config.resolved.json")
    for i, report in enumerate(reports):
        print(
            f"stage {i} (M={report.grid_size}): post-transition loss "
            f"{report.post_transition_loss:.4f} -> final {report.final_loss:.4f}"
        )
    return 0


def _load_model(cfg: RunConfig, checkpoint: str | None):
    if checkpoint is None:
        found = _latest_checkpoint(cfg.paths.checkpoint_dir)
        if found is None:
            raise ConfigError(
                f"no checkpoints in {cfg.paths.checkpoint_dir}; run train or pass --checkpoint"
            )
        checkpoint = found
    ck = load_checkpoint(checkpoint)
    if ck.model.config.system_dim != cfg.system.dim:
        raise ConfigError(
            f"checkpoint dimension {ck.model.config.system_dim} does not match "
            f"configured system dimension {cfg.system.dim}"
        )
    return ck


def cmd_generate(cfg: RunConfig, checkpoint, prefix_index: int, steps, out) -> int:
    ck = _load_model(cfg, checkpoint)
    test_path = Path(cfg.paths.data_dir) / "test.traj"
    if not test_path.exists():
        raise ConfigError(f"{test_path} not found; run simulate first")
    test = dynamics.load_trajectories(test_path, system=make_system(cfg))
    if not (0 <= prefix_index < test.n_traj):
        raise ConfigError(f"prefix index {prefix_index} out of range [0, {test.n_traj})")
    prefix_len = cfg.eval.prefix_len
    if test.n_steps < prefix_len:
        raise ConfigError(f"test trajectories too short for prefix_len {prefix_len}")
    steps = steps if steps is not None else cfg.eval.rollout_horizon

    prefix = ck.grid.encode(test.states[prefix_index, :prefix_len])
    rollout = generate_batch(ck.model, prefix[None], steps, seed=cfg.eval.seed)[0]
    decoded = ck.grid.decode(rollout)

    report_dir = Path(cfg.paths.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    out_path = Path(out) if out else report_dir / "generated.traj"
    generated = dynamics.TrajectorySet(
        states=decoded[None], tau=test.tau, system=test.system, seed=test.seed,
    )
    dynamics.save_trajectories(out_path, generated)
    with open(out_path.with_suffix(".json"), "w") as fh:
        fh.write(dynamics.trajectories_to_json(generated))
        fh.write("\n")
    write_resolved(cfg, report_dir / "config.resolved.json")
    print(f"generated {steps} states from prefix {prefix_index} -> {out_path}")
    print(f"sha256 {_file_digest(out_path)}")
    return 0


def cmd_evaluate(cfg: RunConfig, checkpoint) -> int:
    ck = _load_model(cfg, checkpoint)
    test_path = Path(cfg.paths.data_dir) / "test.traj"
    if not test_path.exists():
        raise ConfigError(f"{test_path} not found; run simulate first")
    system = make_system(cfg)
    test = dynamics.load_trajectories(test_path, system=system)
    report_dir = Path(cfg.paths.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    e = cfg.eval

    curve = evaluation.rmse_curve(ck.model, ck.grid, test, e.prefix_len, e.horizon, e.n)
    evaluation.write_csv(report_dir / "rmse.csv", {"t": curve.times, "rmse": curve.rmse})
    evaluation.write_json(report_dir / "rmse.json", curve.to_dict())

    accuracy = evaluation.one_step_accuracy(ck.model, ck.grid, test)
    evaluation.write_json(report_dir / "accuracy.json", accuracy)

    n_roll = min(e.rollouts, test.n_traj)
    prefixes = ck.grid.encode(test.states[:n_roll, : e.prefix_len])
    contained = evaluation.containment_fraction(ck.model, ck.grid, prefixes, e.rollout_horizon)
    evaluation.write_json(report_dir / "containment.json", {
        "fraction": contained, "rollouts": n_roll, "horizon": e.rollout_horizon,
    })

    init = dynamics.default_init(system)
    divergence = dynamics.divergence_curve(
        system, init.center, e.div_delta, test.tau, e.horizon,
        pairs=e.div_pairs, seed=e.seed, substeps=cfg.system.substeps,
        base_jitter=e.div_jitter, burn_in=e.div_burn_in,
    )
    compare = evaluation.compare_to_divergence(curve, divergence)
    evaluation.write_json(report_dir / "compare.json", compare)
    evaluation.write_csv(report_dir / "compare.csv", {
        "t": compare["times"], "rmse": compare["rmse"], "divergence": compare["divergence"],
    })
    write_resolved(cfg, report_dir / "config.resolved.json")

    print(f"rmse saturation {compare['rmse_saturation']:.4f}")
    print(f"divergence saturation {compare['divergence_saturation']:.4f} "
          f"(ratio {compare['saturation_ratio']:.3f})")
    print(f"containment fraction {contained}")
    print(f"within-one accuracy {['%.3f' % a for a in accuracy['within_one']]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttdyn",
        description="Discrete autoregressive modeling of chaotic dynamics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--preset", help="named preset (e.g. rossler-desk, lorenz96-desk)")
        p.add_argument("--seed", type=int, help="override system/model/train seeds")

    p = sub.add_parser("simulate", help="integrate and write train/test trajectory files")
    common(p)
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")

    p = sub.add_parser("train", help="run the coarse-to-fine training schedule")
    common(p)
    p.add_argument("--force", action="store_true", help="discard existing checkpoints")
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint")

    p = sub.add_parser("generate", help="roll out a trajectory from a test prefix")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint file (default: latest)")
    p.add_argument("--prefix-index", type=int, default=0, help="test trajectory index")
    p.add_argument("--steps", type=int, help="rollout length (default: eval.rollout_horizon)")
    p.add_argument("--out", help="output trajectory file")

    p = sub.add_parser("evaluate", help="write RMSE, accuracy, containment, and divergence reports")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint file (default: latest)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args.preset, args.config, args.seed)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.force)
        if args.command == "train":
            return cmd_train(cfg, args.force, args.resume)
        if args.command == "generate":
            return cmd_generate(cfg, args.checkpoint, args.prefix_index, args.steps, args.out)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.checkpoint)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (dynamics.IntegrationError, TrainingDiverged, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
