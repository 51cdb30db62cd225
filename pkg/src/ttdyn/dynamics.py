"""Benchmark chaotic systems, trajectory generation, and divergence measurement.

Two systems are built in: the Rossler system (d = 3) and the cyclic Lorenz-96
system (d >= 4). Integration is fixed-step classical RK4 with a configurable
number of internal substeps per saved step, so datasets are deterministic and
reproducible from a seed. All randomness goes through numpy's PCG64 generator
with counter-derived per-trajectory streams: results do not depend on how the
work is split across workers.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

_MAGIC = b"TTDYN001"


class IntegrationError(RuntimeError):
    """Raised when the integrator produces a non-finite state (blow-up)."""

    def __init__(self, step: int, detail: str = ""):
        self.step = step
        msg = f"non-finite state at step {step}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


# ---------------------------------------------------------------------------
# Systems
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SystemSpec:
    """A named right-hand side with parameters and a fixed dimension."""

    kind: str
    dim: int
    params: dict

    def __post_init__(self) -> None:
        if self.kind == "rossler":
            if self.dim != 3:
                raise ValueError("rossler is a 3-dimensional system")
            missing = {"a", "b", "c"} - set(self.params)
        elif self.kind == "lorenz96":
            if self.dim < 4:
                raise ValueError("lorenz96 cyclic coupling needs dim >= 4")
            missing = {"forcing"} - set(self.params)
        else:
            raise ValueError(f"unknown system kind {self.kind!r}")
        if missing:
            raise ValueError(f"{self.kind} params missing {sorted(missing)}")
        object.__setattr__(self, "params", dict(self.params))

    def rhs(self) -> Callable[[np.ndarray], np.ndarray]:
        if self.kind == "rossler":
            p = self.params
            return lambda x: rossler_rhs(x, p["a"], p["b"], p["c"])
        p = self.params
        return lambda x: lorenz96_rhs(x, p["forcing"])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "params": dict(self.params)}

    @staticmethod
    def from_dict(d: dict) -> "SystemSpec":
        return SystemSpec(d["kind"], int(d["dim"]), dict(d["params"]))


def rossler(a: float = 0.15, b: float = 0.2, c: float = 10.0) -> SystemSpec:
    return SystemSpec("rossler", 3, {"a": a, "b": b, "c": c})


def lorenz96(forcing: float = 10.0, dim: int = 16) -> SystemSpec:
    return SystemSpec("lorenz96", dim, {"forcing": forcing})


def rossler_rhs(state: np.ndarray, a: float, b: float, c: float) -> np.ndarray:
    """(dx, dy, dz) = (-y - z, x + a*y, b + z*(x - c)); vectorized over leading axes."""
    s = np.asarray(state, dtype=np.float64)
    x, y, z = s[..., 0], s[..., 1], s[..., 2]
    return np.stack([-y - z, x + a * y, b + z * (x - c)], axis=-1)


def lorenz96_rhs(state: np.ndarray, forcing: float) -> np.ndarray:
    """dx_i = (x_{i+1} - x_{i-2}) * x_{i-1} - x_i + forcing, indices cyclic.

    Vectorized over leading axes; the state dimension is last and must be >= 4
    so the four coupled sites are distinct.
    """
    x = np.asarray(state, dtype=np.float64)
    if x.shape[-1] < 4:
        raise ValueError(f"lorenz96 needs dim >= 4, got {x.shape[-1]}")
    xp1 = np.roll(x, -1, axis=-1)
    xm1 = np.roll(x, 1, axis=-1)
    xm2 = np.roll(x, 2, axis=-1)
    return (xp1 - xm2) * xm1 - x + forcing


def _as_rhs(system) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(system, SystemSpec):
        return system.rhs()
    if callable(system):
        return system
    raise TypeError("system must be a SystemSpec or a callable rhs(x) -> dx/dt")


# ---------------------------------------------------------------------------
# Integration
# ---------------------------------------------------------------------------

def rk4_step(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float) -> np.ndarray:
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_batch(
    system,
    x0: np.ndarray,
    tau: float,
    steps: int,
    substeps: int = 10,
) -> np.ndarray:
    """Integrate a batch of initial states (n, d) -> (n, steps + 1, d).

    Fixed-step RK4 with internal step tau / substeps. Row 0 is x0. Raises
    IntegrationError naming the first step at which any state went non-finite.
    Per-trajectory results are identical to integrating each row alone (all
    operations are elementwise across the batch).
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if steps < 1 or substeps < 1:
        raise ValueError("steps and substeps must be >= 1")
    f = _as_rhs(system)
    x = np.asarray(x0, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("x0 must have shape (n, d)")
    if not np.isfinite(x).all():
        raise ValueError("initial states must be finite")
    h = tau / substeps
    out = np.empty((x.shape[0], steps + 1, x.shape[1]), dtype=np.float64)
    out[:, 0] = x
    for k in range(1, steps + 1):
        for _ in range(substeps):
            x = rk4_step(f, x, h)
        if not np.isfinite(x).all():
            bad = int(np.flatnonzero(~np.isfinite(x).all(axis=-1))[0])
            raise IntegrationError(k, f"trajectory {bad}")
        out[:, k] = x
    return out


def integrate(system, x0: np.ndarray, tau: float, steps: int, substeps: int = 10) -> np.ndarray:
    """Single-trajectory convenience wrapper: (d,) -> (steps + 1, d)."""
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 1:
        raise ValueError("x0 must be a 1-D state")
    return integrate_batch(system, x0[None, :], tau, steps, substeps)[0]


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InitSpec:
    """Initial-condition distribution around a center point.

    kind "uniform_box": center + Uniform(-radius, radius) on every component.
    kind "gaussian_component": center, plus Gaussian(0, sigma^2) noise added to
    a single component (the last one by default).
    """

    kind: str
    center: np.ndarray
    radius: float = 0.0
    sigma: float = 0.0
    component: int = -1

    def __post_init__(self) -> None:
        if self.kind not in ("uniform_box", "gaussian_component"):
            raise ValueError(f"unknown init kind {self.kind!r}")
        c = np.ascontiguousarray(np.asarray(self.center, dtype=np.float64))
        c.setflags(write=False)
        object.__setattr__(self, "center", c)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        x = self.center.copy()
        if self.kind == "uniform_box":
            x += rng.uniform(-self.radius, self.radius, size=x.shape)
        else:
            x[self.component] += rng.normal(0.0, self.sigma)
        return x

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "center": [float(v) for v in self.center],
            "radius": float(self.radius),
            "sigma": float(self.sigma),
            "component": int(self.component),
        }

    @staticmethod
    def from_dict(d: dict) -> "InitSpec":
        return InitSpec(
            d["kind"], np.asarray(d["center"]), float(d.get("radius", 0.0)),
            float(d.get("sigma", 0.0)), int(d.get("component", -1)),
        )


def default_init(system: SystemSpec) -> InitSpec:
    """The standard initial distribution for each benchmark system.

    Rossler: [5, 0, 0] + Uniform(-1, 1) per component. Lorenz-96: forcing * 1
    with Gaussian noise of variance 0.01 (sigma = 0.1) on the last component
    only.
    """
    if system.kind == "rossler":
        return InitSpec("uniform_box", np.array([5.0, 0.0, 0.0]), radius=1.0)
    center = np.full(system.dim, float(system.params["forcing"]))
    return InitSpec("gaussian_component", center, sigma=0.1, component=-1)


@dataclass
class TrajectorySet:
    """A batch of trajectories with a shared constant time step.

    states has shape (n_traj, n_steps, dim). The system reference is optional:
    binary trajectory files carry only shapes, tau, and the seed.
    """

    states: np.ndarray
    tau: float
    system: Optional[SystemSpec] = None
    seed: int = 0

    def __post_init__(self) -> None:
        s = np.ascontiguousarray(np.asarray(self.states, dtype=np.float64))
        if s.ndim != 3:
            raise ValueError("states must have shape (n_traj, n_steps, dim)")
        if s.shape[0] < 1 or s.shape[1] < 2:
            raise ValueError("need at least 1 trajectory of at least 2 steps")
        if not np.isfinite(s).all():
            raise ValueError("trajectory states must be finite")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        self.states = s

    @property
    def n_traj(self) -> int:
        return self.states.shape[0]

    @property
    def n_steps(self) -> int:
        return self.states.shape[1]

    @property
    def dim(self) -> int:
        return self.states.shape[2]


def _traj_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    # Counter-derived stream: independent of draw order and worker count.
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, stream, index])))


def generate_dataset(
    system: SystemSpec,
    count: int,
    steps: int,
    tau: float,
    init: Optional[InitSpec] = None,
    seed: int = 0,
    substeps: int = 10,
    burn_in: int = 0,
    observation_noise: float = 0.0,
) -> TrajectorySet:
    """Integrate ``count`` trajectories of ``steps`` saved steps (plus row 0).

    Initial conditions are drawn per trajectory from counter-derived PCG64
    streams, so the dataset is bit-reproducible from the seed alone. burn_in
    extra steps are integrated and discarded from the front. Observation noise
    (Gaussian, per entry) is off by default; the generated dynamics are exact
    up to integrator error.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if init is None:
        init = default_init(system)
    x0 = np.stack([init.sample(_traj_rng(seed, k)) for k in range(count)])
    states = integrate_batch(system, x0, tau, burn_in + steps, substeps)
    if burn_in:
        states = states[:, burn_in:]
    if observation_noise > 0.0:
        noise = np.stack([
            _traj_rng(seed, k, stream=1).normal(0.0, observation_noise, size=states.shape[1:])
            for k in range(count)
        ])
        states = states + noise
    return TrajectorySet(states=states, tau=tau, system=system, seed=seed)


# ---------------------------------------------------------------------------
# Divergence of nearby trajectories
# ---------------------------------------------------------------------------

@dataclass
class DivergenceCurve:
    """RMS separation of perturbed trajectory pairs over time.

    fitted_exponent is the least-squares slope of log(separation) vs time over
    the initial growth window: the first 20% of steps, cut earlier if the
    separation exceeds 10% of the attractor diameter. Zero when the separation
    vanishes identically (no exponential fit possible).
    """

    times: np.ndarray
    rms_separation: np.ndarray
    fitted_exponent: float

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=np.float64)
        self.rms_separation = np.asarray(self.rms_separation, dtype=np.float64)
        if self.times.shape != self.rms_separation.shape:
            raise ValueError("times and rms_separation must have equal length")
        if (self.rms_separation < 0).any():
            raise ValueError("rms_separation must be nonnegative")


def divergence_curve(
    system,
    x0: np.ndarray,
    delta: float,
    tau: float,
    steps: int,
    pairs: int = 8,
    seed: int = 0,
    substeps: int = 10,
    base_jitter: float = 0.0,
    burn_in: int = 0,
    perturb: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None,
) -> DivergenceCurve:
    """Measure how fast nearby trajectories separate.

    For each pair: a base point near x0 (uniform jitter of half-width
    base_jitter, then burn_in discarded steps so the base sits on the
    attractor), and the same point displaced by a random perturbation of
    Euclidean norm delta. Both are integrated for ``steps`` steps and the RMS
    separation across pairs is recorded at every step.

    ``perturb`` overrides the perturbation draw (testing hook; the default
    draws an isotropic direction scaled to norm delta).
    """
    if delta <= 0 and perturb is None:
        raise ValueError("delta must be positive")
    x0 = np.asarray(x0, dtype=np.float64)
    d = x0.shape[0]
    bases = np.empty((pairs, d))
    offsets = np.empty((pairs, d))
    for k in range(pairs):
        rng = _traj_rng(seed, k, stream=2)
        base = x0.copy()
        if base_jitter > 0:
            base += rng.uniform(-base_jitter, base_jitter, size=d)
        if burn_in:
            base = integrate(system, base, tau, burn_in, substeps)[-1]
        if perturb is not None:
            off = np.asarray(perturb(rng, d), dtype=np.float64)
        else:
            off = rng.standard_normal(d)
            off *= delta / np.linalg.norm(off)
        bases[k] = base
        offsets[k] = off

    a = integrate_batch(system, bases, tau, steps, substeps)
    b = integrate_batch(system, bases + offsets, tau, steps, substeps)
    sep = np.linalg.norm(a - b, axis=-1)  # (pairs, steps + 1)
    rms = np.sqrt(np.mean(sep**2, axis=0))
    times = tau * np.arange(steps + 1)

    diameter = float(np.linalg.norm(a.reshape(-1, d).max(axis=0) - a.reshape(-1, d).min(axis=0)))
    window = max(2, int(round(0.2 * (steps + 1))))
    above = np.flatnonzero(rms > 0.1 * diameter)
    if above.size:
        window = min(window, max(2, int(above[0])))
    fit_rms = rms[:window]
    if (fit_rms <= 0).any():
        exponent = 0.0
    else:
        exponent = float(np.polyfit(times[:window], np.log(fit_rms), 1)[0])
    return DivergenceCurve(times=times, rms_separation=rms, fitted_exponent=exponent)


# ---------------------------------------------------------------------------
# Trajectory files
# ---------------------------------------------------------------------------
# Binary layout: magic "TTDYN001", then little-endian int64 d, M (trajectory
# count), T (steps per trajectory), float64 tau, int64 seed, then M*T*d
# float64 states in row-major (trajectory, step, dimension) order.

def save_trajectories(path, ts: TrajectorySet) -> None:
    m, t, d = ts.states.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<qqq", d, m, t))
        fh.write(struct.pack("<d", ts.tau))
        fh.write(struct.pack("<q", ts.seed))
        fh.write(ts.states.astype("<f8").tobytes(order="C"))


def load_trajectories(path, system: Optional[SystemSpec] = None) -> TrajectorySet:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise ValueError(f"not a trajectory file (magic {magic!r})")
        d, m, t = struct.unpack("<qqq", fh.read(24))
        (tau,) = struct.unpack("<d", fh.read(8))
        (seed,) = struct.unpack("<q", fh.read(8))
        buf = fh.read(m * t * d * 8)
    states = np.frombuffer(buf, dtype="<f8").reshape(m, t, d).copy()
    return TrajectorySet(states=states, tau=tau, system=system, seed=seed)


def trajectories_to_json(ts: TrajectorySet) -> str:
    """Lossless text export (Python float repr round-trips exactly)."""
    obj = {
        "magic": _MAGIC.decode(),
        "d": ts.dim,
        "m": ts.n_traj,
        "t": ts.n_steps,
        "tau": ts.tau,
        "seed": ts.seed,
        "system": ts.system.to_dict() if ts.system is not None else None,
        "states": ts.states.tolist(),
    }
    return json.dumps(obj, sort_keys=True)


def trajectories_from_json(text: str) -> TrajectorySet:
    obj = json.loads(text)
    if obj.get("magic") != _MAGIC.decode():
        raise ValueError("not a trajectory JSON export")
    system = SystemSpec.from_dict(obj["system"]) if obj.get("system") else None
    states = np.asarray(obj["states"], dtype=np.float64)
    return TrajectorySet(states=states, tau=float(obj["tau"]), system=system, seed=int(obj["seed"]))
