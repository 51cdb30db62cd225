import numpy as np
import pytest

from ttdyn import (
    InitSpec,
    IntegrationError,
    TrajectorySet,
    default_init,
    divergence_curve,
    generate_dataset,
    integrate,
    load_trajectories,
    lorenz96,
    lorenz96_rhs,
    rossler,
    rossler_rhs,
    save_trajectories,
)
from ttdyn.dynamics import integrate_batch, trajectories_from_json, trajectories_to_json


# ---------------------------------------------------------------------------
# Right-hand sides
# ---------------------------------------------------------------------------

def test_rossler_rhs_values():
    np.testing.assert_allclose(
        rossler_rhs(np.array([5.0, 0.0, 0.0]), a=0.15, b=0.2, c=10.0), [0.0, 5.0, 0.2]
    )
    np.testing.assert_allclose(
        rossler_rhs(np.array([0.0, 0.0, 0.0]), a=0.15, b=0.2, c=10.0), [0.0, 0.0, 0.2]
    )
    # origin is a fixed point when b = 0
    np.testing.assert_array_equal(
        rossler_rhs(np.zeros(3), a=0.15, b=0.0, c=10.0), np.zeros(3)
    )


def test_lorenz96_rhs_values():
    # homogeneous state x = F * 1 is a fixed point
    np.testing.assert_array_equal(lorenz96_rhs(np.full(6, 10.0), 10.0), np.zeros(6))
    # hand evaluation with cyclic indices, d = 4
    np.testing.assert_allclose(
        lorenz96_rhs(np.array([1.0, 0.0, 0.0, 0.0]), 10.0), [9.0, 10.0, 10.0, 10.0]
    )
    # zero state leaves only the forcing
    np.testing.assert_array_equal(lorenz96_rhs(np.zeros(5), 10.0), np.full(5, 10.0))


def test_lorenz96_rejects_small_dimension():
    with pytest.raises(ValueError):
        lorenz96_rhs(np.zeros(3), 10.0)
    with pytest.raises(ValueError):
        lorenz96(forcing=10.0, dim=3)


@pytest.mark.parametrize("d", [4, 5, 16])
def test_lorenz96_cyclic_equivariance(d):
    rng = np.random.default_rng(d)
    for _ in range(10):
        x = rng.normal(size=d)
        for shift in (1, 2, d - 1):
            lhs = lorenz96_rhs(np.roll(x, shift), 10.0)
            rhs = np.roll(lorenz96_rhs(x, 10.0), shift)
            np.testing.assert_allclose(lhs, rhs, rtol=1e-13, atol=1e-13)


def _lorenz96_padded_reference(x, forcing):
    # independent implementation: explicit padded copy instead of np.roll
    d = len(x)
    p = np.concatenate([x[-2:], x, x[:1]])  # p[j] = x[(j - 2) mod d]
    out = np.empty(d)
    for i in range(d):
        out[i] = (p[i + 3] - p[i]) * p[i + 1] - x[i] + forcing
    return out


@pytest.mark.parametrize("d", [4, 7, 16])
def test_lorenz96_boundary_identities(d):
    rng = np.random.default_rng(100 + d)
    for _ in range(20):
        x = rng.normal(size=d)
        np.testing.assert_allclose(
            lorenz96_rhs(x, 10.0), _lorenz96_padded_reference(x, 10.0), rtol=1e-14
        )


def test_system_spec_validation():
    with pytest.raises(ValueError):
        rossler().__class__("rossler", 2, {"a": 1, "b": 1, "c": 1})
    with pytest.raises(ValueError):
        rossler().__class__("unknown", 3, {})


# ---------------------------------------------------------------------------
# Integrator
# ---------------------------------------------------------------------------

def test_integrate_zero_rhs_is_constant():
    out = integrate(lambda x: np.zeros_like(x), np.array([1.0, -2.0]), 0.1, 10)
    np.testing.assert_array_equal(out, np.tile([1.0, -2.0], (11, 1)))


def test_integrate_exponential_decay():
    out = integrate(lambda x: -x, np.array([1.0]), 0.1, 1, substeps=1)
    assert out[0, 0] == 1.0
    assert abs(out[1, 0] - np.exp(-0.1)) < 1e-6
    assert abs(out[1, 0] - 0.904837418) < 1e-6


def test_rk4_fourth_order_convergence():
    sys = rossler()
    x0 = np.array([5.0, 0.0, 0.0])
    ref = integrate(sys, x0, 1.0, 1, substeps=80)[-1]
    err_h = np.linalg.norm(integrate(sys, x0, 1.0, 1, substeps=10)[-1] - ref)
    err_h2 = np.linalg.norm(integrate(sys, x0, 1.0, 1, substeps=20)[-1] - ref)
    ratio = err_h / err_h2
    # 4th order: halving the step cuts the error by ~16x (factor-of-2 band)
    assert 8.0 < ratio < 32.0


def test_integrate_reports_blowup_step():
    blow = lambda x: x**2
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(IntegrationError) as exc:
            integrate(blow, np.array([1e80]), 0.1, 5, substeps=1)
    assert exc.value.step >= 1


def test_integrate_batch_matches_single():
    sys = lorenz96(10.0, 5)
    x0 = np.random.default_rng(0).normal(size=(3, 5))
    batch = integrate_batch(sys, x0, 0.05, 20)
    for i in range(3):
        np.testing.assert_array_equal(batch[i], integrate(sys, x0[i], 0.05, 20))


def test_integrate_input_validation():
    with pytest.raises(ValueError):
        integrate(rossler(), np.zeros(3), -0.1, 5)
    with pytest.raises(ValueError):
        integrate(rossler(), np.zeros(3), 0.1, 0)


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

def test_dataset_deterministic_from_seed():
    sys = rossler()
    a = generate_dataset(sys, 4, 50, 0.1, seed=42)
    b = generate_dataset(sys, 4, 50, 0.1, seed=42)
    assert a.states.tobytes() == b.states.tobytes()
    c = generate_dataset(sys, 4, 50, 0.1, seed=43)
    assert not np.array_equal(a.states[:, 0], c.states[:, 0])


def test_rossler_init_distribution():
    sys = rossler()
    ds = generate_dataset(sys, 200, 2, 0.1, seed=1)
    x0 = ds.states[:, 0]
    center = np.array([5.0, 0.0, 0.0])
    assert (np.abs(x0 - center) <= 1.0).all()
    assert np.abs(x0.mean(axis=0) - center).max() < 0.2


def test_lorenz96_init_distribution():
    sys = lorenz96(10.0, 8)
    ds = generate_dataset(sys, 200, 2, 0.05, seed=1)
    x0 = ds.states[:, 0]
    # all components pinned to F except the last one
    np.testing.assert_array_equal(x0[:, :-1], np.full((200, 7), 10.0))
    spread = x0[:, -1] - 10.0
    assert 0.05 < spread.std() < 0.2  # sigma = 0.1 (variance 0.01)
    assert np.abs(spread.mean()) < 0.05


def test_dataset_burn_in_drops_prefix():
    sys = rossler()
    full = generate_dataset(sys, 2, 30, 0.1, seed=3)
    trimmed = generate_dataset(sys, 2, 20, 0.1, seed=3, burn_in=10)
    np.testing.assert_array_equal(trimmed.states, full.states[:, 10:])


def test_dataset_observation_noise():
    sys = rossler()
    clean = generate_dataset(sys, 2, 20, 0.1, seed=3)
    noisy = generate_dataset(sys, 2, 20, 0.1, seed=3, observation_noise=0.1)
    diff = noisy.states - clean.states
    assert 0.01 < np.abs(diff).mean() < 0.5


def test_init_spec_kinds():
    rng = np.random.default_rng(0)
    u = InitSpec("uniform_box", np.array([1.0, 2.0]), radius=0.5)
    x = u.sample(rng)
    assert (np.abs(x - [1.0, 2.0]) <= 0.5).all()
    g = InitSpec("gaussian_component", np.array([0.0, 0.0, 0.0]), sigma=0.1, component=-1)
    y = g.sample(rng)
    assert y[0] == 0.0 and y[1] == 0.0 and y[2] != 0.0
    with pytest.raises(ValueError):
        InitSpec("nope", np.zeros(2))
    assert default_init(rossler()).kind == "uniform_box"
    assert default_init(lorenz96(10.0, 6)).kind == "gaussian_component"


# ---------------------------------------------------------------------------
# Divergence curves
# ---------------------------------------------------------------------------

def test_divergence_linear_decay_exponent():
    curve = divergence_curve(lambda x: -x, np.array([1.0, 1.0]), 1e-3, 0.1, 100, pairs=4, seed=0)
    assert abs(curve.rms_separation[0] - 1e-3) < 1e-12
    assert abs(curve.fitted_exponent - (-1.0)) < 0.05


def test_divergence_identical_pair_is_zero():
    curve = divergence_curve(
        rossler(), np.array([5.0, 0.0, 0.0]), 1e-6, 0.1, 20, pairs=2, seed=0,
        perturb=lambda rng, d: np.zeros(d),
    )
    np.testing.assert_array_equal(curve.rms_separation, np.zeros(21))
    assert curve.fitted_exponent == 0.0


def test_divergence_lorenz96_growth_and_saturation():
    sys = lorenz96(10.0, 8)
    curve = divergence_curve(
        sys, np.full(8, 10.0), 1e-8, 0.05, 600, pairs=16, seed=0, burn_in=400,
    )
    assert curve.fitted_exponent > 0.0
    assert curve.rms_separation[0] == pytest.approx(1e-8, abs=1e-12)
    # grows by orders of magnitude, then saturates at the attractor scale
    assert curve.rms_separation.max() > 1e-4
    assert curve.rms_separation[-1] > 1.0


def test_divergence_times_match_tau():
    curve = divergence_curve(lambda x: -x, np.array([1.0]), 1e-3, 0.25, 8, pairs=2, seed=1)
    np.testing.assert_allclose(curve.times, 0.25 * np.arange(9))


# ---------------------------------------------------------------------------
# Trajectory files
# ---------------------------------------------------------------------------

def test_trajectory_file_round_trip(tmp_path):
    sys = rossler()
    ds = generate_dataset(sys, 3, 25, 0.1, seed=9)
    path = tmp_path / "t.traj"
    save_trajectories(path, ds)
    back = load_trajectories(path, system=sys)
    np.testing.assert_array_equal(back.states, ds.states)
    assert back.tau == ds.tau and back.seed == ds.seed

    raw = path.read_bytes()
    assert raw[:8] == b"TTDYN001"
    header = np.frombuffer(raw[8:32], dtype="<i8")
    assert header.tolist() == [3, 3, 26]  # d, M, T
    assert np.frombuffer(raw[32:40], dtype="<f8")[0] == 0.1
    assert np.frombuffer(raw[40:48], dtype="<i8")[0] == 9
    assert len(raw) == 48 + 3 * 26 * 3 * 8


def test_trajectory_json_round_trip():
    ds = generate_dataset(rossler(), 2, 10, 0.1, seed=4)
    back = trajectories_from_json(trajectories_to_json(ds))
    np.testing.assert_array_equal(back.states, ds.states)  # lossless
    assert back.system.kind == "rossler"
    assert back.tau == ds.tau and back.seed == ds.seed


def test_trajectory_file_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.traj"
    path.write_bytes(b"NOTMAGIC" + b"\0" * 64)
    with pytest.raises(ValueError):
        load_trajectories(path)


def test_trajectory_set_validation():
    with pytest.raises(ValueError):
        TrajectorySet(states=np.zeros((1, 1, 3)), tau=0.1)
    with pytest.raises(ValueError):
        TrajectorySet(states=np.full((1, 3, 2), np.nan), tau=0.1)
    with pytest.raises(ValueError):
        TrajectorySet(states=np.zeros((1, 3, 2)), tau=0.0)
