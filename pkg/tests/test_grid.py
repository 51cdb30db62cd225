import numpy as np
import pytest

from ttdyn import GridSpec, fit_bounds


def unit_grid(m, d=1):
    return GridSpec(np.zeros(d), np.ones(d), m)


def test_encode_examples():
    g = unit_grid(2)
    assert g.encode(np.array([0.25]))[0] == 0
    assert g.encode(np.array([0.75]))[0] == 1
    # interior boundary goes to the upper segment (half-open convention)
    assert g.encode(np.array([0.5]))[0] == 1
    # x == hi clamps into the last segment
    assert g.encode(np.array([1.0]))[0] == 1


def test_encode_clamps_out_of_box():
    g = unit_grid(4)
    assert g.encode(np.array([-3.0]))[0] == 0
    assert g.encode(np.array([7.0]))[0] == 3


def test_encode_rejects_non_finite():
    g = unit_grid(4)
    with pytest.raises(ValueError):
        g.encode(np.array([np.nan]))


def test_decode_examples():
    g = unit_grid(2)
    assert g.decode(np.array([0]))[0] == pytest.approx(0.25)
    assert g.decode(np.array([1]))[0] == pytest.approx(0.75)
    with pytest.raises(ValueError):
        g.decode(np.array([2]))
    with pytest.raises(ValueError):
        g.decode(np.array([-1]))


def test_decode_stays_inside_box():
    g = GridSpec(np.array([-2.0, 1.0]), np.array([3.0, 4.0]), 7)
    idx = np.stack(np.meshgrid(np.arange(7), np.arange(7), indexing="ij"), axis=-1)
    x = g.decode(idx)
    assert (x >= g.lo).all() and (x <= g.hi).all()


@pytest.mark.parametrize("m", [2, 3, 5, 9])
def test_round_trip_exhaustive(m):
    g = GridSpec(np.array([-1.0, 0.0, 2.0]), np.array([2.0, 5.0, 2.5]), m)
    grids = np.meshgrid(*[np.arange(m)] * 3, indexing="ij")
    idx = np.stack(grids, axis=-1).reshape(-1, 3)
    assert (g.encode(g.decode(idx)) == idx).all()


def test_round_trip_within_half_width():
    rng = np.random.default_rng(7)
    g = GridSpec(np.array([-4.0] * 16), np.array([9.0] * 16), 33)
    x = rng.uniform(g.lo, g.hi, size=(1000, 16))
    err = np.abs(g.decode(g.encode(x)) - x)
    assert (err <= g.width / 2 + 1e-12).all()


def test_encode_monotone_per_dimension():
    g = unit_grid(9)
    x = np.sort(np.random.default_rng(3).uniform(-0.5, 1.5, size=200))
    idx = g.encode(x[:, None])[:, 0]
    assert (np.diff(idx) >= 0).all()


def test_refine_chain():
    g = GridSpec(np.array([0.0]), np.array([1.0]), 2)
    chain = [g.axis_len]
    for _ in range(5):
        g = g.refine()
        chain.append(g.axis_len)
    assert chain == [2, 3, 5, 9, 17, 33]
    assert g.lo[0] == 0.0 and g.hi[0] == 1.0


def test_refine_keeps_bounds():
    g = GridSpec(np.array([-1.5, 2.0]), np.array([0.5, 8.0]), 3)
    r = g.refine()
    assert r.axis_len == 5
    np.testing.assert_array_equal(r.lo, g.lo)
    np.testing.assert_array_equal(r.hi, g.hi)


def test_fit_bounds_margin():
    data = np.array([[[0.0, 2.0], [1.0, 4.0]]])  # spans [0,1] and [2,4]
    lo, hi = fit_bounds(data, margin=0.05)
    np.testing.assert_allclose(lo, [-0.05, 1.9])
    np.testing.assert_allclose(hi, [1.05, 4.1])


def test_fit_bounds_zero_margin_encodes_without_clamping():
    rng = np.random.default_rng(11)
    data = rng.normal(size=(20, 30, 3))
    lo, hi = fit_bounds(data, margin=0.0)
    np.testing.assert_array_equal(lo, data.reshape(-1, 3).min(axis=0))
    np.testing.assert_array_equal(hi, data.reshape(-1, 3).max(axis=0))
    g = GridSpec(lo, hi, 5)
    idx = g.encode(data)
    # nothing fell outside: interior points round-trip within half a width
    assert idx.min() == 0 and idx.max() == 4


def test_fit_bounds_rejects_degenerate_dimension():
    data = np.zeros((1, 4, 2))
    data[..., 0] = np.linspace(0, 1, 4)
    with pytest.raises(ValueError, match="1"):
        fit_bounds(data)


def test_gridspec_validation():
    with pytest.raises(ValueError):
        GridSpec(np.array([0.0]), np.array([0.0]), 4)
    with pytest.raises(ValueError):
        GridSpec(np.array([0.0]), np.array([1.0]), 1)


def test_grid_dict_round_trip():
    g = GridSpec(np.array([-1.0, 2.0]), np.array([3.5, 4.0]), 9)
    g2 = GridSpec.from_dict(g.to_dict())
    np.testing.assert_array_equal(g.lo, g2.lo)
    np.testing.assert_array_equal(g.hi, g2.hi)
    assert g.axis_len == g2.axis_len
