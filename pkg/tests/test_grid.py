import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fraclap.grid import (BinaryMask, GridSpec, NoiseSpec, ScalarField, centered_box, disk,
                          disk_with_wedge, gaussian_noise, inner, lp_norm, psnr)


def bounded(n=32, w=24):
    return GridSpec.bounded(centered_box(n, w))


@pytest.mark.parametrize("kw", [dict(dim=4, n=8, h=0.1), dict(dim=2, n=3, h=0.1), dict(dim=2, n=8, h=0.0),
                                dict(dim=2, n=8, h=-1.0)])
def test_gridspec_rejects_bad_parameters(kw):
    with pytest.raises(ValueError):
        GridSpec(**kw)


def test_bounded_mask_needs_empty_layer_and_members():
    with pytest.raises(ValueError):
        GridSpec.bounded(np.ones((8, 8), bool))
    with pytest.raises(ValueError):
        GridSpec.bounded(np.zeros((8, 8), bool))
    with pytest.raises(ValueError):
        GridSpec(2, 8, 0.1, np.ones((7, 7), bool))


def test_periodic_length_and_defaults():
    g = GridSpec.periodic(2, 16)
    assert g.h == 1 / 16 and g.period == pytest.approx(1.0)
    assert g.is_periodic and g.measure == pytest.approx(1.0)
    g = GridSpec.periodic(1, 10, h=0.3)
    assert g.period == pytest.approx(3.0)


def test_cell_centres():
    g = GridSpec.periodic(1, 4)
    (x,) = g.centers()
    assert np.allclose(x, [0.125, 0.375, 0.625, 0.875])


def test_fields_are_immutable():
    g = bounded()
    u = ScalarField(g, np.ones(g.shape))
    with pytest.raises(ValueError):
        u.values[0, 0] = 2.0
    with pytest.raises(ValueError):
        g.omega[5, 5] = False


def test_mask_operations():
    g = bounded()
    a = BinaryMask(g, disk(32, 5))
    b = a.complement()
    assert a.count + b.count == 32 * 32
    assert (a & b).count == 0 and (a | b).count == 32 * 32
    assert a.measure == pytest.approx(a.count * g.h ** 2)


def test_lp_norm_trivial_cases():
    g = bounded()
    assert lp_norm(ScalarField.zeros(g), 2) == 0.0
    one = ScalarField.constant(g, 1.0)
    assert lp_norm(one, 1) == pytest.approx(g.omega.sum() * g.h ** 2, rel=1e-14)
    assert lp_norm(one, math.inf) == 1.0


def test_lp_norm_matches_naive_loop():
    g = bounded(20, 14)
    rng = np.random.default_rng(0)
    u = ScalarField(g, rng.standard_normal(g.shape))
    total = 0.0
    for i in range(20):
        for j in range(20):
            if g.omega[i, j]:
                total += abs(u.values[i, j]) ** 2 * g.h ** 2
    assert lp_norm(u, 2) == pytest.approx(math.sqrt(total), rel=1e-12)


def test_lp_norm_ignores_exterior_values():
    g = bounded()
    v = np.zeros(g.shape)
    v[0, 0] = 1e6
    assert lp_norm(ScalarField(g, v), 2) == 0.0


def test_lp_norm_rejects_non_finite():
    g = bounded()
    v = np.zeros(g.shape)
    v[10, 10] = np.nan
    with pytest.raises(ValueError, match="non-finite field"):
        lp_norm(ScalarField(g, v), 2)


def test_holder_consistency_on_random_fields():
    g = bounded()
    rng = np.random.default_rng(1)
    vol = g.measure
    for _ in range(100):
        u = ScalarField(g, rng.standard_normal(g.shape) * rng.uniform(0.1, 10))
        p, q = sorted(rng.uniform(1, 8, size=2))
        assert lp_norm(u, p) <= vol ** (1 / p - 1 / q) * lp_norm(u, q) * (1 + 1e-10)


def test_psnr_values():
    g = GridSpec.periodic(2, 8)
    one = ScalarField.constant(g, 1.0)
    assert psnr(one, one) == math.inf
    assert psnr(one, ScalarField.constant(g, 0.9)) == pytest.approx(20.0, abs=1e-10)


def test_psnr_bounded_uses_omega_only():
    g = bounded()
    clean = ScalarField.constant(g, 1.0)
    other = np.where(g.omega, 0.9, 123.0)
    assert psnr(clean, ScalarField(g, other)) == pytest.approx(20.0, abs=1e-10)


def test_noise_zero_and_negative_targets():
    g = bounded()
    assert not gaussian_noise(NoiseSpec(1, 0.0), g).values.any()
    with pytest.raises(ValueError):
        gaussian_noise(NoiseSpec(1, -0.1), g)
    with pytest.raises(ValueError):
        NoiseSpec(1, 0.1, q=1.0)


def test_noise_renormalisation_oracle():
    g = GridSpec.periodic(2, 32)
    n = gaussian_noise(NoiseSpec(1, 0.1, 2.0), g)
    assert abs(lp_norm(n, 2) - 0.1) <= 1e-12


def test_noise_determinism_is_bytewise():
    g = bounded()
    a = gaussian_noise(NoiseSpec(7, 0.3, 4.5), g)
    b = gaussian_noise(NoiseSpec(7, 0.3, 4.5), g)
    assert a.values.tobytes() == b.values.tobytes()
    c = gaussian_noise(NoiseSpec(8, 0.3, 4.5), g)
    assert a.values.tobytes() != c.values.tobytes()


@given(seed=st.integers(0, 2 ** 31), target=st.floats(1e-8, 1e3),
       q=st.one_of(st.floats(1.01, 12.0), st.just(math.inf)))
def test_noise_hits_target_norm(seed, target, q):
    g = bounded(16, 10)
    n = gaussian_noise(NoiseSpec(seed, target, q), g)
    assert lp_norm(n, q) == pytest.approx(target, rel=1e-12)
    assert not n.values[~g.omega].any()


def test_inner_product():
    g = bounded()
    rng = np.random.default_rng(2)
    u = ScalarField(g, rng.standard_normal(g.shape))
    assert inner(u, u) == pytest.approx(lp_norm(u, 2) ** 2, rel=1e-12)


def test_grid_mismatch_is_an_error():
    a = ScalarField.zeros(bounded(32, 24))
    b = ScalarField.zeros(bounded(32, 20))
    with pytest.raises(ValueError, match="grid mismatch"):
        inner(a, b)
    with pytest.raises(ValueError):
        a + b


def test_shapes():
    d = disk(64, 10)
    assert abs(d.sum() - math.pi * 100) < 2 * math.pi * 10
    w = disk_with_wedge(64, 10, 90)
    assert w.sum() < d.sum() and not (w & ~d).any()
    assert abs(w.sum() - 0.75 * d.sum()) < 2 * math.pi * 10
