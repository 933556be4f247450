import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinnoise.errors import InvalidArgument
from spinnoise.model import (
    REFERENCE_PARAMS,
    NoiseParams,
    OperatingPoint,
    crossover_points,
    estimate_fz,
    noise_budget,
    projection_noise_spins,
    readout_margin_db,
    readout_noise_spins,
    thermal_variance,
    variance_model,
)

P = REFERENCE_PARAMS
G = 6.65e-8


def brute_force_variance(g, v_e, alpha, beta, v1, n_a, n_l):
    # term-by-term, written out independently of the package
    return v_e + n_l / 4 + alpha * n_l**2 + g**2 * v1 * n_l**2 / 4 * n_a + beta * g**2 * v1 * n_l**2 / 4 * n_a**2


def test_per_atom_variance_spin_one():
    assert P.per_atom_variance == pytest.approx(2 / 3, rel=1e-15)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(coupling=0.0),
        dict(coupling=1e-8, electronic=-1.0),
        dict(coupling=1e-8, light_technical=-1e-12),
        dict(coupling=1e-8, atomic_technical=-1e-9),
        dict(coupling=1e-8, spin=0.0),
        dict(coupling=1e-8, spin=0.7),
    ],
)
def test_noise_params_rejects_bad_values(kwargs):
    with pytest.raises(InvalidArgument):
        NoiseParams(**kwargs)


def test_operating_point_rejects_negative():
    with pytest.raises(InvalidArgument):
        OperatingPoint(-1, 10)
    with pytest.raises(InvalidArgument):
        OperatingPoint(1, -10)


def test_variance_empty_point_is_electronic():
    assert variance_model(P, OperatingPoint(0, 0)) == 4.9e5


def test_variance_light_only():
    assert variance_model(P, OperatingPoint(0, 1e9)) == pytest.approx(4.9e5 + 2.5e8 + 4.3e7, rel=1e-14)
    assert variance_model(P, OperatingPoint(0, 1e9)) == pytest.approx(2.935e8, rel=1e-3)


def test_variance_reference_point():
    v = variance_model(P, OperatingPoint(7.6e5, 1e9))
    b = noise_budget(P, OperatingPoint(7.6e5, 1e9))
    assert b.atomic_projection == pytest.approx(5.60e8, rel=2e-3)
    assert v == pytest.approx(9.86e8, rel=1e-3)
    assert v == pytest.approx(brute_force_variance(G, 4.9e5, 4.3e-11, 3.1e-7, 2 / 3, 7.6e5, 1e9), rel=1e-14)
    assert 10 * math.log10(b.atomic_projection / b.light_shot) == pytest.approx(3.5, abs=0.05)


def test_variance_broadcasts():
    na = np.array([0.0, 1e5, 7.6e5])
    v = variance_model(P, OperatingPoint(na, 1e9))
    expected = [brute_force_variance(G, 4.9e5, 4.3e-11, 3.1e-7, 2 / 3, a, 1e9) for a in na]
    np.testing.assert_allclose(v, expected, rtol=1e-14)


def test_budget_db_margins():
    db = noise_budget(P, OperatingPoint(7.6e5, 1e9)).db_below_projection
    assert db["light_shot"] == pytest.approx(3.5, abs=0.2)
    assert db["atomic_technical"] == pytest.approx(6.3, abs=0.2)
    assert db["light_technical"] == pytest.approx(11.1, abs=0.2)
    assert db["electronic"] == pytest.approx(30.6, abs=0.2)


def test_budget_ideal_has_two_terms():
    b = noise_budget(NoiseParams(coupling=G), OperatingPoint(7.6e5, 1e9))
    nonzero = [k for k, v in b.terms().items() if v != 0]
    assert sorted(nonzero) == ["atomic_projection", "light_shot"]
    assert set(b.undefined_db) == {"electronic", "light_technical", "atomic_technical"}


def test_budget_zero_atoms_flags_all_margins():
    b = noise_budget(P, OperatingPoint(0, 1e9))
    assert b.atomic_projection == 0.0 and b.atomic_technical == 0.0
    assert b.db_below_projection == {}
    assert len(b.undefined_db) == 4


def test_atomic_technical_equals_projection_at_crossover():
    b = noise_budget(P, OperatingPoint(1 / 3.1e-7, 1e9))
    assert b.db_below_projection["atomic_technical"] == pytest.approx(0.0, abs=0.1)
    # the rounded crossover 3.2e6 also sits within 0.1 dB
    b = noise_budget(P, OperatingPoint(3.2e6, 1e9))
    assert b.db_below_projection["atomic_technical"] == pytest.approx(0.0, abs=0.1)


def enumerate_thermal_variance(n, f=1):
    levels = [m - f for m in range(int(2 * f) + 1)]
    outcomes = [sum(c) for c in itertools.product(levels, repeat=n)]
    mean = sum(outcomes) / len(outcomes)
    return sum((o - mean) ** 2 for o in outcomes) / len(outcomes)


def test_thermal_variance_examples():
    assert thermal_variance(1, 1) == pytest.approx(2 / 3)
    assert thermal_variance(4, 1) == pytest.approx(8 / 3)
    assert thermal_variance(4, 1) == pytest.approx(enumerate_thermal_variance(4), rel=1e-12)
    assert thermal_variance(7.6e5, 1) == pytest.approx(5.067e5, rel=1e-3)
    assert projection_noise_spins(7.6e5) == pytest.approx(712, abs=1)


@pytest.mark.parametrize("f", [0.5, 1, 1.5, 2])
def test_thermal_variance_matches_enumeration_any_spin(f):
    assert thermal_variance(3, f) == pytest.approx(enumerate_thermal_variance(3, f), rel=1e-12)


def test_estimate_fz():
    assert estimate_fz(0, 1e9, G) == 0
    s_y = G * 1e5 * 1e9 / 2
    assert estimate_fz(s_y, 1e9, G) == pytest.approx(1e5, rel=1e-14)
    with pytest.raises(InvalidArgument):
        estimate_fz(1.0, 0, G)
    with pytest.raises(InvalidArgument):
        estimate_fz(1.0, 1e9, 0)


def test_estimate_fz_shot_noise_monte_carlo():
    rng = np.random.default_rng(11)
    n_l = 1e9
    s = rng.normal(0, math.sqrt(n_l / 4), 200_000)
    sd = np.std(estimate_fz(s, n_l, G))
    assert sd == pytest.approx(1 / (G * math.sqrt(n_l)), rel=0.01)
    assert sd == pytest.approx(476, abs=5)


def test_readout_noise():
    assert readout_noise_spins(P, 1e9) == pytest.approx(515, abs=1)
    quiet = NoiseParams(coupling=G)
    assert readout_noise_spins(quiet, 1e9) == pytest.approx(1 / (G * math.sqrt(1e9)), rel=1e-14)
    assert readout_margin_db(P, 7.6e5, 1e9) == pytest.approx(2.8, abs=0.1)
    with pytest.raises(InvalidArgument):
        readout_noise_spins(P, 0)


def test_crossovers():
    atoms, photons = crossover_points(P)
    assert atoms == pytest.approx(3.2e6, rel=0.02)
    assert photons == pytest.approx(5.8e9, rel=0.02)
    assert crossover_points(NoiseParams(coupling=G, atomic_technical=1e-6)).atoms == pytest.approx(1e6)
    assert math.isinf(crossover_points(NoiseParams(coupling=G)).photons)


# -- properties --------------------------------------------------------------

params_st = st.builds(
    NoiseParams,
    coupling=st.floats(1e-9, 1e-6),
    electronic=st.just(0.0) | st.floats(1e-3, 1e7),
    light_technical=st.just(0.0) | st.floats(1e-20, 1e-9),
    atomic_technical=st.just(0.0) | st.floats(1e-20, 1e-5),
    spin=st.sampled_from([0.5, 1.0, 1.5, 2.0]),
)
counts = st.just(0.0) | st.floats(1e-6, 1e7)
photons = st.floats(1, 1e10)


@settings(max_examples=200)
@given(params_st, counts, photons)
def test_budget_sums_to_model(params, n_a, n_l):
    point = OperatingPoint(n_a, n_l)
    assert noise_budget(params, point).total == pytest.approx(variance_model(params, point), rel=1e-12)


@settings(max_examples=100)
@given(st.floats(1e-9, 1e-6), photons)
def test_doubling_photons_doubles_pure_shot(g, n_l):
    params = NoiseParams(coupling=g)
    v1 = variance_model(params, OperatingPoint(0, n_l))
    v2 = variance_model(params, OperatingPoint(0, 2 * n_l))
    assert v2 == pytest.approx(2 * v1, rel=1e-14)


@settings(max_examples=100)
@given(params_st, counts, photons)
def test_doubling_photons_quadruples_projection(params, n_a, n_l):
    a = noise_budget(params, OperatingPoint(n_a, n_l)).atomic_projection
    b = noise_budget(params, OperatingPoint(n_a, 2 * n_l)).atomic_projection
    assert b == pytest.approx(4 * a, rel=1e-14)


@settings(max_examples=100)
@given(params_st, photons, st.floats(0, 1e6), st.floats(1, 1e6))
def test_linear_atom_slope_when_no_atomic_technical(params, n_l, n_a, d):
    p = NoiseParams(params.coupling, params.electronic, params.light_technical, 0.0, params.spin)
    v0 = variance_model(p, OperatingPoint(n_a, n_l))
    v1 = variance_model(p, OperatingPoint(n_a + d, n_l))
    slope = params.coupling**2 * p.per_atom_variance * n_l**2 / 4
    assert v1 - v0 == pytest.approx(slope * d, rel=1e-6, abs=1e-6 * abs(v0))


@given(st.integers(0, 10**7), st.sampled_from([0.5, 1.0, 1.5, 2.0]))
def test_thermal_extensive(n, f):
    assert thermal_variance(n, f) == pytest.approx(n * thermal_variance(1, f), rel=1e-14)


@given(st.floats(-1e7, 1e7), photons, st.floats(1e-9, 1e-6))
def test_estimate_fz_inverts_mean_map(z, n_l, g):
    assert estimate_fz(g * n_l * z / 2, n_l, g) == pytest.approx(z, rel=1e-12, abs=1e-9)


@given(params_st, st.floats(1, 1e7), photons, st.floats(1e-3, 1e3))
def test_db_invariant_under_common_rescaling(params, n_a, n_l, k):
    # 10 log10(k*p / (k*t)) == 10 log10(p / t)
    b = noise_budget(params, OperatingPoint(n_a, n_l))
    for name, db in b.db_below_projection.items():
        term = getattr(b, name)
        assert 10 * math.log10((k * b.atomic_projection) / (k * term)) == pytest.approx(db, abs=1e-9)


def test_margins_survive_extreme_ratios():
    b = noise_budget(NoiseParams(coupling=6.9e-7, electronic=1e300, spin=0.5), OperatingPoint(1e-300, 1e3))
    assert b.db_below_projection["electronic"] < -5000
    assert readout_margin_db(P, 1e-300, 1e9) < -3000
    with pytest.raises(InvalidArgument):
        readout_margin_db(P, 0, 1e9)
