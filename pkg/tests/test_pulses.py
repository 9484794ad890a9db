import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chiralxfer.errors import ConfigurationError, InvalidParameterError
from chiralxfer.pulses import (
    PulseSchedule,
    clamp_leakage,
    f_j,
    kappa,
    kappa_dot,
    kappa_integral,
    load_tabulated,
    noise_leakage,
    noise_leakage_closed_form,
    propagators,
)

EXP = PulseSchedule.exp_pair(1.0, 20.0)
CONST = PulseSchedule.const_exp_pair(1.0, 20.0)

# Independent value: the integral of kappa_2 over [-10, 10] is 10 + ln(2 - e^{-10}),
# evaluated with mpmath at 30 digits.
G2_FINAL_EXP20 = 4.76450209165085e-3


def test_exp_pair_shape():
    assert kappa(1, -200.0, EXP) == pytest.approx(0.0, abs=1e-80)
    assert kappa(1, 0.0, EXP) == pytest.approx(1.0)
    assert kappa(1, 5.0, EXP) == pytest.approx(1.0)
    assert kappa(2, 0.0, EXP) == pytest.approx(1.0)
    t = np.linspace(-10, 10, 401)
    np.testing.assert_allclose(kappa(2, t, EXP), kappa(1, -t, EXP), rtol=1e-14)


def test_delta_tau_shifts_decay_onset():
    s = EXP.with_delta_tau(0.5)
    t = np.linspace(-9, 9, 181)
    np.testing.assert_allclose(kappa(2, t + 0.5, s), kappa(2, t, EXP), rtol=1e-13)


def test_rates_are_non_negative_and_monotone():
    t = np.linspace(EXP.t_i, EXP.t_f, 2001)
    k1, k2 = kappa(1, t, EXP), kappa(2, t, EXP)
    assert np.all(k1 >= 0) and np.all(k2 >= 0)
    assert np.all(np.diff(k1) >= -1e-15)
    assert np.all(np.diff(k2) <= 1e-15)


def test_log_derivative_combinations():
    assert f_j(3.0, EXP, 1) == pytest.approx(-0.5)
    np.testing.assert_allclose(f_j(np.linspace(0.1, 19.9, 50), CONST, 1), -0.5)


@pytest.mark.parametrize("s", [EXP, CONST, PulseSchedule.exp_pair(2.0, 15.0)])
def test_decoupling_identity(s):
    t = np.linspace(s.t_i + 1e-3, s.t_f, 5001)
    t = t[np.abs(t) > 1e-9]
    if s is CONST:
        t = t[t > 2e-3]
    np.testing.assert_allclose(f_j(t, s, 1), f_j(t, s, 2) + kappa(2, t, s), atol=1e-9)


def test_kappa_integral_matches_quadrature():
    from scipy.integrate import quad

    for j in (1, 2):
        for a, b in ((-10.0, -3.0), (-2.0, 4.0), (1.0, 9.0)):
            ref, _ = quad(lambda x: float(kappa(j, x, EXP)), a, b, points=[0.0], epsabs=1e-13)
            got = kappa_integral(j, b, EXP) - kappa_integral(j, a, EXP)
            assert got == pytest.approx(ref, rel=1e-10, abs=1e-13)


def test_kappa_dot_matches_finite_difference():
    t = np.array([-6.0, -2.5, -0.3])
    h = 1e-6
    fd = (kappa(1, t + h, EXP) - kappa(1, t - h, EXP)) / (2 * h)
    np.testing.assert_allclose(kappa_dot(1, t, EXP), fd, rtol=1e-7)


def test_propagator_examples():
    g1, g2, _ = propagators(EXP.t_f, EXP.t_f, EXP)
    assert float(g2) == pytest.approx(1.0)
    g1, g2, _ = propagators(EXP.t_f, EXP.t_i, EXP)
    assert float(g1) == pytest.approx(-1.0, abs=1e-4)
    assert float(g2) == pytest.approx(G2_FINAL_EXP20, rel=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.floats(min_value=-10.0, max_value=10.0), st.floats(min_value=0.0, max_value=1.0))
def test_noise_propagator_definition(tp, frac):
    t = tp + frac * (EXP.t_f - tp)
    g1, g2, g = propagators(t, tp, EXP)
    expect = -math.sqrt(kappa(1, tp, EXP)) * g1 - math.sqrt(kappa(2, tp, EXP)) * g2
    assert float(g) == pytest.approx(float(expect), abs=1e-14)


def test_propagators_reject_reversed_times():
    with pytest.raises(InvalidParameterError):
        propagators(0.0, 1.0, EXP)


def test_noise_leakage_closed_forms():
    assert noise_leakage_closed_form(EXP) == pytest.approx(2.27e-5, rel=2e-3)
    for T in (10.0, 20.0, 30.0, 40.0):
        s = PulseSchedule.exp_pair(1.0, T)
        assert noise_leakage(s) == pytest.approx(noise_leakage_closed_form(s), rel=1e-8)
        c = PulseSchedule.const_exp_pair(1.0, T)
        assert noise_leakage(c) == pytest.approx(math.exp(-T), rel=1e-6)


def test_noise_leakage_monotone_in_duration():
    vals = [noise_leakage(PulseSchedule.exp_pair(1.0, T)) for T in (8.0, 11.0, 14.0, 17.0, 20.0)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    # the closed form crosses 1e-4 at kappa_max T = 2 ln(5000) ~ 17.03
    assert vals[2] == pytest.approx(4.5594e-4, rel=1e-4)
    assert noise_leakage(PulseSchedule.exp_pair(1.0, 17.1)) < 1e-4 < noise_leakage(PulseSchedule.exp_pair(1.0, 16.9))


def test_clamp_leakage_scales_with_cutoff():
    small = clamp_leakage(PulseSchedule.const_exp_pair(1.0, 20.0, cutoff_eps=1e-4))
    large = clamp_leakage(CONST)
    assert 0 < small < large
    assert clamp_leakage(EXP) == 0.0


def test_closed_form_needs_analytic_family():
    tab = PulseSchedule.tabulated([0, 1, 2, 3], [0.1, 1.0, 1.0, 0.1])
    with pytest.raises(ConfigurationError):
        noise_leakage_closed_form(tab)


def test_load_tabulated(tmp_path):
    path = tmp_path / "pulse.txt"
    path.write_text("# t kappa\n0 0.0\n1 0.5\n2 1.0\n3 0.5\n")
    s = load_tabulated(path)
    assert s.t_i == 0 and s.t_f == 3 and s.kappa_max == 1.0
    assert float(kappa(1, 1.5, s)) == pytest.approx(0.75)
    assert float(kappa(2, 1.5, s)) == pytest.approx(0.75)
    path.write_text("0 1 2\n1 2 3\n")
    with pytest.raises(ConfigurationError):
        load_tabulated(path)


def test_schedule_dict_round_trip():
    for s in (EXP.with_delta_tau(0.05), CONST):
        assert PulseSchedule.from_dict(s.to_dict()) == s
