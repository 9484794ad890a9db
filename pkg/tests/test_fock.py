import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chiralxfer.errors import InvalidDimensionError, InvalidParameterError
from chiralxfer.fock import (
    DensityMatrix,
    SpaceLayout,
    StateVector,
    annihilation,
    coherent_state,
    commutator,
    embed,
    expectation,
    fock_state,
    number,
    partial_trace,
    single,
    tensor,
    thermal_populations,
    thermal_state,
    uhlmann_fidelity,
)


def _ket(amps, label="mode"):
    amps = np.asarray(amps, complex)
    return StateVector(single(len(amps), label), amps)


def test_ladder_lowers_fock_states():
    a = annihilation(5)
    out = a @ fock_state(1, 5)
    np.testing.assert_allclose(out.amplitudes, fock_state(0, 5).amplitudes)
    out = a @ fock_state(4, 5)
    np.testing.assert_allclose(out.amplitudes, 2 * fock_state(3, 5).amplitudes)


def test_ladder_on_parity_codeword():
    psi = _ket([0.5, 0, np.sqrt(2) / 2, 0, 0.5])
    out = (annihilation(5) @ psi).normalized()
    np.testing.assert_allclose(out.amplitudes, np.array([0, 1, 0, 1, 0]) / np.sqrt(2), atol=1e-14)


def test_layout_rejects_bad_dimensions():
    with pytest.raises(InvalidDimensionError):
        SpaceLayout.of(("a", 2), ("a", 3))
    with pytest.raises(InvalidDimensionError):
        SpaceLayout.of(("a", 0))
    with pytest.raises(InvalidDimensionError):
        StateVector(single(3), np.ones(2))


def test_embed_on_two_cavities():
    lay = SpaceLayout.of(("c1", 4), ("c2", 4))
    a1 = embed(annihilation(4), "c1", lay)
    a2 = embed(annihilation(4), "c2", lay)
    vac = tensor(fock_state(0, 4, "c1"), fock_state(0, 4, "c2"))
    assert np.allclose((a1 @ vac).amplitudes, 0)
    assert np.allclose(commutator(a1.matrix, a2.matrix), 0)
    psi = tensor(fock_state(0, 4, "c1"), fock_state(3, 4, "c2"))
    assert expectation(embed(number(4), "c2", lay), psi).real == pytest.approx(3.0)


def test_partial_trace_product_and_bell():
    rho_a = thermal_state(0.3, 3, "A")
    rho_b = thermal_state(1.0, 4, "B")
    prod = tensor(rho_a, rho_b)
    np.testing.assert_allclose(partial_trace(prod, ["A"]).matrix, rho_a.matrix, atol=1e-14)

    bell = StateVector(SpaceLayout.of(("A", 2), ("B", 2)), np.array([1, 0, 0, 1]) / np.sqrt(2))
    np.testing.assert_allclose(partial_trace(bell.to_density(), ["A"]).matrix, np.eye(2) / 2, atol=1e-14)


def test_partial_trace_of_thermal_purification():
    n_th, d = 0.7, 30
    p = thermal_populations(n_th, d)
    amps = np.diag(np.sqrt(p)).ravel()
    pair = StateVector(SpaceLayout.of(("real", d), ("aux", d)), amps)
    red = partial_trace(pair.to_density(), ["real"])
    mean = np.real(np.trace(number(d).matrix @ red.matrix))
    assert mean == pytest.approx(n_th, abs=1e-5)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_partial_trace_preserves_trace(seed):
    rng = np.random.default_rng(seed)
    lay = SpaceLayout.of(("x", 2), ("y", 3), ("z", 2))
    m = rng.normal(size=(12, 12)) + 1j * rng.normal(size=(12, 12))
    rho = m @ m.conj().T
    rho /= np.trace(rho)
    for keep in (["x"], ["y", "z"], ["z", "x"]):
        red = partial_trace(DensityMatrix(lay, rho), keep)
        assert np.trace(red.matrix) == pytest.approx(1.0)
        red.validate()


def test_fidelity_examples():
    zero = fock_state(0, 2).to_density()
    one = fock_state(1, 2).to_density()
    mixed = DensityMatrix(single(2), np.eye(2) / 2)
    assert uhlmann_fidelity(zero, zero) == pytest.approx(1.0)
    assert uhlmann_fidelity(zero, one) == pytest.approx(0.0, abs=1e-12)
    assert uhlmann_fidelity(zero, mixed) == pytest.approx(0.5)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_fidelity_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    mats = []
    for _ in range(2):
        m = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        r = m @ m.conj().T
        mats.append(DensityMatrix(single(3), r / np.trace(r)))
    f = uhlmann_fidelity(*mats)
    assert 0.0 <= f <= 1.0
    assert f == pytest.approx(uhlmann_fidelity(mats[1], mats[0]), abs=1e-9)


def test_coherent_state_mean_photon_number():
    assert np.allclose(coherent_state(0, 5).amplitudes, fock_state(0, 5).amplitudes)
    psi = coherent_state(1.0, 12)
    assert expectation(number(12), psi).real == pytest.approx(1.0, abs=1e-6)
    psi = coherent_state(0.8 + 0.3j, 20)
    assert expectation(number(20), psi).real == pytest.approx(abs(0.8 + 0.3j) ** 2, abs=1e-8)


def test_thermal_state_populations():
    np.testing.assert_allclose(thermal_state(0.0, 4).matrix, fock_state(0, 4).to_density().matrix)
    p = thermal_populations(1.0, 40)
    np.testing.assert_allclose(p[:6], 0.5 ** (np.arange(6) + 1), rtol=1e-10)
    rho = thermal_state(0.5, 10)
    assert np.real(np.trace(number(10).matrix @ rho.matrix)) == pytest.approx(0.5, abs=2e-3)
    with pytest.raises(InvalidParameterError):
        thermal_populations(-0.1, 3)
