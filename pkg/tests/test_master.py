import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chiralxfer import fock
from chiralxfer.errors import ConfigurationError, InvalidParameterError
from chiralxfer.fock import DensityMatrix, StateVector
from chiralxfer.master import (
    NetworkSpec,
    NodeKind,
    NodeSpec,
    beamsplitter_expected,
    beamsplitter_network,
    build_generators,
    cavity_network,
    default_cutoff,
    ensemble_network,
    evolve,
    evolve_dense,
    four_node_network,
    lindblad_rhs,
    network_layout,
    qst_fidelity,
    qubit_direct_network,
    run_transfer,
)
from chiralxfer.pulses import PulseSchedule, kappa


def _vacuum(net):
    lay = network_layout(net)
    return StateVector(lay, fock.kron_all([np.eye(d)[0] for d in lay.dims])).to_density()


def _random_rho(dim, seed):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    r = m @ m.conj().T
    return r / np.trace(r)


def test_default_cutoff():
    assert default_cutoff(0.0) == 2
    assert default_cutoff(0.5) == 17
    assert default_cutoff(0.5, tol=2e-6) == 12
    r = 0.5 / 1.5
    assert r ** default_cutoff(0.5) < 2e-8


def test_default_cutoff_is_converged():
    # reference computed at cutoff 20, whose own truncation error is about 1e-8
    f = qst_fidelity(cavity_network(0.5))
    assert f == pytest.approx(0.999954583, abs=2e-6)


def test_ideal_channel_jump():
    net = cavity_network(0.3, cutoff=3, include_ancilla=False)
    t = -1.3
    gen = build_generators(net, t)
    lay = gen.layout
    a1 = fock.embed(fock.annihilation(3), "node1", lay).matrix
    a2 = fock.embed(fock.annihilation(3), "node2", lay).matrix
    s = net.pulses
    expect = math.sqrt(kappa(1, t, s)) * a1 + math.sqrt(kappa(2, t, s)) * a2
    (e, n_th), = gen.channel_jumps
    assert n_th == 0.3
    np.testing.assert_allclose(e.matrix, expect, atol=1e-14)


def test_left_channel_carries_mirror_phase():
    net = cavity_network(0.0, cutoff=2, include_ancilla=False, beta=0.9, phi=math.pi / 2)
    gen = build_generators(net, 0.0)
    lay = gen.layout
    a2 = fock.embed(fock.annihilation(2), "node2", lay).matrix
    left = gen.channel_jumps[1][0].matrix
    # the node-2 part of the left jump is sqrt(0.1 * kappa_2) e^{2i phi} a_2 = -sqrt(0.1) a_2
    a1 = fock.embed(fock.annihilation(2), "node1", lay).matrix
    node2_part = left - math.sqrt(0.1) * a1
    np.testing.assert_allclose(node2_part, -math.sqrt(0.1) * a2, atol=1e-14)


def test_vacuum_is_dark():
    net = cavity_network(0.0, cutoff=3)
    gen = build_generators(net, 0.4)
    assert np.allclose(lindblad_rhs(_vacuum(net), 0.4, gen), 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1), st.floats(min_value=-9.0, max_value=9.0))
def test_rhs_is_traceless_and_hermitian(seed, t):
    net = cavity_network(0.4, cutoff=3, beta=0.8, phi=0.3)
    gen = build_generators(net, t)
    rho = _random_rho(gen.layout.total_dim, seed)
    d = lindblad_rhs(rho, t, gen)
    assert abs(np.trace(d)) < 1e-12
    np.testing.assert_allclose(d, d.conj().T, atol=1e-12)


def test_thermal_relaxation_of_upstream_cavity():
    # node 1 with constant kappa sees only the injected thermal field
    n_th, T = 0.2, 3.0
    net = cavity_network(n_th, cutoff=10, include_ancilla=False,
                         pulses=PulseSchedule.const_exp_pair(1.0, T))
    rho = evolve(_vacuum(net), net)
    n1 = fock.embed(fock.number(10), "node1", rho.layout)
    got = fock.expectation(n1, rho).real
    assert got == pytest.approx(n_th * (1 - math.exp(-T)), abs=1e-6)


def test_identity_evolution_without_coupling():
    # a tabulated pulse that is zero everywhere leaves the state untouched
    tab = PulseSchedule(
        "custom_tabulated", 1.0, 0.0, 1.0, table_t=(0.0, 0.5, 1.0), table_k=(0.0, 0.0, 0.0)
    )
    net = NetworkSpec(pulses=tab)
    rho0 = DensityMatrix(network_layout(net), _random_rho(8, 3))
    rho = evolve(rho0, net)
    np.testing.assert_allclose(rho.matrix, rho0.matrix, atol=1e-12)


def test_single_photon_reaches_node_two():
    net = cavity_network(0.0, cutoff=2, include_ancilla=False)
    lay = network_layout(net)
    rho0 = StateVector(lay, fock.kron_all([np.eye(2)[1], np.eye(2)[0]])).to_density()
    rho = evolve(rho0, net)
    p2 = fock.expectation(fock.embed(fock.number(2), "node2", lay), rho).real
    assert p2 >= 0.999


def test_rk4_step_halving():
    net = cavity_network(0.0)
    f1 = qst_fidelity(net, dt=0.01)
    f2 = qst_fidelity(net, dt=0.005)
    assert abs(f1 - f2) < 1e-7


def test_compiled_matches_dense():
    net = cavity_network(0.5, cutoff=3, beta=0.9, phi=0.4, pulses=PulseSchedule.exp_pair(1.0, 8.0))
    rho0 = DensityMatrix(network_layout(net), _random_rho(18, 7))
    fast = evolve(rho0, net, dt=0.01)
    slow = evolve_dense(rho0, net, dt=0.01)
    np.testing.assert_allclose(fast.matrix, slow.matrix, atol=1e-9)


def test_chain_is_robust_to_noise():
    f0 = qst_fidelity(cavity_network(0.0))
    f1 = qst_fidelity(cavity_network(1.0))
    assert f1 >= 0.99
    assert abs(f1 - f0) <= 1e-3


def test_bare_qubits_degrade_with_noise():
    f0 = qst_fidelity(qubit_direct_network(0.0))
    f = qst_fidelity(qubit_direct_network(0.25))
    assert f < f0 - 1e-2


def test_single_atom_ensemble_is_a_qubit():
    ens = ensemble_network(1, n_th=0.2, include_ancilla=False)
    qub = qubit_direct_network(0.2, include_ancilla=False)
    g_e, g_q = build_generators(ens, -0.7), build_generators(qub, -0.7)
    for (e1, n1), (e2, n2) in zip(g_e.channel_jumps, g_q.channel_jumps):
        assert n1 == n2
        np.testing.assert_allclose(e1.matrix, e2.matrix, atol=1e-14)


@pytest.mark.parametrize("n_atoms", [2, 3])
def test_dicke_ladder_matches_product_space(n_atoms):
    # build sum_k sigma^-_k / sqrt(N) on the full 2^N space and restrict it to
    # the symmetric Dicke states |n> (n excitations)
    sm = fock.sigma_minus().matrix
    full = sum(fock.kron_all([sm if k == j else np.eye(2) for k in range(n_atoms)]) for j in range(n_atoms))
    full = full / math.sqrt(n_atoms)
    dicke = []
    for n in range(n_atoms + 1):
        v = np.zeros(2 ** n_atoms)
        for idx in range(2 ** n_atoms):
            # basis index bit = 1 means the atom is excited (sigma^- maps |e> = [0,1] to |g>)
            if bin(idx).count("1") == n:
                v[idx] = 1.0
        dicke.append(v / np.linalg.norm(v))
    basis = np.array(dicke).T
    reduced = basis.T @ full @ basis
    np.testing.assert_allclose(reduced, fock.collective_lowering(n_atoms).matrix, atol=1e-14)


def test_transfer_result_output_layout():
    res = run_transfer(cavity_network(0.0))
    assert res.rho_out.layout.labels == ("node2", "anc")
    assert res.fidelity == pytest.approx(0.99997730, abs=1e-7)


@pytest.mark.parametrize("theta, p2, p4", [(0.0, 1.0, 0.0), (math.pi / 2, 0.0, 1.0), (math.pi / 4, 0.5, 0.5)])
def test_beamsplitter_populations(theta, p2, p4):
    net = four_node_network(theta, pulses=PulseSchedule.exp_pair(1.0, 30.0))
    rho = beamsplitter_network(net)
    lay = rho.layout
    n = fock.number(2)
    assert fock.expectation(fock.embed(n, "node2", lay), rho).real == pytest.approx(p2, abs=2e-3)
    assert fock.expectation(fock.embed(n, "node4", lay), rho).real == pytest.approx(p4, abs=2e-3)
    psi = beamsplitter_expected(theta)
    assert fock.pure_fidelity(rho, psi) >= 0.998


def test_network_validation():
    with pytest.raises(InvalidParameterError):
        cavity_network(0.0, beta=1.2)
    with pytest.raises(InvalidParameterError):
        NodeSpec(NodeKind.CAVITY, 1)
    with pytest.raises(ConfigurationError):
        NetworkSpec(nodes=(NodeSpec(),) * 3)
    with pytest.raises(InvalidParameterError):
        evolve(_vacuum(cavity_network(0.0)), cavity_network(0.0), dt=0.05)
