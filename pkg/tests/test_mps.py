import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chiralxfer.errors import ConfigurationError, InvalidParameterError
from chiralxfer.fock import number, thermal_populations
from chiralxfer.master import cavity_network, qst_fidelity
from chiralxfer.mps import (
    SiteRole,
    TimeGrid,
    apply_step,
    default_bin_dim,
    evolve_mps,
    gate_generator,
    init_thermal_mps,
    load_snapshot,
    mps_fidelity,
    move_site,
    node_generators,
    reduced_density,
    save_snapshot,
)
from chiralxfer.pulses import PulseSchedule

ZERO = PulseSchedule("custom_tabulated", 1.0, 0.0, 2.0, table_t=(0.0, 1.0, 2.0), table_k=(0.0, 0.0, 0.0))


def _mean_n(rho):
    d = rho.matrix.shape[0]
    return float(np.real(np.trace(number(d).matrix @ rho.matrix)))


def test_grid_validation():
    net = cavity_network(0.0)
    with pytest.raises(ConfigurationError):
        TimeGrid.for_network(net, M=100)
    g = TimeGrid.for_network(net, M=400, tau=0.26)
    assert g.l == 5 and g.steps == 405
    assert TimeGrid.for_network(net, M=400).l == 1
    with pytest.raises(InvalidParameterError):
        TimeGrid(0.1, 10, l=0)


def test_default_bin_dim_grows_with_noise():
    dims = [default_bin_dim(n) for n in (0.0, 0.1, 0.5, 1.0)]
    assert dims == sorted(dims) and dims[0] == 3


def test_vacuum_chain_is_a_product_state():
    net = cavity_network(0.0)
    grid = TimeGrid(0.05, 20)
    state = init_thermal_mps(grid, 0.0, net, entangle_ancilla=False)
    assert set(state.bond_dims) == {1}
    assert SiteRole.AUX_BIN not in state.site_roles
    state.check()


def test_thermal_bins_reduce_to_thermal_states():
    net = cavity_network(1.0, cutoff=4)
    grid = TimeGrid(0.05, 6, bin_dim=8)
    state = init_thermal_mps(grid, 1.0, net)
    for label in ("r1", "r4", "x2"):
        rho = reduced_density(state, [label])
        np.testing.assert_allclose(np.diag(rho.matrix).real, thermal_populations(1.0, 8), atol=1e-13)
    p = thermal_populations(1.0, 40)
    np.testing.assert_allclose(p[:5], 0.5 ** (np.arange(5) + 1), rtol=1e-10)
    pair = reduced_density(state, ["r2", "x2"]).matrix
    assert np.trace(pair @ pair).real == pytest.approx(1.0)


def test_beta_one_gate_has_no_left_bins():
    net = cavity_network(0.0)
    grid = TimeGrid.for_network(net, M=400)
    gens = node_generators(201, grid, net)
    assert all(len(bins) == 1 for _, bins in gens.values())
    gens = node_generators(201, grid, cavity_network(0.0, beta=0.9))
    assert all(len(bins) == 2 for _, bins in gens.values())


@settings(max_examples=15, deadline=None)
@given(st.integers(min_value=1, max_value=401), st.sampled_from([1.0, 0.8]))
def test_step_generator_is_anti_hermitian(p, beta):
    net = cavity_network(0.0, beta=beta)
    grid = TimeGrid.for_network(net, M=400)
    g = gate_generator(p, grid, net)
    np.testing.assert_allclose(g, -g.conj().T, atol=1e-14)


def test_zero_rates_give_identity_steps():
    net = cavity_network(0.5, cutoff=3, pulses=ZERO)
    grid = TimeGrid(0.05, 40, bin_dim=3)
    state = init_thermal_mps(grid, 0.5, net)
    before = reduced_density(state, ["node1", "anc"]).matrix
    bonds = list(state.bond_dims)
    evolve_mps(state, grid, net)
    np.testing.assert_allclose(reduced_density(state, ["node1", "anc"]).matrix, before, atol=1e-12)
    assert sorted(state.bond_dims) == sorted(bonds)


def test_single_step_emission_probability():
    # constant kappa_1 = 1; node 1 holds a photon with probability 1/2
    net = cavity_network(0.0, pulses=PulseSchedule.const_exp_pair(1.0, 2.0))
    for dt in (0.02, 0.01):
        grid = TimeGrid(dt, 50)
        state = init_thermal_mps(grid, 0.0, net)
        apply_step(state, 1, grid, net)
        p = _mean_n(reduced_density(state, ["r1"]))
        assert p == pytest.approx(0.5 * math.sin(math.sqrt(dt)) ** 2, rel=1e-12)
        assert p == pytest.approx(0.5 * dt, rel=dt)


def test_swaps_preserve_the_state():
    net = cavity_network(0.5, cutoff=3)
    grid = TimeGrid(0.1, 8, bin_dim=3)
    state = init_thermal_mps(grid, 0.5, net)
    for p in range(1, 4):
        apply_step(state, p, grid, net)
    before = reduced_density(state, ["node1", "node2", "anc"]).matrix
    move_site(state, "node1", len(state.labels) - 1)
    move_site(state, "node2", 0)
    after = reduced_density(state, ["node1", "node2", "anc"]).matrix
    np.testing.assert_allclose(after, before, atol=1e-10)


def test_photon_number_is_conserved_in_vacuum():
    net = cavity_network(0.0, pulses=PulseSchedule.exp_pair(1.0, 10.0))
    grid = TimeGrid.for_network(net, M=100)
    state = init_thermal_mps(grid, 0.0, net)
    evolve_mps(state, grid, net)
    total = sum(_mean_n(reduced_density(state, [lab])) for lab in state.labels if lab != "anc")
    assert total == pytest.approx(0.5, abs=1e-10)


def test_agrees_with_master_equation_without_noise():
    net = cavity_network(0.0)
    f_mps, diag = mps_fidelity(net)
    f_me = qst_fidelity(net)
    assert f_mps >= 0.999
    assert abs(f_mps - f_me) <= 1e-3
    assert diag["norm_drift"] < 1e-10


def test_snapshot_round_trip(tmp_path):
    net = cavity_network(0.5, cutoff=3)
    grid = TimeGrid(0.1, 6, bin_dim=3)
    state = init_thermal_mps(grid, 0.5, net)
    for p in range(1, 4):
        apply_step(state, p, grid, net)
    path = tmp_path / "chain.npz"
    save_snapshot(state, path)
    back = load_snapshot(path)
    assert back.labels == state.labels and back.bond_dims == state.bond_dims
    for a, b in zip(back.tensors, state.tensors):
        np.testing.assert_array_equal(a, b)
