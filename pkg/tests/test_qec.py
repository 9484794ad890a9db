import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chiralxfer import fock
from chiralxfer.errors import ConfigurationError, InvalidParameterError
from chiralxfer.fock import DensityMatrix, single
from chiralxfer.pulses import PulseSchedule
from chiralxfer.qec import (
    CodeKind,
    CodeSpec,
    code_words,
    encode,
    kraus_transfer,
    loss_channel_kraus,
    loss_kraus_operators,
    master_transfer,
    orthonormalize,
    qec_fidelity,
    recovery_targets,
    syndrome_measure,
)

PARITY = CodeSpec(CodeKind.BINOMIAL_PARITY)
MOD3 = CodeSpec(CodeKind.BINOMIAL_MOD3)
CAT = CodeSpec(CodeKind.CAT, math.sqrt(2))
NONE = CodeSpec(CodeKind.NONE)


def _dm(vec, label="cavity"):
    vec = np.asarray(vec, complex)
    return DensityMatrix(single(len(vec), label), np.outer(vec, vec.conj()))


def test_parity_code_words():
    plus = encode(1, 0, PARITY).amplitudes
    expect = np.zeros(PARITY.cutoff)
    expect[[0, 2, 4]] = [0.5, math.sqrt(2) / 2, 0.5]
    np.testing.assert_allclose(plus, expect)
    p, m = code_words(PARITY)
    n = np.arange(PARITY.cutoff)
    assert abs(np.vdot(p, m)) < 1e-15
    assert np.vdot(p, n * p).real == pytest.approx(2.0)
    assert np.vdot(m, n * m).real == pytest.approx(2.0)


def test_cat_words_overlap():
    p, m = code_words(CAT)
    assert abs(np.vdot(p, m)) > 1e-3


def test_cutoff_below_code_support_rejected():
    with pytest.raises(ConfigurationError):
        CodeSpec(CodeKind.BINOMIAL_MOD3, fock_cutoff=5)


@settings(max_examples=20, deadline=None)
@given(st.floats(min_value=0.0, max_value=0.9), st.integers(min_value=2, max_value=9))
def test_kraus_ladder_is_trace_preserving(P, d):
    total = sum(k.conj().T @ k for k in loss_kraus_operators(d, P))
    np.testing.assert_allclose(total, np.eye(d), atol=1e-12)


def test_loss_channel_examples():
    rho = _dm(fock.fock_state(1, 3).amplitudes)
    np.testing.assert_allclose(loss_channel_kraus(rho, 0.0).matrix, rho.matrix)
    out = loss_channel_kraus(rho, 0.3).matrix
    np.testing.assert_allclose(np.diag(out).real, [0.3, 0.7, 0.0], atol=1e-14)
    with pytest.raises(InvalidParameterError):
        loss_kraus_operators(3, 1.0)


@pytest.mark.parametrize("P", [0.05, 0.2, 0.35])
def test_parity_odd_weight_after_loss(P):
    # binomial counting: a Fock state |n> loses an odd number of photons with
    # probability (1 - (1 - 2P)^n) / 2
    c2 = np.array([0.25, 0.5, 0.25])
    expect = sum(w * (1 - (1 - 2 * P) ** n) / 2 for w, n in zip(c2, (0, 2, 4)))
    rho = loss_channel_kraus(encode(1, 0, PARITY).to_density(), P)
    odd = {o.p: o.probability for o in syndrome_measure(rho, PARITY)}[-1]
    assert odd == pytest.approx(expect, abs=1e-13)


def test_syndrome_examples():
    plus = encode(1, 0, PARITY).amplitudes
    outs = {o.p: o.probability for o in syndrome_measure(_dm(plus), PARITY)}
    assert outs[0] == pytest.approx(1.0) and outs[-1] == pytest.approx(0.0)
    a = fock.annihilation(PARITY.cutoff).matrix
    outs = {o.p: o.probability for o in syndrome_measure(_dm(a @ plus / np.linalg.norm(a @ plus)), PARITY)}
    assert outs[-1] == pytest.approx(1.0)
    plus3 = encode(1, 0, MOD3.with_cutoff(9)).amplitudes
    up = a9 = fock.creation(9).matrix @ plus3
    outs = {o.p: o.probability for o in syndrome_measure(_dm(up / np.linalg.norm(a9)), MOD3.with_cutoff(9))}
    assert outs[1] == pytest.approx(1.0)


def test_recovery_targets():
    p0 = recovery_targets(PARITY, 0.0, 0)
    words = code_words(PARITY)
    for got, want in zip(p0, words):
        np.testing.assert_allclose(got, want, atol=1e-14)
    plus, minus = recovery_targets(PARITY, 0.0, -1)
    ref = np.zeros(PARITY.cutoff)
    ref[[1, 3]] = 1 / math.sqrt(2)
    assert abs(abs(np.vdot(ref, plus)) - 1) < 1e-12
    ref[3] = -ref[3]
    assert abs(abs(np.vdot(ref, minus)) - 1) < 1e-12
    u, v = recovery_targets(PARITY, 0.4, -1)
    assert abs(np.vdot(u, v)) > 1e-3


@pytest.mark.parametrize("method", ["gram_schmidt", "lowdin"])
def test_orthonormalize(method):
    u, v = recovery_targets(PARITY, 0.5, -1)
    q = orthonormalize(u, v, method)
    np.testing.assert_allclose(q.conj().T @ q, np.eye(2), atol=1e-12)
    if method == "gram_schmidt":
        np.testing.assert_allclose(q[:, 0], u, atol=1e-14)


def test_lossless_transfer_is_perfect():
    for code in (NONE, PARITY, MOD3):
        assert qec_fidelity(code, 0.0) == pytest.approx(1.0, abs=1e-6)


def test_lossless_cat_limited_by_word_overlap():
    # the cat words overlap by ~0.11, so even a lossless transfer decodes imperfectly
    p, m = code_words(CAT)
    overlap = abs(np.vdot(p, m))
    f = qec_fidelity(CAT, 0.0)
    assert 1 - overlap**2 <= f < 1 - 1e-3


def test_parity_beats_no_code_at_moderate_loss():
    for P in (0.05, 0.1, 0.2):
        assert qec_fidelity(PARITY, P) > qec_fidelity(NONE, P)


def test_kraus_model_matches_master_equation():
    # with a long pulse the finite-pulse leakage is ~1e-9, so the two routes agree
    P = 0.1
    kraus = kraus_transfer(PARITY, P)
    me = master_transfer(PARITY, P, pulses=PulseSchedule.exp_pair(1.0, 40.0))
    np.testing.assert_allclose(me.matrix, kraus.matrix, atol=1e-8)
