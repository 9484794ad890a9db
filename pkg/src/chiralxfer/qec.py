"""Bosonic codes protecting the transfer against photon loss and gain.

A cavity code stores the qubit as ``c_g |+> + c_e |->``. Loss ``a`` (and, for
the mod-3 code, gain ``a^dag``) moves the code words into a different
photon-number class, which is detected by measuring ``n mod 2`` or
``n mod 3``. For outcome ``p`` the expected post-transfer code words are::

    |pm^(p)>  propto  K_p (-cos theta)^n |pm>,   K_0 = 1, K_{-1} = a, K_{+1} = a^dag

where ``(-1)^n`` is the sign picked up by the ideal transfer and ``cos^n``
the deterministic amplitude damping of an ``n``-photon component under loss
``P = sin^2 theta``. Recovery maps the (orthonormalized) targets of each
outcome back onto the qubit basis.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from . import fock
from .errors import ConfigurationError, InvalidParameterError
from .fock import DensityMatrix, SpaceLayout, StateVector


class CodeKind(str, enum.Enum):
    NONE = "none"
    BINOMIAL_PARITY = "binomial_parity"
    BINOMIAL_MOD3 = "binomial_mod3"
    CAT = "cat"


_MIN_CUTOFF = {CodeKind.NONE: 2, CodeKind.BINOMIAL_PARITY: 5, CodeKind.BINOMIAL_MOD3: 7}
_DEFAULT_CUTOFF = {CodeKind.NONE: 2, CodeKind.BINOMIAL_PARITY: 7, CodeKind.BINOMIAL_MOD3: 9}


@dataclass(frozen=True)
class CodeSpec:
    """Logical basis of a bosonic code; ``fock_cutoff=None`` picks the default."""

    kind: CodeKind = CodeKind.BINOMIAL_PARITY
    alpha: complex = math.sqrt(2)
    fock_cutoff: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", CodeKind(self.kind))
        if self.fock_cutoff is not None and self.fock_cutoff < self.min_cutoff:
            raise ConfigurationError(
                f"{self.kind.value} code needs a cutoff of at least {self.min_cutoff}, got {self.fock_cutoff}"
            )

    @property
    def min_cutoff(self) -> int:
        if self.kind is CodeKind.CAT:
            return fock.coherent_cutoff(self.alpha)
        return _MIN_CUTOFF[self.kind]

    @property
    def cutoff(self) -> int:
        if self.fock_cutoff is not None:
            return int(self.fock_cutoff)
        if self.kind is CodeKind.CAT:
            return fock.coherent_cutoff(self.alpha)
        return _DEFAULT_CUTOFF[self.kind]

    @property
    def modulus(self) -> int:
        return 3 if self.kind is CodeKind.BINOMIAL_MOD3 else 2

    @property
    def outcomes(self) -> tuple[int, ...]:
        if self.kind is CodeKind.NONE:
            return (0,)
        return (0, -1, 1) if self.kind is CodeKind.BINOMIAL_MOD3 else (0, -1)

    def with_cutoff(self, d: int) -> "CodeSpec":
        return CodeSpec(self.kind, self.alpha, d)


def _coherent_unnormalized(alpha: complex, d: int) -> np.ndarray:
    n = np.arange(d)
    if alpha == 0:
        v = np.zeros(d, complex)
        v[0] = 1
        return v
    return np.exp(n * np.log(complex(alpha)) - 0.5 * gammaln(n + 1))


def code_words(code: CodeSpec) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(|+>, |->)`` as Fock-basis vectors of length ``code.cutoff``.

    Cat words are ``|alpha> + |-alpha>`` and ``|i alpha> + |-i alpha>``,
    normalized numerically in the truncated space.
    """
    d = code.cutoff
    plus = np.zeros(d, complex)
    minus = np.zeros(d, complex)
    r2 = math.sqrt(2)
    if code.kind is CodeKind.NONE:
        plus[0], minus[1] = 1, 1
    elif code.kind is CodeKind.BINOMIAL_PARITY:
        plus[[0, 2, 4]] = [0.5, r2 / 2, 0.5]
        minus[[0, 2, 4]] = [0.5, -r2 / 2, 0.5]
    elif code.kind is CodeKind.BINOMIAL_MOD3:
        plus[[0, 3, 6]] = [0.5, r2 / 2, 0.5]
        minus[[0, 3, 6]] = [0.5, -r2 / 2, 0.5]
    else:
        a = complex(code.alpha)
        plus = _coherent_unnormalized(a, d) + _coherent_unnormalized(-a, d)
        minus = _coherent_unnormalized(1j * a, d) + _coherent_unnormalized(-1j * a, d)
        plus /= np.linalg.norm(plus)
        minus /= np.linalg.norm(minus)
    return plus, minus


def encode(c_g: complex, c_e: complex, code: CodeSpec) -> StateVector:
    """Cavity state ``c_g |+> + c_e |->``."""
    if abs(abs(c_g) ** 2 + abs(c_e) ** 2 - 1) > 1e-9:
        raise InvalidParameterError("qubit amplitudes must be normalized")
    plus, minus = code_words(code)
    return StateVector(fock.single(code.cutoff, "cavity"), c_g * plus + c_e * minus)


# ------------------------------------------------------------- channels


def loss_kraus_operators(d: int, P: float) -> list[np.ndarray]:
    """Kraus ladder ``A_k = sqrt(P^k/k!) (1-P)^{n/2} a^k`` of pure loss."""
    if not 0 <= P < 1:
        raise InvalidParameterError("loss probability must lie in [0, 1)")
    if P == 0:
        return [np.eye(d)]
    n = np.arange(d)
    a = fock.annihilation(d).matrix
    damp = np.diag((1 - P) ** (n / 2))
    ops, ak = [], np.eye(d)
    for k in range(d):
        ops.append(math.sqrt(P**k / math.factorial(k)) * damp @ ak)
        ak = a @ ak
    return ops


def _on_slot(op: np.ndarray, slot: str, layout: SpaceLayout) -> np.ndarray:
    return fock.embed(fock.LinearOperator(fock.single(op.shape[0]), op), slot, layout).matrix


def loss_channel_kraus(rho: DensityMatrix, P: float, slot: str | None = None) -> DensityMatrix:
    """Apply pure loss with transmissivity ``1 - P`` to subsystem ``slot``."""
    slot = rho.layout.labels[0] if slot is None else slot
    d = rho.layout.dim(slot)
    out = np.zeros_like(rho.matrix)
    for k in loss_kraus_operators(d, P):
        K = _on_slot(k, slot, rho.layout)
        out += K @ rho.matrix @ K.conj().T
    return DensityMatrix(rho.layout, out)


def transfer_sign(rho: DensityMatrix, slot: str | None = None) -> DensityMatrix:
    """Apply ``(-1)^n``, the phase of the ideal operator mapping ``a_1 -> -a_2``."""
    slot = rho.layout.labels[0] if slot is None else slot
    d = rho.layout.dim(slot)
    u = _on_slot(np.diag((-1.0) ** np.arange(d)), slot, rho.layout)
    return DensityMatrix(rho.layout, u @ rho.matrix @ u)


# ------------------------------------------------------------ syndromes


@dataclass
class SyndromeOutcome:
    p: int
    probability: float
    post_state: DensityMatrix | None


def sector_projector(code: CodeSpec, p: int, d: int) -> np.ndarray:
    """Diagonal projector onto the photon-number class of outcome ``p``."""
    if p not in code.outcomes:
        raise InvalidParameterError(f"outcome {p} not valid for {code.kind.value}")
    if code.kind is CodeKind.NONE:
        return np.eye(d)
    m = code.modulus
    n = np.arange(d)
    return np.diag((n % m == p % m).astype(float))


def syndrome_measure(rho: DensityMatrix, code: CodeSpec, slot: str | None = None) -> list[SyndromeOutcome]:
    """Projective measurement of ``n mod 2`` (parity, cat) or ``n mod 3``."""
    slot = rho.layout.labels[0] if slot is None else slot
    d = rho.layout.dim(slot)
    res = []
    for p in code.outcomes:
        proj = _on_slot(sector_projector(code, p, d), slot, rho.layout)
        m = proj @ rho.matrix @ proj
        prob = float(np.real(np.trace(m)))
        post = DensityMatrix(rho.layout, m / prob) if prob > 1e-300 else None
        res.append(SyndromeOutcome(p, prob, post))
    return res


# ------------------------------------------------------------- recovery


def _ladder(p: int, d: int) -> np.ndarray:
    a = fock.annihilation(d).matrix
    return {0: np.eye(d), -1: a, 1: a.conj().T}[p]


def recovery_targets(code: CodeSpec, theta: float, p: int, d: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Normalized ``(|+^(p)>, |-^(p)>)`` expected after transfer and outcome ``p``."""
    if p not in code.outcomes:
        raise InvalidParameterError(f"outcome {p} not valid for {code.kind.value}")
    d = code.cutoff if d is None else d
    words = code_words(code.with_cutoff(d))
    decay = np.diag((-math.cos(theta)) ** np.arange(d))
    k = _ladder(p, d)
    out = []
    for w in words:
        v = k @ decay @ w
        nrm = np.linalg.norm(v)
        out.append(v / nrm if nrm > 0 else v)
    return out[0], out[1]


def orthonormalize(u: np.ndarray, v: np.ndarray, method: str = "gram_schmidt") -> np.ndarray:
    """Columns spanning ``{u, v}``; Gram-Schmidt keeps ``u`` fixed."""
    if method == "lowdin":
        m = np.column_stack([u, v])
        s = m.conj().T @ m
        w, vec = np.linalg.eigh(s)
        return m @ (vec / np.sqrt(w)) @ vec.conj().T
    if method != "gram_schmidt":
        raise ConfigurationError(f"unknown orthonormalization {method!r}")
    q0 = u / np.linalg.norm(u)
    q1 = v - q0 * (q0.conj() @ v)
    return np.column_stack([q0, q1 / np.linalg.norm(q1)])


def recover(rho2: DensityMatrix, code: CodeSpec, theta: float, method: str = "gram_schmidt") -> np.ndarray:
    """Outcome-summed recovered qubit-ancilla state (4x4, trace <= 1).

    Weight that ends outside the two recovery targets of its outcome is
    dropped, which counts it as a failed transfer when scored.
    """
    if len(rho2.layout.dims) != 2 or rho2.layout.dims[1] != 2:
        raise ConfigurationError("recovery expects a (cavity, ancilla) state")
    d = rho2.layout.dims[0]
    sigma = np.zeros((4, 4), complex)
    for p in code.outcomes:
        tp, tm = recovery_targets(code, theta, p, d)
        if np.linalg.norm(tp) == 0 or np.linalg.norm(tm) == 0:
            continue
        q = orthonormalize(tp, tm, method)
        r = q.conj().T @ sector_projector(code, p, d)  # 2 x d
        rf = np.kron(r, np.eye(2))
        sigma += rf @ rho2.matrix @ rf.conj().T
    return sigma


BELL = np.array([1, 0, 0, 1], complex) / math.sqrt(2)


def decode_and_score(rho2: DensityMatrix, code: CodeSpec, theta: float, method: str = "gram_schmidt") -> float:
    """Corrected transfer fidelity against ``(|g>|0>_a + |e>|1>_a)/sqrt 2``.

    The ``(-1)^n`` transfer phase is already part of the recovery targets, so
    the reference is the plain Bell state.
    """
    sigma = recover(rho2, code, theta, method)
    return float(np.clip(np.real(BELL.conj() @ sigma @ BELL), 0.0, 1.0))


# ----------------------------------------------------------- pipelines


def encoded_bell(code: CodeSpec, label: str = "node2") -> DensityMatrix:
    """``(|+>|0>_a + |->|1>_a)/sqrt 2`` on (cavity, ancilla)."""
    plus, minus = code_words(code)
    psi = (np.kron(plus, [1, 0]) + np.kron(minus, [0, 1])) / math.sqrt(2)
    lay = SpaceLayout(((label, code.cutoff), ("anc", 2)))
    return StateVector(lay, psi).to_density()


def theta_from_loss(P: float) -> float:
    """Beamsplitter angle with ``sin^2 theta = P``."""
    if not 0 <= P < 1:
        raise InvalidParameterError("loss probability must lie in [0, 1)")
    return math.asin(math.sqrt(P))


def kraus_transfer(code: CodeSpec, P: float) -> DensityMatrix:
    """Output of the ideal transfer followed by pure loss ``P`` (long-pulse limit)."""
    rho = transfer_sign(encoded_bell(code))
    return loss_channel_kraus(rho, P)


def qec_fidelity(code: CodeSpec, P: float, method: str = "gram_schmidt") -> float:
    """Corrected fidelity of the lossy transfer in the Kraus model."""
    return decode_and_score(kraus_transfer(code, P), code, theta_from_loss(P), method)


def master_transfer(code: CodeSpec, P: float, n_th: float = 0.0, n_th_prime: float = 0.0,
                    cutoff: int | None = None, pulses=None, dt: float | None = None) -> DensityMatrix:
    """Output (node 2, ancilla) of the lossy cascaded master equation.

    The waveguide loss is the beamsplitter dilation with ``sin^2 theta = P``
    and reservoir occupation ``n_th_prime``; ``n_th`` is injected at the input.
    """
    from . import master

    d = code.cutoff if cutoff is None else cutoff
    kw = {} if pulses is None else {"pulses": pulses}
    net = master.cavity_network(n_th, cutoff=d, theta=theta_from_loss(P), n_th_prime=n_th_prime, **kw)
    words = code_words(code.with_cutoff(d))
    res = master.run_transfer(net, dt=dt, logical=words)
    return res.rho_out


def qec_fidelity_master(code: CodeSpec, P: float, n_th: float = 0.0, n_th_prime: float = 0.0,
                        cutoff: int | None = None, method: str = "gram_schmidt", **kw) -> float:
    rho = master_transfer(code, P, n_th, n_th_prime, cutoff, **kw)
    return decode_and_score(rho, code, theta_from_loss(P), method)
