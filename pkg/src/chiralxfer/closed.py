"""Two cavities joined by a finite multimode waveguide (closed Hamiltonian model).

The waveguide is a set of discrete modes ``b_n`` with frequencies ``n*delta``.
Cavity ``j`` couples to mode ``n`` with ``g_j(t) (-1)^{(j-1) n}``, and the
coupling follows the transfer pulses through ``kappa_j = 2 pi g_j^2 / delta``.
A photon needs ``tau = pi / delta`` to cross the waveguide, so the node-2 pulse
runs on a clock delayed by ``tau``.

Total excitation number commutes with the Hamiltonian, so the state lives on a
joint basis of product Fock states whose total photon number is capped. The
ancilla that scores the transfer never interacts and is carried as one extra
tensor factor.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, IntegrationError, InvalidDimensionError, InvalidParameterError
from .fock import DensityMatrix, LinearOperator, SpaceLayout, StateVector, coherent_state, single, uhlmann_fidelity
from .master import ideal_target
from .pulses import PulseSchedule, kappa

log = logging.getLogger(__name__)


def g_from_kappa(kappa_value, delta: float):
    """Coupling rate ``g = sqrt(delta * kappa / (2 pi))``."""
    k = np.asarray(kappa_value, float)
    if np.any(k < 0):
        raise InvalidParameterError("kappa must be non-negative")
    if not delta > 0:
        raise InvalidParameterError("delta must be positive")
    g = np.sqrt(delta * k / (2.0 * np.pi))
    return float(g) if np.ndim(g) == 0 else g


def mode_cutoff(alpha: complex) -> int:
    """Per-mode Fock dimension ``ceil(|alpha|^2 + 4|alpha| + 3)``."""
    r = abs(alpha)
    return int(math.ceil(r * r + 4 * r + 3))


@dataclass(frozen=True)
class ClosedSpec:
    """Parameters of the closed two-cavity waveguide model.

    Attributes
    ----------
    delta : float
        Mode spacing; sets the unit of rate.
    n_modes : int
        Odd number of waveguide modes, centred on the resonant mode ``n = 0``.
    chi : float
        Kerr rate applied to both cavities.
    alpha : complex
        Coherent amplitude initially in every waveguide mode.
    pulses : PulseSchedule or None
        Transfer pulses; the default is an ``exp_pair`` with
        ``kappa_max = 0.3 delta`` and ``kappa_max T = 20``.
    cavity_cutoff, mode_dim : int or None
        Fock dimensions of each cavity and each mode, both defaulting to
        :func:`mode_cutoff`. The cavities absorb background photons while the
        couplings are on, so they need the same headroom as the modes.
    excitation_cap : int or None
        Largest total photon number kept in the joint basis. The default keeps
        the coherent background up to five standard deviations.
    """

    delta: float = 1.0
    n_modes: int = 3
    chi: float = 0.0
    alpha: complex = 0.0
    pulses: PulseSchedule | None = None
    cavity_cutoff: int | None = None
    mode_dim: int | None = None
    excitation_cap: int | None = None

    def __post_init__(self):
        if not self.delta > 0:
            raise InvalidParameterError("delta must be positive")
        if self.n_modes < 1 or self.n_modes % 2 == 0:
            raise InvalidParameterError(f"n_modes must be a positive odd integer, got {self.n_modes}")
        if self.chi < 0:
            raise InvalidParameterError("chi must be non-negative")
        if self.cavity_cutoff is None:
            object.__setattr__(self, "cavity_cutoff", mode_cutoff(self.alpha))
        if self.cavity_cutoff < 2:
            raise InvalidDimensionError("cavity cutoff must be at least 2")
        if self.mode_dim is not None and self.mode_dim < 2:
            raise InvalidDimensionError("mode cutoff must be at least 2")
        if self.pulses is None:
            object.__setattr__(self, "pulses", PulseSchedule.exp_pair(0.3 * self.delta))

    @property
    def mode_numbers(self) -> np.ndarray:
        h = (self.n_modes - 1) // 2
        return np.arange(-h, h + 1)

    @property
    def modes_dim(self) -> int:
        return mode_cutoff(self.alpha) if self.mode_dim is None else self.mode_dim

    @property
    def cap(self) -> int:
        if self.excitation_cap is not None:
            return self.excitation_cap
        mean = self.n_modes * abs(self.alpha) ** 2
        return 1 + int(math.ceil(mean + 5.0 * math.sqrt(mean)))

    @property
    def tau(self) -> float:
        """Transit time ``pi / delta`` across the waveguide."""
        return math.pi / self.delta

    @property
    def t_i(self) -> float:
        return self.pulses.t_i

    @property
    def t_f(self) -> float:
        return self.pulses.t_f + self.tau

    def replace(self, **kw) -> "ClosedSpec":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        if "alpha" in kw and "cavity_cutoff" not in kw:
            d["cavity_cutoff"] = None
        d.update(kw)
        return ClosedSpec(**d)


@dataclass(frozen=True)
class CappedBasis:
    """Product Fock states of ``(cav1, modes..., cav2, anc)`` below a photon cap.

    ``states`` has one row per basis vector holding the occupation of each
    factor; the ancilla column does not count towards the cap.
    """

    labels: tuple[str, ...]
    dims: tuple[int, ...]
    states: np.ndarray
    index: dict = field(repr=False, compare=False)

    @property
    def size(self) -> int:
        return self.states.shape[0]


def capped_basis(spec: ClosedSpec) -> CappedBasis:
    labels = ("cav1",) + tuple(f"b{n}" for n in spec.mode_numbers) + ("cav2", "anc")
    dims = (spec.cavity_cutoff,) + (spec.modes_dim,) * spec.n_modes + (spec.cavity_cutoff, 2)
    rows = [occ for occ in itertools.product(*(range(d) for d in dims)) if sum(occ[:-1]) <= spec.cap]
    states = np.array(rows, dtype=np.int64)
    index = {tuple(r): i for i, r in enumerate(rows)}
    return CappedBasis(labels, dims, states, index)


def _lowering(basis: CappedBasis, slot: int) -> sp.csr_matrix:
    """Annihilation operator of factor ``slot`` restricted to the capped basis."""
    rows, cols, vals = [], [], []
    for j, occ in enumerate(basis.states):
        n = occ[slot]
        if n == 0:
            continue
        target = occ.copy()
        target[slot] -= 1
        rows.append(basis.index[tuple(target)])
        cols.append(j)
        vals.append(math.sqrt(n))
    return sp.csr_matrix((vals, (rows, cols)), shape=(basis.size, basis.size), dtype=complex)


@dataclass(frozen=True)
class ClosedHamiltonian:
    """Time-dependent Hamiltonian ``H0 + g1(t) V1 + g2(t) V2`` on a capped basis.

    ``h0`` is the diagonal of the free part (mode energies and Kerr terms);
    ``v1`` and ``v2`` are the Hermitian coupling operators of each cavity.
    """

    spec: ClosedSpec
    basis: CappedBasis
    h0: np.ndarray
    v1: sp.csr_matrix
    v2: sp.csr_matrix

    def couplings(self, t: float) -> tuple[float, float]:
        s = self.spec
        k1 = kappa(1, t, s.pulses) if s.pulses.t_i <= t <= s.pulses.t_f else 0.0
        t2 = t - s.tau
        k2 = kappa(2, t2, s.pulses) if s.pulses.t_i <= t2 <= s.pulses.t_f else 0.0
        return g_from_kappa(k1, s.delta), g_from_kappa(k2, s.delta)

    def at(self, t: float) -> sp.csr_matrix:
        g1, g2 = self.couplings(t)
        return sp.diags(self.h0) + g1 * self.v1 + g2 * self.v2

    def excitation_number(self) -> np.ndarray:
        return self.basis.states[:, :-1].sum(axis=1).astype(float)


def closed_hamiltonian(spec: ClosedSpec) -> ClosedHamiltonian:
    basis = capped_basis(spec)
    occ = basis.states
    cav1, cav2 = 0, spec.n_modes + 1
    h0 = np.zeros(basis.size)
    for i, n in enumerate(spec.mode_numbers):
        h0 += n * spec.delta * occ[:, 1 + i]
    for c in (cav1, cav2):
        h0 -= spec.chi * occ[:, c] * (occ[:, c] - 1)
    a1 = _lowering(basis, cav1)
    a2 = _lowering(basis, cav2)
    c1 = sp.csr_matrix((basis.size, basis.size), dtype=complex)
    c2 = sp.csr_matrix((basis.size, basis.size), dtype=complex)
    for i, n in enumerate(spec.mode_numbers):
        bdag = _lowering(basis, 1 + i).getH()
        c1 = c1 + bdag @ a1
        c2 = c2 + (-1.0) ** int(n) * (bdag @ a2)
    v1 = (c1 + c1.getH()).tocsr()
    v2 = (c2 + c2.getH()).tocsr()
    return ClosedHamiltonian(spec, basis, h0, v1, v2)


def build_hamiltonian(spec: ClosedSpec, t: float, ham: ClosedHamiltonian | None = None) -> LinearOperator:
    """Dense Hamiltonian at time ``t`` on the capped basis.

    Intended for inspection and tests on small bases; the integrator keeps the
    sparse pieces of :func:`closed_hamiltonian` instead.
    """
    ham = closed_hamiltonian(spec) if ham is None else ham
    if ham.basis.size > 4000:
        raise ConfigurationError(f"capped basis of size {ham.basis.size} is too large for a dense operator")
    return LinearOperator(single(ham.basis.size, "capped"), ham.at(t).toarray())


def initial_state(spec: ClosedSpec, basis: CappedBasis | None = None) -> StateVector:
    """``(|0>_1|0>_a + |1>_1|1>_a)/sqrt(2)`` times coherent modes times ``|0>_2``.

    The amplitude outside the capped basis is dropped and the state is
    renormalized; the discarded weight is stored in the diagnostics.
    """
    basis = capped_basis(spec) if basis is None else basis
    coh = coherent_state(spec.alpha, spec.modes_dim).amplitudes
    amps = np.zeros(basis.size, dtype=complex)
    m = spec.n_modes
    for j, occ in enumerate(basis.states):
        if occ[m + 1] != 0 or occ[0] != occ[-1] or occ[0] > 1:
            continue
        amps[j] = np.prod(coh[occ[1:m + 1]]) / math.sqrt(2.0)
    weight = float(np.vdot(amps, amps).real)
    return StateVector(single(basis.size, "capped"), amps / math.sqrt(weight), {"truncation_weight": 1.0 - weight})


def evolve_closed(spec: ClosedSpec, psi0: StateVector, dt: float | None = None,
                  ham: ClosedHamiltonian | None = None) -> StateVector:
    """Propagate ``psi0`` from ``t_i`` to ``t_f + tau`` with fixed-step RK4.

    The diagonal free part is removed exactly by working in its interaction
    picture, so RK4 only resolves the pulse-shaped couplings. The returned
    state is transformed back to the Schrodinger picture.

    Raises
    ------
    IntegrationError
        If the norm drifts by more than 1e-5.
    """
    dt = 0.01 / spec.delta if dt is None else dt
    if spec.delta * dt > 0.02 + 1e-12:
        raise ConfigurationError(f"delta*dt = {spec.delta * dt:.3g} exceeds 0.02")
    ham = closed_hamiltonian(spec) if ham is None else ham
    psi = np.asarray(psi0.amplitudes, dtype=complex)
    if psi.shape != (ham.basis.size,):
        raise InvalidDimensionError("initial state does not match the capped basis")
    norm0 = float(np.linalg.norm(psi))
    if abs(norm0 - 1.0) > 1e-8:
        raise InvalidParameterError(f"initial state norm {norm0} is not 1")

    n = max(1, int(math.ceil((spec.t_f - spec.t_i) / dt)))
    times = np.linspace(spec.t_i, spec.t_f, n + 1)
    h0 = ham.h0
    v1, v2 = ham.v1, ham.v2

    def rhs(t, y):
        g1, g2 = ham.couplings(t)
        if g1 == 0.0 and g2 == 0.0:
            return np.zeros_like(y)
        ph = np.exp(1j * h0 * (t - spec.t_i))
        x = ph.conj() * y
        return -1j * ph * (g1 * (v1 @ x) + g2 * (v2 @ x))

    y = psi.copy()
    for k in range(n):
        t, h = times[k], times[k + 1] - times[k]
        k1 = rhs(t, y)
        k2 = rhs(t + h / 2, y + h / 2 * k1)
        k3 = rhs(t + h / 2, y + h / 2 * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    drift = abs(float(np.linalg.norm(y)) - norm0)
    if drift > 1e-5:
        raise IntegrationError(f"norm drift {drift:.2e} exceeds 1e-5")
    y = np.exp(-1j * h0 * (spec.t_f - spec.t_i)) * y
    diag = dict(psi0.diagnostics)
    diag.update(norm_drift=drift, steps=n, basis_size=ham.basis.size)
    return StateVector(psi0.layout, y, diag)


def reduced_cavity2(psi: StateVector, basis: CappedBasis, cavity_cutoff: int) -> DensityMatrix:
    """Density matrix of ``(cav2, anc)`` after tracing out cavity 1 and the modes."""
    occ = basis.states
    c2 = occ[:, -2]
    anc = occ[:, -1]
    env = occ[:, :-2]
    keys = {}
    env_id = np.array([keys.setdefault(tuple(r), len(keys)) for r in env])
    d = cavity_cutoff * 2
    amp = np.zeros((len(keys), d), dtype=complex)
    amp[env_id, c2 * 2 + anc] = psi.amplitudes
    rho = amp.T @ amp.conj()
    layout = SpaceLayout.of(("node2", cavity_cutoff), ("anc", 2))
    return DensityMatrix(layout, rho, dict(psi.diagnostics))


def closed_fidelity(spec: ClosedSpec, dt: float | None = None) -> tuple[float, dict]:
    """Transfer fidelity of the ancilla-entangled qubit for one parameter point."""
    ham = closed_hamiltonian(spec)
    psi0 = initial_state(spec, ham.basis)
    psi = evolve_closed(spec, psi0, dt, ham)
    rho = reduced_cavity2(psi, ham.basis, spec.cavity_cutoff)
    target = ideal_target(spec.cavity_cutoff).to_density()
    f = uhlmann_fidelity(rho, DensityMatrix(rho.layout, target.matrix))
    diag = {k: psi.diagnostics[k] for k in ("norm_drift", "truncation_weight", "basis_size")}
    return f, diag


def closed_fidelity_sweep(spec: ClosedSpec, chi_grid, alpha_grid, dt: float | None = None) -> list[dict]:
    """Fidelity for every ``(chi, alpha)`` pair, alpha-major in grid order.

    ``chi_grid`` is given in units of ``kappa_max``.
    """
    chi_grid, alpha_grid = list(chi_grid), list(alpha_grid)
    if not chi_grid or not alpha_grid:
        raise ConfigurationError("chi and alpha grids must be non-empty")
    rows = []
    for alpha in alpha_grid:
        for chi in chi_grid:
            point = spec.replace(chi=float(chi) * spec.pulses.kappa_max, alpha=alpha)
            f, diag = closed_fidelity(point, dt)
            rows.append({"chi_over_kappa": float(chi), "alpha": alpha, "fidelity": f, **diag})
    return rows
