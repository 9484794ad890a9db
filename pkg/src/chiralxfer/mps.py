"""Matrix-product-state integrator for the time-bin stochastic Schrodinger picture.

The waveguide field is cut into time bins of width ``dt``; each bin is one
bosonic site that interacts with node 1 at step ``p`` and with node 2 ``l``
steps later. Thermal input is purified: every real bin starts in a
Schmidt-diagonal pair with an auxiliary bin, so the whole network stays in a
pure state. With ``beta < 1`` a second family of left-moving bins carries the
backward emission from node 2 to node 1.

Chain layout, left to right::

    anc, node2, node1, L_{1-l} ... L_l, [r_1, x_1, L_{1+l}, y_{1+l}], [r_2, ...], ...

``r_k`` is the right-moving bin node 1 meets at step ``k`` and ``x_k`` its
purification partner. ``L_q`` is the left-moving bin node 2 meets at step
``q``; it sits next to ``r_{q-l}``, the right bin node 2 handles in the same
step, and node 1 meets it at step ``q + l``. The prefix holds the left bins
that reach node 1 before node 2 is switched on. Auxiliary sites never move;
nodes and left bins walk through the chain by nearest-neighbour SVD swaps.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import ConfigurationError, InvalidDimensionError, InvalidParameterError
from .fock import DensityMatrix, SpaceLayout, annihilation, identity, kron_all, thermal_populations
from .master import ANCILLA, NetworkSpec, NodeKind
from .pulses import kappa

log = logging.getLogger(__name__)

SNAPSHOT_VERSION = 1


class SiteRole(str, enum.Enum):
    NODE = "node"
    REAL_BIN = "real_bin"
    AUX_BIN = "aux_bin"
    LEFT_BIN = "left_bin"


def default_bin_dim(n_th: float, tol: float = 2e-2) -> int:
    """Bin cutoff: room for one emitted photon on top of the thermal tail.

    A bin meets a node while already holding thermal photons, so the cutoff
    is two levels above the point where the thermal weight drops below
    ``tol``; never less than 3.
    """
    if n_th <= 0:
        return 3
    r = n_th / (1.0 + n_th)
    return max(3, 2 + int(math.ceil(math.log(tol) / math.log(r))))


@dataclass(frozen=True)
class TimeGrid:
    """Time-bin discretization.

    Parameters
    ----------
    dt : float
        Bin width.
    M : int
        Number of right-moving bins, i.e. node-1 steps.
    l : int
        Delay between the nodes in bins, ``tau = l * dt``.
    bin_dim : int
        Fock cutoff of every bin.
    """

    dt: float
    M: int
    l: int = 1
    bin_dim: int = 3

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidParameterError("dt must be positive")
        if self.M < 1:
            raise InvalidParameterError("need at least one bin")
        if self.l < 1:
            raise InvalidParameterError("the delay must be at least one bin")
        if self.bin_dim < 2:
            raise InvalidDimensionError("bin_dim must be at least 2")

    @classmethod
    def for_network(cls, net: NetworkSpec, M: int = 400, tau: float = 0.0, bin_dim: int | None = None):
        """Grid over the pulse window with delay ``tau`` rounded to whole bins (at least one)."""
        dt = net.pulses.duration / M
        if net.pulses.kappa_max * dt > 0.1 + 1e-12:
            raise ConfigurationError(f"kappa_max*dt = {net.pulses.kappa_max * dt:.3g} exceeds 0.1")
        l = max(1, int(round(tau / dt)))
        if bin_dim is None:
            bin_dim = default_bin_dim(net.n_th)
        return cls(dt, M, l, bin_dim)

    @property
    def steps(self) -> int:
        return self.M + self.l


@dataclass
class MPSState:
    """Open-boundary MPS in mixed canonical form around ``ortho_center``.

    ``tensors[i]`` has shape ``(left bond, physical, right bond)``. Sites left
    of the centre are left-canonical and sites right of it right-canonical.
    """

    tensors: list
    labels: list
    site_roles: list
    ortho_center: int = 0
    max_bond: int = 32
    trunc_threshold: float = 1e-10
    diagnostics: dict = field(default_factory=lambda: {"truncation_weight": 0.0, "max_bond_used": 1,
                                                       "bond_overflow": 0, "norm_drift": 0.0})

    def __post_init__(self):
        self._pos = {lab: i for i, lab in enumerate(self.labels)}

    def position(self, label: str) -> int:
        return self._pos[label]

    @property
    def physical_dims(self) -> list[int]:
        return [t.shape[1] for t in self.tensors]

    @property
    def bond_dims(self) -> list[int]:
        return [t.shape[2] for t in self.tensors[:-1]]

    def check(self) -> None:
        """Assert the structural invariants (bond consistency, norm, centre)."""
        n = len(self.tensors)
        if not 0 <= self.ortho_center < n:
            raise InvalidDimensionError("orthogonality centre out of range")
        if self.tensors[0].shape[0] != 1 or self.tensors[-1].shape[2] != 1:
            raise InvalidDimensionError("open boundary bonds must be 1")
        for a, b in zip(self.tensors[:-1], self.tensors[1:]):
            if a.shape[2] != b.shape[0]:
                raise InvalidDimensionError("neighbouring bond dimensions disagree")
        nrm = self.norm()
        if abs(nrm - 1.0) > 1e-6:
            raise InvalidParameterError(f"MPS norm {nrm} deviates from 1")

    def norm(self) -> float:
        return float(np.linalg.norm(self.tensors[self.ortho_center]))

    def copy(self) -> "MPSState":
        return MPSState([t.copy() for t in self.tensors], list(self.labels), list(self.site_roles),
                        self.ortho_center, self.max_bond, self.trunc_threshold, dict(self.diagnostics))


# ------------------------------------------------------------ construction


def _block_to_tensors(vec: np.ndarray, dims: list[int]) -> list[np.ndarray]:
    """Exact right-canonical MPS of a normalized block state."""
    tensors = []
    rest = np.asarray(vec, complex).reshape(-1, 1)
    for d in reversed(dims[1:]):
        m = rest.reshape(-1, d * rest.shape[1])
        u, s, vh = np.linalg.svd(m, full_matrices=False)
        keep = max(1, int(np.sum(s > 1e-14 * s[0])))
        tensors.append(vh[:keep].reshape(keep, d, -1))
        rest = u[:, :keep] * s[:keep]
    tensors.append(rest.reshape(1, dims[0], -1))
    return tensors[::-1]


def thermal_pair(n_th: float, bin_dim: int) -> np.ndarray:
    """Schmidt-diagonal purification ``sum_n sqrt(p_n) |n>_real |n>_aux``."""
    p = thermal_populations(n_th, bin_dim)
    return np.diag(np.sqrt(p)).astype(complex).ravel()


def thermal_truncation(n_th: float, bin_dim: int) -> float:
    """Thermal weight above the bin cutoff, ``(n/(1+n))**bin_dim``."""
    return 0.0 if n_th <= 0 else (n_th / (1.0 + n_th)) ** bin_dim


def _node_dims(net: NetworkSpec) -> tuple[int, int]:
    if len(net.nodes) != 2:
        raise ConfigurationError("the MPS engine supports two-node networks only")
    for node in net.nodes:
        if node.kind is not NodeKind.CAVITY:
            raise ConfigurationError("the MPS engine supports cavity nodes only")
    return net.nodes[0].fock_cutoff, net.nodes[1].fock_cutoff


def init_thermal_mps(grid: TimeGrid, n_th: float, net: NetworkSpec, entangle_ancilla: bool = True,
                     max_bond: int = 32, trunc_threshold: float = 1e-10) -> MPSState:
    """Initial chain: nodes in vacuum, every bin in its purified thermal state.

    With ``entangle_ancilla`` the logical qubit starts in node 1 as
    ``(|0>_1|0>_a + |1>_1|1>_a)/sqrt 2``; otherwise both nodes and the ancilla
    are in vacuum. Auxiliary sites are left out entirely at ``n_th = 0``.
    """
    if n_th < 0:
        raise InvalidParameterError("n_th must be non-negative")
    d1, d2 = _node_dims(net)
    b = grid.bin_dim
    lost = thermal_truncation(n_th, b)
    if lost > 1e-8:
        log.info("thermal bins truncated at bin_dim=%d discard weight %.2e per bin", b, lost)
    left = net.beta < 1.0
    thermal = n_th > 0

    blocks: list[tuple[np.ndarray, list[tuple[str, SiteRole, int]]]] = []
    head = np.zeros((2, d2, d1), complex)
    head[0, 0, 0] = 1.0
    if entangle_ancilla:
        head[1, 0, 1] = 1.0
        head /= math.sqrt(2.0)
    blocks.append((head.ravel(), [(ANCILLA, SiteRole.NODE, 2), ("node2", SiteRole.NODE, d2),
                                  ("node1", SiteRole.NODE, d1)]))

    vac = np.zeros(b, complex)
    vac[0] = 1.0
    pair = thermal_pair(n_th, b)

    def bin_block(name, role, aux):
        if thermal:
            return pair, [(name, role, b), (aux, SiteRole.AUX_BIN, b)]
        return vac, [(name, role, b)]

    if left:
        for q in range(1 - grid.l, grid.l + 1):
            blocks.append(bin_block(f"L{q}", SiteRole.LEFT_BIN, f"y{q}"))
    for k in range(1, grid.M + 1):
        blocks.append(bin_block(f"r{k}", SiteRole.REAL_BIN, f"x{k}"))
        if left:
            q = k + grid.l
            blocks.append(bin_block(f"L{q}", SiteRole.LEFT_BIN, f"y{q}"))

    tensors, labels, roles = [], [], []
    for vec, sites in blocks:
        tensors.extend(_block_to_tensors(vec, [d for _, _, d in sites]))
        labels.extend(s[0] for s in sites)
        roles.extend(s[1] for s in sites)
    state = MPSState(tensors, labels, roles, 0, max_bond, trunc_threshold)
    state.diagnostics["thermal_truncation"] = lost
    return state


# ------------------------------------------------------------ canonical-form plumbing


def _truncate(s: np.ndarray, state: MPSState) -> int:
    w = s ** 2
    total = w.sum()
    if total == 0:
        return 1
    tail = np.cumsum(w[::-1])[::-1] / total  # tail[k] = weight of s[k:]
    keep = int(np.sum(tail > state.trunc_threshold))
    keep = max(1, keep)
    if keep > state.max_bond:
        overflow = float(tail[state.max_bond])
        if overflow > state.trunc_threshold:
            state.diagnostics["bond_overflow"] += 1
            log.debug("bond capped at %d discarding weight %.2e", state.max_bond, overflow)
        keep = state.max_bond
    discarded = float(w[keep:].sum() / total)
    state.diagnostics["truncation_weight"] += discarded
    state.diagnostics["max_bond_used"] = max(state.diagnostics["max_bond_used"], keep)
    return keep


def _split(theta: np.ndarray, dims: list[int], state: MPSState, i: int, center_right: bool = True) -> None:
    """Write the block ``theta`` (Dl, d..., Dr) back as sites ``i, i+1, ...``."""
    n = len(dims)
    dl, dr = theta.shape[0], theta.shape[-1]
    if center_right:
        rest = theta.reshape(dl, -1)
        new = []
        left_bond = dl
        for k in range(n - 1):
            m = rest.reshape(left_bond * dims[k], -1)
            u, s, vh = np.linalg.svd(m, full_matrices=False)
            keep = _truncate(s, state)
            s = s[:keep] / np.linalg.norm(s[:keep])
            new.append(u[:, :keep].reshape(left_bond, dims[k], keep))
            rest = s[:, None] * vh[:keep]
            left_bond = keep
        new.append(rest.reshape(left_bond, dims[-1], dr))
        state.ortho_center = i + n - 1
    else:
        rest = theta.reshape(-1, dr)
        new = []
        right_bond = dr
        for k in range(n - 1, 0, -1):
            m = rest.reshape(-1, dims[k] * right_bond)
            u, s, vh = np.linalg.svd(m, full_matrices=False)
            keep = _truncate(s, state)
            s = s[:keep] / np.linalg.norm(s[:keep])
            new.append(vh[:keep].reshape(keep, dims[k], right_bond))
            rest = u[:, :keep] * s[None, :]
            right_bond = keep
        new.append(rest.reshape(dl, dims[0], right_bond))
        new = new[::-1]
        state.ortho_center = i
    state.tensors[i:i + n] = new


def move_center(state: MPSState, k: int) -> None:
    """Shift the orthogonality centre to site ``k`` with QR sweeps."""
    t = state.tensors
    while state.ortho_center < k:
        c = state.ortho_center
        dl, d, dr = t[c].shape
        q, r = np.linalg.qr(t[c].reshape(dl * d, dr))
        t[c] = q.reshape(dl, d, -1)
        t[c + 1] = np.tensordot(r, t[c + 1], axes=(1, 0))
        state.ortho_center = c + 1
    while state.ortho_center > k:
        c = state.ortho_center
        dl, d, dr = t[c].shape
        q, r = np.linalg.qr(t[c].reshape(dl, d * dr).T)
        t[c] = q.T.reshape(-1, d, dr)
        t[c - 1] = np.tensordot(t[c - 1], r.T, axes=(2, 0))
        state.ortho_center = c - 1


def _block(state: MPSState, i: int, n: int) -> np.ndarray:
    theta = state.tensors[i]
    for k in range(1, n):
        theta = np.tensordot(theta, state.tensors[i + k], axes=(theta.ndim - 1, 0))
    return theta


def swap_sites(state: MPSState, i: int, towards_right: bool = True) -> None:
    """Exchange sites ``i`` and ``i+1`` (tensor contents and labels)."""
    move_center(state, i if towards_right else i + 1)
    theta = _block(state, i, 2).transpose(0, 2, 1, 3)
    dims = [theta.shape[1], theta.shape[2]]
    _split(theta, dims, state, i, center_right=towards_right)
    lab, role = state.labels, state.site_roles
    lab[i], lab[i + 1] = lab[i + 1], lab[i]
    role[i], role[i + 1] = role[i + 1], role[i]
    state._pos[lab[i]] = i
    state._pos[lab[i + 1]] = i + 1


def move_site(state: MPSState, label: str, target: int) -> None:
    """Carry site ``label`` to position ``target`` by adjacent swaps."""
    pos = state.position(label)
    while pos < target:
        swap_sites(state, pos, towards_right=True)
        pos += 1
    while pos > target:
        swap_sites(state, pos - 1, towards_right=False)
        pos -= 1


def apply_local(state: MPSState, gate: np.ndarray, i: int, n: int) -> None:
    """Apply a dense gate on the ``n`` contiguous sites starting at ``i``."""
    move_center(state, i)
    theta = _block(state, i, n)
    dims = list(theta.shape[1:-1])
    dl, dr = theta.shape[0], theta.shape[-1]
    d = int(np.prod(dims))
    mat = theta.reshape(dl, d, dr)
    mat = np.einsum("ij,ajb->aib", gate, mat)
    _split(mat.reshape(theta.shape), dims, state, i, center_right=True)


# ------------------------------------------------------------ gates


def _midpoint(grid: TimeGrid, net: NetworkSpec, p: int) -> float:
    return net.pulses.t_i + (p - 0.5) * grid.dt


def _rate(j: int, t: float, net: NetworkSpec) -> float:
    s = net.pulses
    if not s.t_i <= t <= s.t_f:
        return 0.0
    return float(kappa(j, t, s))


def node_generators(p: int, grid: TimeGrid, net: NetworkSpec) -> dict:
    """Anti-Hermitian generators of step ``p`` split by node.

    Returns ``{"node1": (G, bins), "node2": (G, bins)}``. ``G`` acts on the
    node followed by the listed bins in that order; the right-moving term
    comes first. Node 2 runs on a clock delayed by ``l`` bins so that it
    meets the photon emitted by node 1 ``tau`` earlier. Entries with a zero
    rate or a missing bin are omitted.
    """
    d1, d2 = _node_dims(net)
    b = grid.bin_dim
    t1 = _midpoint(grid, net, p)
    t2 = t1 - grid.l * grid.dt
    k1 = _rate(1, t1, net) if p <= grid.M else 0.0
    k2 = _rate(2, t2, net) if 1 <= p - grid.l <= grid.M else 0.0
    beta = net.beta
    phase = np.exp(-2j * net.phi)
    bop = annihilation(b).matrix
    out = {}
    for name, dn, k, right, lft, ph in (
        ("node1", d1, k1, f"r{p}", f"L{p - grid.l}", 1.0),
        ("node2", d2, k2, f"r{p - grid.l}", f"L{p}", phase),
    ):
        if k == 0.0:
            continue
        a = annihilation(dn).matrix
        bins = [right]
        if beta < 1.0:
            bins.append(lft)
        dims = [dn] + [b] * len(bins)
        gen = np.zeros((int(np.prod(dims)),) * 2, complex)
        weights = [math.sqrt(beta * k * grid.dt), math.sqrt((1.0 - beta) * k * grid.dt) * ph]
        for slot, w in enumerate(weights[:len(bins)]):
            mats = [identity(d).matrix for d in dims]
            mats[0] = a
            mats[1 + slot] = bop.conj().T
            term = w * kron_all(mats)
            gen += term - term.conj().T
        out[name] = (gen, bins)
    return out


def gate_generator(p: int, grid: TimeGrid, net: NetworkSpec) -> np.ndarray:
    """Full generator on (node1, node2, r_p, r_{p-l}[, L_{p-l}, L_p]).

    This is the sum of the two commuting node-local generators of
    :func:`node_generators` written on one local space. It is meant for
    inspection and tests; :func:`apply_step` exponentiates the node-local
    parts separately, which is exact because they act on disjoint sites.
    """
    d1, d2 = _node_dims(net)
    b = grid.bin_dim
    left = net.beta < 1.0
    order = ["node1", "node2", f"r{p}", f"r{p - grid.l}"]
    if left:
        order += [f"L{p - grid.l}", f"L{p}"]
    dims = [d1, d2] + [b] * (len(order) - 2)
    total = np.zeros((int(np.prod(dims)),) * 2, complex)
    for name, (gen, bins) in node_generators(p, grid, net).items():
        sites = [name] + bins
        rest = [s for s in order if s not in sites]
        perm = [order.index(s) for s in sites + rest]
        sub_dims = [dims[i] for i in perm]
        full = np.kron(gen, np.eye(int(np.prod(sub_dims[len(sites):]))))
        full = full.reshape(sub_dims * 2)
        inv = np.argsort(perm)
        full = full.transpose(list(inv) + [len(order) + i for i in inv])
        total += full.reshape(total.shape)
    return total


def apply_step(state: MPSState, p: int, grid: TimeGrid, net: NetworkSpec) -> MPSState:
    """Advance the chain by step ``p`` in place and return it.

    Each node is swapped in front of its first bin, its other bin (if any) is
    carried to sit right behind it, and the exponentiated node-local gate is
    applied to the contiguous block.
    """
    norm_before = state.norm()
    for name, (gen, bins) in node_generators(p, grid, net).items():
        if bins[0] not in state._pos or any(bn not in state._pos for bn in bins):
            raise ConfigurationError(f"step {p} refers to a bin outside the chain")
        start = state.position(bins[0])
        node_pos = state.position(name)
        target = start - 1 if node_pos < start else start
        move_site(state, name, target)
        for k, bn in enumerate(bins[1:], start=1):
            here = state.position(name) + k
            # a bin coming from behind shifts the node block left by one on its way
            move_site(state, bn, here + 1 if state.position(bn) > here else here)
        apply_local(state, expm(gen), state.position(name), 1 + len(bins))
    drift = abs(state.norm() - norm_before)
    state.diagnostics["norm_drift"] = max(state.diagnostics["norm_drift"], drift)
    return state


def evolve_mps(state: MPSState, grid: TimeGrid, net: NetworkSpec) -> MPSState:
    """Run every step ``1 .. M + l``."""
    for p in range(1, grid.steps + 1):
        apply_step(state, p, grid, net)
    return state


# ------------------------------------------------------------ readout


def reduced_density(state: MPSState, sites) -> DensityMatrix:
    """Reduced density matrix of up to three sites, in the requested order."""
    sites = list(sites)
    if not 1 <= len(sites) <= 3:
        raise ConfigurationError("reduced_density supports one to three sites")
    pos = [state.position(s) for s in sites]
    lo, hi = min(pos), max(pos)
    move_center(state, lo)
    # sites left of the centre are left-canonical and trace to identity
    env = np.eye(state.tensors[lo].shape[0], dtype=complex)
    kept = []
    for i in range(lo, len(state.tensors)):
        a = state.tensors[i]
        if i in pos:
            env = np.einsum("...xy,xsz,ytw->...stzw", env, a, a.conj())
            kept.append(state.labels[i])
        else:
            env = np.einsum("...xy,xsz,ysw->...zw", env, a, a.conj())
        if i >= hi:
            # right of the last kept site everything is right-canonical
            env = np.einsum("...zz->...", env)
            break
    n = len(kept)
    dims = [state.tensors[state.position(s)].shape[1] for s in kept]
    order = [kept.index(s) for s in sites]
    rho = env.reshape([x for d in dims for x in (d, d)])
    rho = rho.transpose([2 * k for k in order] + [2 * k + 1 for k in order])
    tot = int(np.prod(dims))
    layout = SpaceLayout(tuple((s, dims[kept.index(s)]) for s in sites))
    rho = rho.reshape(tot, tot)
    rho = 0.5 * (rho + rho.conj().T)
    return DensityMatrix(layout, rho, dict(state.diagnostics, n_sites=n))


def mps_transfer(net: NetworkSpec, grid: TimeGrid | None = None, tau: float = 0.0, max_bond: int = 32,
                 trunc_threshold: float = 1e-10) -> tuple[DensityMatrix, MPSState]:
    """Ancilla-protocol transfer; returns ``rho`` on (node2, anc) and the final chain."""
    grid = TimeGrid.for_network(net, tau=tau) if grid is None else grid
    state = init_thermal_mps(grid, net.n_th, net, True, max_bond, trunc_threshold)
    evolve_mps(state, grid, net)
    rho = reduced_density(state, ["node2", ANCILLA])
    return rho, state


def mps_fidelity(net: NetworkSpec, grid: TimeGrid | None = None, tau: float = 0.0, max_bond: int = 32,
                 trunc_threshold: float = 1e-10) -> tuple[float, dict]:
    """Transfer fidelity against the ideal Bell target plus chain diagnostics."""
    from .fock import uhlmann_fidelity
    from .master import ideal_target

    rho, state = mps_transfer(net, grid, tau, max_bond, trunc_threshold)
    target = ideal_target(rho.layout.dim("node2")).to_density()
    f = uhlmann_fidelity(rho, DensityMatrix(rho.layout, target.matrix))
    diag = {k: state.diagnostics[k] for k in ("truncation_weight", "max_bond_used", "norm_drift", "bond_overflow")}
    return f, diag


# ------------------------------------------------------------ snapshots


def save_snapshot(state: MPSState, path) -> None:
    """Binary snapshot: a JSON header (version, roles, dims, bonds) plus tensors."""
    header = {
        "version": SNAPSHOT_VERSION,
        "labels": state.labels,
        "roles": [SiteRole(r).value for r in state.site_roles],
        "physical_dims": state.physical_dims,
        "bond_dims": state.bond_dims,
        "ortho_center": state.ortho_center,
        "max_bond": state.max_bond,
        "trunc_threshold": state.trunc_threshold,
        "diagnostics": state.diagnostics,
    }
    arrays = {f"t{i}": t for i, t in enumerate(state.tensors)}
    np.savez(path, header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8), **arrays)


def load_snapshot(path) -> MPSState:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("version") != SNAPSHOT_VERSION:
            raise ConfigurationError(f"unsupported snapshot version {header.get('version')}")
        tensors = [data[f"t{i}"] for i in range(len(header["labels"]))]
    state = MPSState(tensors, header["labels"], [SiteRole(r) for r in header["roles"]], header["ortho_center"],
                     header["max_bond"], header["trunc_threshold"], header["diagnostics"])
    state.check()
    return state
