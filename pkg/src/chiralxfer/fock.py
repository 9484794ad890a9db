"""Truncated Fock-space and qubit linear algebra.

Everything here is dense numpy. A :class:`SpaceLayout` records the ordered
tensor factors of a composite space; states and operators carry their layout
so that embedding and partial traces can be done by label.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidDimensionError, InvalidParameterError, NumericalDomainError

log = logging.getLogger(__name__)

#: Eigenvalues in ``[-PSD_TOL, 0)`` are treated as round-off and clamped to zero.
PSD_TOL = 1e-8


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=complex, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SpaceLayout:
    """Ordered list of ``(label, dimension)`` tensor factors."""

    subsystems: tuple[tuple[str, int], ...]

    def __post_init__(self):
        subs = tuple((str(lab), int(dim)) for lab, dim in self.subsystems)
        object.__setattr__(self, "subsystems", subs)
        labels = [lab for lab, _ in subs]
        if not subs:
            raise InvalidDimensionError("layout needs at least one subsystem")
        if len(set(labels)) != len(labels):
            raise InvalidDimensionError(f"duplicate labels in layout: {labels}")
        for lab, dim in subs:
            if dim < 1:
                raise InvalidDimensionError(f"subsystem {lab!r} has dimension {dim} < 1")

    @classmethod
    def of(cls, *pairs: tuple[str, int]) -> "SpaceLayout":
        return cls(tuple(pairs))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(lab for lab, _ in self.subsystems)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(dim for _, dim in self.subsystems)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims))

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise InvalidDimensionError(f"unknown subsystem label {label!r}") from None

    def dim(self, label: str) -> int:
        return self.dims[self.index(label)]

    def __add__(self, other: "SpaceLayout") -> "SpaceLayout":
        return SpaceLayout(self.subsystems + other.subsystems)


def single(dim: int, label: str = "mode") -> SpaceLayout:
    """Layout of one subsystem."""
    return SpaceLayout(((label, dim),))


@dataclass(frozen=True)
class StateVector:
    """Pure state over a layout."""

    layout: SpaceLayout
    amplitudes: np.ndarray
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        amps = _frozen(np.ravel(self.amplitudes))
        if amps.shape != (self.layout.total_dim,):
            raise InvalidDimensionError(
                f"amplitude length {amps.shape[0]} does not match layout dimension {self.layout.total_dim}"
            )
        object.__setattr__(self, "amplitudes", amps)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "StateVector":
        nrm = self.norm
        if nrm == 0:
            raise NumericalDomainError("cannot normalize the zero vector")
        return StateVector(self.layout, self.amplitudes / nrm, dict(self.diagnostics))

    def to_density(self) -> "DensityMatrix":
        a = self.amplitudes
        return DensityMatrix(self.layout, np.outer(a, a.conj()), dict(self.diagnostics))

    def relabel(self, label: str) -> "StateVector":
        """Rename a single-subsystem state (for use inside :func:`tensor`)."""
        if len(self.layout.subsystems) != 1:
            raise InvalidDimensionError("relabel only applies to single-subsystem states")
        return StateVector(single(self.layout.total_dim, label), self.amplitudes, dict(self.diagnostics))


@dataclass(frozen=True)
class DensityMatrix:
    """Mixed state over a layout.

    Construction only checks the shape; call :meth:`validate` to enforce the
    physical invariants (Hermitian, unit trace, positive semidefinite).
    """

    layout: SpaceLayout
    matrix: np.ndarray
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        mat = _frozen(self.matrix)
        n = self.layout.total_dim
        if mat.shape != (n, n):
            raise InvalidDimensionError(f"matrix shape {mat.shape} does not match layout dimension {n}")
        object.__setattr__(self, "matrix", mat)

    @property
    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def validate(self, herm_tol: float = 1e-10, trace_tol: float = 1e-8, psd_tol: float = PSD_TOL) -> None:
        """Raise :class:`NumericalDomainError` if an invariant is violated."""
        m = self.matrix
        herm = float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0
        if herm > herm_tol:
            raise NumericalDomainError(f"density matrix not Hermitian (deviation {herm:.3e})")
        tr_err = abs(np.trace(m) - 1.0)
        if tr_err > trace_tol:
            raise NumericalDomainError(f"density matrix trace off by {tr_err:.3e}")
        lo = float(np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min())
        if lo < -psd_tol:
            raise NumericalDomainError(f"density matrix has eigenvalue {lo:.3e}")

    def relabel(self, label: str) -> "DensityMatrix":
        if len(self.layout.subsystems) != 1:
            raise InvalidDimensionError("relabel only applies to single-subsystem states")
        return DensityMatrix(single(self.layout.total_dim, label), self.matrix, dict(self.diagnostics))


@dataclass(frozen=True)
class LinearOperator:
    """Operator on a layout. ``sparse`` is an optimization hint only."""

    layout: SpaceLayout
    matrix: np.ndarray
    sparse: bool = False

    def __post_init__(self):
        mat = _frozen(self.matrix)
        n = self.layout.total_dim
        if mat.shape != (n, n):
            raise InvalidDimensionError(f"operator shape {mat.shape} does not match layout dimension {n}")
        object.__setattr__(self, "matrix", mat)

    def dag(self) -> "LinearOperator":
        return LinearOperator(self.layout, self.matrix.conj().T, self.sparse)

    def __matmul__(self, other):
        if isinstance(other, LinearOperator):
            _same_layout(self.layout, other.layout)
            return LinearOperator(self.layout, self.matrix @ other.matrix, self.sparse and other.sparse)
        if isinstance(other, StateVector):
            _same_layout(self.layout, other.layout)
            return StateVector(self.layout, self.matrix @ other.amplitudes)
        return NotImplemented

    def __add__(self, other: "LinearOperator") -> "LinearOperator":
        _same_layout(self.layout, other.layout)
        return LinearOperator(self.layout, self.matrix + other.matrix, self.sparse and other.sparse)

    def __sub__(self, other: "LinearOperator") -> "LinearOperator":
        _same_layout(self.layout, other.layout)
        return LinearOperator(self.layout, self.matrix - other.matrix, self.sparse and other.sparse)

    def __mul__(self, scalar) -> "LinearOperator":
        return LinearOperator(self.layout, complex(scalar) * self.matrix, self.sparse)

    __rmul__ = __mul__

    def relabel(self, label: str) -> "LinearOperator":
        if len(self.layout.subsystems) != 1:
            raise InvalidDimensionError("relabel only applies to single-subsystem operators")
        return LinearOperator(single(self.layout.total_dim, label), self.matrix, self.sparse)


def _same_layout(a: SpaceLayout, b: SpaceLayout) -> None:
    if a != b:
        raise InvalidDimensionError(f"layout mismatch: {a.subsystems} vs {b.subsystems}")


# ---------------------------------------------------------------- operators


def annihilation(dim: int) -> LinearOperator:
    """Truncated ladder operator with ``<n-1|a|n> = sqrt(n)``."""
    if dim < 2:
        raise InvalidDimensionError(f"annihilation operator needs dim >= 2, got {dim}")
    return LinearOperator(single(dim), np.diag(np.sqrt(np.arange(1, dim)), k=1), sparse=True)


def creation(dim: int) -> LinearOperator:
    return annihilation(dim).dag()


def number(dim: int) -> LinearOperator:
    return LinearOperator(single(dim), np.diag(np.arange(dim, dtype=float)), sparse=True)


def identity(dim: int) -> LinearOperator:
    return LinearOperator(single(dim), np.eye(dim), sparse=True)


def sigma_minus() -> LinearOperator:
    """Two-level lowering operator ``|g><e|`` with ``|g> = index 0``."""
    return annihilation(2)


def collective_lowering(n_atoms: int, cutoff: int | None = None) -> LinearOperator:
    """Normalized collective spin lowering operator on the symmetric ladder.

    With ``|n>`` the Dicke state holding ``n`` excitations among ``n_atoms``
    atoms, ``S^- |n> = sqrt(n (N - n + 1) / N) |n-1>``. This gives the
    commutator ``[S^-, S^+] = 1 - 2n/N`` and reduces to ``sigma^-`` for one
    atom. ``cutoff`` keeps the lowest levels (default all ``N + 1``).
    """
    if n_atoms < 1:
        raise InvalidParameterError("need at least one atom")
    dim = n_atoms + 1 if cutoff is None else int(cutoff)
    if dim < 2 or dim > n_atoms + 1:
        raise InvalidDimensionError(f"ensemble cutoff must lie in [2, N+1], got {dim}")
    n = np.arange(1, dim)
    return LinearOperator(single(dim), np.diag(np.sqrt(n * (n_atoms - n + 1) / n_atoms), k=1), sparse=True)


def kron_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    return reduce(np.kron, mats)


def embed(op: LinearOperator, slot: str, layout: SpaceLayout) -> LinearOperator:
    """Place a single-subsystem operator at ``slot``, identity elsewhere."""
    idx = layout.index(slot)
    if op.layout.total_dim != layout.dims[idx]:
        raise InvalidDimensionError(
            f"operator dimension {op.layout.total_dim} does not match subsystem {slot!r} "
            f"of dimension {layout.dims[idx]}"
        )
    mats = [np.eye(d) for d in layout.dims]
    mats[idx] = op.matrix
    return LinearOperator(layout, kron_all(mats), op.sparse)


def tensor(*items):
    """Tensor product of states or density matrices, concatenating layouts."""
    if not items:
        raise InvalidDimensionError("tensor of nothing")
    layout = reduce(lambda a, b: a + b, (it.layout for it in items))
    if all(isinstance(it, StateVector) for it in items):
        return StateVector(layout, kron_all([it.amplitudes for it in items]))
    rhos = [it.to_density() if isinstance(it, StateVector) else it for it in items]
    return DensityMatrix(layout, kron_all([r.matrix for r in rhos]))


def expectation(op: LinearOperator, state) -> complex:
    if isinstance(state, StateVector):
        _same_layout(op.layout, state.layout)
        a = state.amplitudes
        return complex(a.conj() @ (op.matrix @ a))
    _same_layout(op.layout, state.layout)
    return complex(np.trace(op.matrix @ state.matrix))


# -------------------------------------------------------------- reductions


def partial_trace(rho: DensityMatrix, keep: Iterable[str]) -> DensityMatrix:
    """Trace out every subsystem not listed in ``keep``.

    Kept subsystems stay in their original relative order.
    """
    keep = list(keep)
    if not keep:
        raise InvalidDimensionError("keep set must be non-empty")
    layout = rho.layout
    keep_idx = sorted({layout.index(lab) for lab in keep})
    dims = layout.dims
    n = len(dims)
    t = rho.matrix.reshape(dims + dims)
    # einsum subscripts: row indices 0..n-1, column indices n..2n-1; traced
    # subsystems share their row and column letter.
    row = list(range(n))
    col = [i + n if i in keep_idx else i for i in range(n)]
    out = [i for i in keep_idx] + [i + n for i in keep_idx]
    reduced = np.einsum(t, row + col, out)
    kdims = [dims[i] for i in keep_idx]
    kd = int(np.prod(kdims))
    new_layout = SpaceLayout(tuple(layout.subsystems[i] for i in keep_idx))
    return DensityMatrix(new_layout, reduced.reshape(kd, kd), dict(rho.diagnostics))


def psd_sqrt(mat: np.ndarray, tol: float = PSD_TOL) -> np.ndarray:
    """Square root of a Hermitian PSD matrix via eigendecomposition."""
    h = 0.5 * (mat + mat.conj().T)
    w, v = np.linalg.eigh(h)
    scale = max(1.0, float(np.max(np.abs(w)))) if w.size else 1.0
    if w.size and w.min() < -tol * scale:
        raise NumericalDomainError(f"matrix is not positive semidefinite (eigenvalue {w.min():.3e})")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.conj().T


def clamp_psd(rho: DensityMatrix, tol: float = PSD_TOL) -> DensityMatrix:
    """Hermitize, clip round-off negative eigenvalues and renormalize."""
    m = 0.5 * (rho.matrix + rho.matrix.conj().T)
    w, v = np.linalg.eigh(m)
    if w.min() < -tol:
        raise NumericalDomainError(f"eigenvalue {w.min():.3e} below tolerance")
    w = np.clip(w, 0.0, None)
    m = (v * w) @ v.conj().T
    return DensityMatrix(rho.layout, m / np.trace(m).real, dict(rho.diagnostics))


def uhlmann_fidelity(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """Uhlmann fidelity ``(Tr sqrt(sqrt(rho) sigma sqrt(rho)))**2`` in [0, 1]."""
    _same_layout(rho.layout, sigma.layout)
    s = psd_sqrt(rho.matrix)
    inner = s @ sigma.matrix @ s
    w = np.linalg.eigvalsh(0.5 * (inner + inner.conj().T))
    if w.min() < -PSD_TOL * max(1.0, float(np.abs(w).max())):
        raise NumericalDomainError(f"sigma is not positive semidefinite (eigenvalue {w.min():.3e})")
    f = float(np.sum(np.sqrt(np.clip(w, 0.0, None))) ** 2)
    return min(max(f, 0.0), 1.0)


def pure_fidelity(rho: DensityMatrix, psi: StateVector) -> float:
    """``<psi|rho|psi>``, the Uhlmann fidelity against a pure target."""
    _same_layout(rho.layout, psi.layout)
    a = psi.amplitudes
    return min(max(float(np.real(a.conj() @ rho.matrix @ a)), 0.0), 1.0)


# -------------------------------------------------------------- states


def fock_state(n: int, dim: int, label: str = "mode") -> StateVector:
    if not 0 <= n < dim:
        raise InvalidDimensionError(f"Fock level {n} outside cutoff {dim}")
    amps = np.zeros(dim, dtype=complex)
    amps[n] = 1.0
    return StateVector(single(dim, label), amps)


def coherent_cutoff(alpha: complex) -> int:
    """Recommended cutoff ``ceil(|a|^2 + 5|a| + 5)`` for a coherent amplitude."""
    r = abs(alpha)
    return int(math.ceil(r * r + 5 * r + 5))


def coherent_state(alpha: complex, dim: int, label: str = "mode") -> StateVector:
    """Truncated coherent state, renormalized.

    The discarded weight ``1 - norm**2`` of the untruncated series is stored
    as ``diagnostics["truncation_weight"]`` and logged when the cutoff is
    smaller than :func:`coherent_cutoff` recommends.
    """
    if dim < 1:
        raise InvalidDimensionError("dim must be >= 1")
    n = np.arange(dim)
    log_fact = np.array([math.lgamma(k + 1) for k in n])
    if alpha == 0:
        amps = np.zeros(dim, dtype=complex)
        amps[0] = 1.0
    else:
        amps = np.exp(-0.5 * abs(alpha) ** 2 + n * np.log(complex(alpha)) - 0.5 * log_fact)
    weight = float(np.sum(np.abs(amps) ** 2))
    discarded = max(0.0, 1.0 - weight)
    if dim < coherent_cutoff(alpha):
        log.warning("coherent state alpha=%s truncated at dim=%d (discarded weight %.2e)", alpha, dim, discarded)
    return StateVector(single(dim, label), amps / math.sqrt(weight), {"truncation_weight": discarded})


def thermal_populations(n_th: float, dim: int) -> np.ndarray:
    """Renormalized geometric populations of a truncated thermal state."""
    if n_th < 0:
        raise InvalidParameterError(f"n_th must be non-negative, got {n_th}")
    if dim < 1:
        raise InvalidDimensionError("dim must be >= 1")
    if n_th == 0:
        p = np.zeros(dim)
        p[0] = 1.0
        return p
    r = n_th / (1.0 + n_th)
    p = (1.0 - r) * r ** np.arange(dim)
    return p / p.sum()


def thermal_state(n_th: float, dim: int, label: str = "mode") -> DensityMatrix:
    """Truncated thermal state with mean occupation ``n_th`` (before truncation)."""
    p = thermal_populations(n_th, dim)
    r = n_th / (1.0 + n_th) if n_th > 0 else 0.0
    return DensityMatrix(single(dim, label), np.diag(p).astype(complex), {"truncation_weight": r**dim})


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a
