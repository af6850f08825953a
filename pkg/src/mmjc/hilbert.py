"""Truncated multimode Fock spaces and sparse operator algebra.

The composite space is qubit (dim 2) tensor a truncated Fock space per cavity
mode. Basis ordering is fixed: the qubit index varies slowest, then the modes
in configuration order, so serialized operators are comparable across runs.
Qubit basis: index 0 = ground |g>, index 1 = excited |e>, sigma_z = diag(-1, +1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

# Below this total dimension operators are stored dense: the tiny cases that
# dominate the test suite then go through exact dense arithmetic and
# diagonalization paths.
DENSE_CUTOFF = 64


class InvalidConfigurationError(ValueError):
    """Raised for structurally invalid spaces, configs, or operator requests."""


class SpaceMismatchError(ValueError):
    """Raised when combining operators or states living on different spaces."""


@dataclass(frozen=True)
class HilbertSpace:
    """Composite space: qubit tensor one truncated Fock space per mode.

    ``mode_cutoffs[m]`` is the highest retained photon number N_m of mode m,
    so that factor has dimension N_m + 1. A qubit-only space (no modes) is
    permitted for driven two-level systems.
    """

    mode_cutoffs: tuple[int, ...]
    qubit_dim: int = field(default=2, init=False)

    def __post_init__(self):
        object.__setattr__(self, "mode_cutoffs", tuple(int(c) for c in self.mode_cutoffs))
        if any(c < 1 for c in self.mode_cutoffs):
            raise InvalidConfigurationError(
                f"every mode cutoff must be >= 1, got {self.mode_cutoffs}"
            )

    @property
    def n_modes(self) -> int:
        return len(self.mode_cutoffs)

    @property
    def factor_dims(self) -> tuple[int, ...]:
        """Dimensions in canonical order: qubit first, then modes."""
        return (self.qubit_dim,) + tuple(c + 1 for c in self.mode_cutoffs)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.factor_dims))

    def mode_dim(self, mode_index: int) -> int:
        self._check_mode(mode_index)
        return self.mode_cutoffs[mode_index] + 1

    def _check_mode(self, mode_index: int):
        if not 0 <= mode_index < self.n_modes:
            raise InvalidConfigurationError(
                f"mode index {mode_index} out of range for {self.n_modes} modes"
            )

    def basis_index(self, qubit: int, fock: Sequence[int] = ()) -> int:
        """Flat index of the product basis state |qubit> |n_1 ... n_M>."""
        fock = tuple(fock)
        if qubit not in (0, 1):
            raise InvalidConfigurationError("qubit label must be 0 (g) or 1 (e)")
        if len(fock) != self.n_modes:
            raise InvalidConfigurationError(
                f"expected {self.n_modes} Fock labels, got {len(fock)}"
            )
        idx = qubit
        for n, cutoff in zip(fock, self.mode_cutoffs):
            if not 0 <= n <= cutoff:
                raise InvalidConfigurationError(f"Fock label {n} above cutoff {cutoff}")
            idx = idx * (cutoff + 1) + n
        return idx


def make_space(cutoffs: Sequence[int]) -> HilbertSpace:
    """Build the composite space for the given per-mode photon cutoffs.

    An empty cutoff list is rejected here: a space with no mode factors is a
    degenerate input for this factory (qubit-only spaces are constructed
    internally by the config layer).
    """
    cutoffs = tuple(int(c) for c in cutoffs)
    if not cutoffs:
        raise InvalidConfigurationError("cutoff list must contain at least one mode")
    return HilbertSpace(cutoffs)


def _wrap(space: HilbertSpace, matrix) -> "SparseOperator":
    if space.total_dim < DENSE_CUTOFF:
        if sp.issparse(matrix):
            matrix = matrix.toarray()
        return SparseOperator(space, np.asarray(matrix, dtype=complex))
    return SparseOperator(space, sp.csr_array(matrix, dtype=complex))


@dataclass(frozen=True)
class SparseOperator:
    """A complex matrix on a HilbertSpace, sparse above DENSE_CUTOFF.

    Arithmetic is only defined between operators on the identical space;
    mixing spaces raises SpaceMismatchError. Instances are immutable and safe
    to share across threads.
    """

    space: HilbertSpace
    data: object  # np.ndarray (dense) or scipy.sparse.csr_array

    @property
    def is_dense(self) -> bool:
        return isinstance(self.data, np.ndarray)

    def toarray(self) -> np.ndarray:
        if self.is_dense:
            return np.array(self.data)
        return self.data.toarray()

    def tocsr(self) -> sp.csr_array:
        if self.is_dense:
            return sp.csr_array(self.data)
        return self.data

    def _same_space(self, other: "SparseOperator"):
        if self.space != other.space:
            raise SpaceMismatchError(
                f"operators live on different spaces: {self.space} vs {other.space}"
            )

    def __add__(self, other: "SparseOperator") -> "SparseOperator":
        self._same_space(other)
        return _wrap(self.space, self.data + other.data)

    def __sub__(self, other: "SparseOperator") -> "SparseOperator":
        self._same_space(other)
        return _wrap(self.space, self.data - other.data)

    def __neg__(self) -> "SparseOperator":
        return _wrap(self.space, -self.data)

    def __mul__(self, scalar) -> "SparseOperator":
        if isinstance(scalar, SparseOperator):
            raise TypeError("use @ for operator products, * is scalar-only")
        return _wrap(self.space, self.data * complex(scalar))

    __rmul__ = __mul__

    def __matmul__(self, other: "SparseOperator") -> "SparseOperator":
        self._same_space(other)
        return _wrap(self.space, self.data @ other.data)

    def dag(self) -> "SparseOperator":
        """Hermitian adjoint."""
        if self.is_dense:
            return _wrap(self.space, self.data.conj().T)
        return _wrap(self.space, self.data.conj().T.tocsr())

    def norm_fro(self) -> float:
        if self.is_dense:
            return float(np.linalg.norm(self.data))
        return float(np.sqrt(np.sum(np.abs(self.data.data) ** 2))) if self.data.nnz else 0.0

    def is_hermitian(self, rtol: float = 1e-12) -> bool:
        diff = (self - self.dag()).norm_fro()
        scale = self.norm_fro()
        return diff <= rtol * max(scale, 1.0)


def commutator(a: SparseOperator, b: SparseOperator) -> SparseOperator:
    return a @ b - b @ a


def identity_op(space: HilbertSpace) -> SparseOperator:
    return _wrap(space, sp.eye_array(space.total_dim, dtype=complex, format="csr"))


def _mode_factor_op(space: HilbertSpace, mode_index: int, factor: np.ndarray) -> SparseOperator:
    """Lift a single-mode matrix to the composite space (identity elsewhere)."""
    space._check_mode(mode_index)
    dims = space.factor_dims
    out = sp.eye_array(dims[0], dtype=complex, format="csr")
    for m in range(space.n_modes):
        block = sp.csr_array(factor) if m == mode_index else sp.eye_array(dims[m + 1], dtype=complex)
        out = sp.kron(out, block, format="csr")
    return _wrap(space, out)


def _qubit_factor_op(space: HilbertSpace, factor: np.ndarray) -> SparseOperator:
    mode_dim = space.total_dim // space.qubit_dim
    out = sp.kron(sp.csr_array(factor), sp.eye_array(mode_dim, dtype=complex), format="csr")
    return _wrap(space, out)


def annihilator(space: HilbertSpace, mode_index: int) -> SparseOperator:
    """Mode lowering operator a_m: <n-1|a|n> = sqrt(n), identity on other factors."""
    d = space.mode_dim(mode_index)
    a = np.diag(np.sqrt(np.arange(1, d, dtype=float)), k=1).astype(complex)
    return _mode_factor_op(space, mode_index, a)


def creator(space: HilbertSpace, mode_index: int) -> SparseOperator:
    return annihilator(space, mode_index).dag()


def number_op(space: HilbertSpace, mode_index: int) -> SparseOperator:
    d = space.mode_dim(mode_index)
    n = np.diag(np.arange(d, dtype=float)).astype(complex)
    return _mode_factor_op(space, mode_index, n)


_SIGMA = {
    # basis ordering (|g>, |e>); sigma_z|e> = +|e>, sigma_z|g> = -|g>
    "sigma_minus": np.array([[0, 1], [0, 0]], dtype=complex),
    "sigma_plus": np.array([[0, 0], [1, 0]], dtype=complex),
    "sigma_z": np.array([[-1, 0], [0, 1]], dtype=complex),
    "sigma_x": np.array([[0, 1], [1, 0]], dtype=complex),
}


def qubit_op(space: HilbertSpace, which: str) -> SparseOperator:
    """Qubit ladder/Pauli operator lifted to the composite space."""
    if which not in _SIGMA:
        raise InvalidConfigurationError(
            f"unknown qubit operator {which!r}; choose from {sorted(_SIGMA)}"
        )
    return _qubit_factor_op(space, _SIGMA[which])


def basis_state(space: HilbertSpace, qubit: int, fock: Sequence[int] = ()) -> np.ndarray:
    """State vector of a product basis state."""
    v = np.zeros(space.total_dim, dtype=complex)
    v[space.basis_index(qubit, fock)] = 1.0
    return v


def manifold_dimension(n_modes: int, n_excitations: int) -> int:
    """Number of basis states with fixed total excitation (qubit + M modes).

    Counts product states with q + sum_m n_m = N, q in {0, 1}:
    C(N+M-1, M-1) + C(N+M-2, M-1).
    """
    if n_modes < 1 or n_excitations < 0:
        raise InvalidConfigurationError("need n_modes >= 1 and n_excitations >= 0")
    m, n = n_modes, n_excitations
    ground = math.comb(n + m - 1, m - 1)
    excited = math.comb(n + m - 2, m - 1) if n >= 1 else 0
    return ground + excited


def save_coo_text(op: SparseOperator, path) -> None:
    """Dump nonzero entries as 'row col re im' lines (debugging aid)."""
    coo = sp.coo_array(op.tocsr())
    with open(path, "w") as fh:
        fh.write(f"# dim {op.space.total_dim} cutoffs {','.join(map(str, op.space.mode_cutoffs))}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {float(v.real)!r} {float(v.imag)!r}\n")


def load_coo_text(space: HilbertSpace, path) -> SparseOperator:
    rows, cols, vals = [], [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            r, c, re, im = line.split()
            rows.append(int(r))
            cols.append(int(c))
            vals.append(complex(float(re), float(im)))
    n = space.total_dim
    mat = sp.coo_array((vals, (rows, cols)), shape=(n, n), dtype=complex)
    return _wrap(space, mat.tocsr())
