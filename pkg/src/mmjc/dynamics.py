"""Open-system dynamics: Liouvillian assembly, steady states, propagation,
and a quantum-jump (Monte Carlo wave function) unraveling.

Density matrices are vectorized column-major (order='F'), so vec(A rho B) =
(B^T kron A) vec(rho). Steady states come from a direct sparse kernel solve
with a trace-normalization row; time evolution uses Krylov action of the
Liouvillian exponential on the vectorized state.

The jump unraveling propagates a batch of walks with a precomputed dense
exponential of the drift generator H - (i/2) sum C^dag C. Between jumps the
squared norm decays monotonically, so a threshold crossing inside a step can
always be localized by halving the step with a ladder of fractional
exponentials; jump times are resolved to dt / 2**BISECT_LEVELS. Every walk
owns a counter-derived random stream, so results are reproducible for a given
(seed, walk index) regardless of batching or walk count.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
import scipy.linalg

from .hilbert import HilbertSpace, InvalidConfigurationError, SparseOperator, basis_state
from .model import SystemConfig, build_hamiltonian, collapse_operators

MAX_LIOUVILLIAN_DIM = 256  # Hilbert dimension; superoperator is the square
BISECT_LEVELS = 10
MAX_MCWF_DIM = 4096

STEADY_STATE_RTOL = 1e-10
TRACE_DRIFT_TOL = 1e-8


class ConvergenceError(RuntimeError):
    """A solver finished without meeting its accuracy contract."""


@dataclass(frozen=True)
class DensityMatrix:
    space: HilbertSpace
    matrix: np.ndarray

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def expect(self, op: SparseOperator) -> complex:
        if op.space != self.space:
            raise InvalidConfigurationError("operator and state live on different spaces")
        return complex(np.trace(op.tocsr() @ self.matrix))

    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))

    def smallest_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.conj().T))[0])


def expectation(op: SparseOperator, state) -> complex:
    """Tr(op rho) for a DensityMatrix, or <psi|op|psi> for a vector."""
    if isinstance(state, DensityMatrix):
        return state.expect(op)
    psi = np.asarray(state)
    return complex(psi.conj() @ (op.tocsr() @ psi))


def ground_vector(space: HilbertSpace) -> np.ndarray:
    """|g, 0...0>, the default initial state."""
    return basis_state(space, 0, (0,) * space.n_modes)


def vec_density(rho: np.ndarray) -> np.ndarray:
    return rho.reshape(-1, order="F")


def unvec_density(v: np.ndarray, dim: int) -> np.ndarray:
    return v.reshape((dim, dim), order="F")


@dataclass(frozen=True)
class Liouvillian:
    space: HilbertSpace
    matrix: sp.csr_array  # (dim^2, dim^2)

    @property
    def dim(self) -> int:
        return self.space.total_dim

    def norm_fro(self) -> float:
        return float(spla.norm(self.matrix, "fro"))


def build_liouvillian(config: SystemConfig, max_dim: int = MAX_LIOUVILLIAN_DIM) -> Liouvillian:
    """Master-equation generator in the vectorized representation."""
    if config.frame not in ("rotating_cavity_drive", "rotating_qubit_drive"):
        raise InvalidConfigurationError(
            "the dissipators are written in the rotating frames; "
            f"frame {config.frame!r} is not supported here"
        )
    space = config.space()
    dim = space.total_dim
    if dim > max_dim:
        raise InvalidConfigurationError(
            f"Hilbert dimension {dim} exceeds the Liouvillian cap {max_dim}; "
            "lower the cutoffs or use the jump unraveling"
        )
    h = build_hamiltonian(config).tocsr()
    ident = sp.eye_array(dim, dtype=complex, format="csr")
    lio = -1j * (sp.kron(ident, h) - sp.kron(h.T, ident))
    for c_op in collapse_operators(config):
        c = c_op.tocsr()
        cdc = (c.conj().T @ c).tocsr()
        lio = lio + sp.kron(c.conj(), c)
        lio = lio - 0.5 * (sp.kron(ident, cdc) + sp.kron(cdc.T, ident))
    return Liouvillian(space, sp.csr_array(lio))


def _kernel_solve(lio: Liouvillian, pin_row: int) -> np.ndarray:
    """Solve L x = 0, Tr x = 1 by replacing one row with the trace functional."""
    dim = lio.dim
    n = dim * dim
    coo = sp.coo_array(lio.matrix)
    keep = coo.row != pin_row
    rows = np.concatenate([coo.row[keep], np.full(dim, pin_row)])
    cols = np.concatenate([coo.col[keep], np.arange(dim) * (dim + 1)])
    vals = np.concatenate([coo.data[keep], np.ones(dim, dtype=complex)])
    mod = sp.csc_array((vals, (rows, cols)), shape=(n, n))
    rhs = np.zeros(n, dtype=complex)
    rhs[pin_row] = 1.0
    with warnings.catch_warnings():
        # a singular pinned row is expected occasionally; the residual check
        # rejects its solution and the caller moves to the next candidate
        warnings.simplefilter("ignore", spla.MatrixRankWarning)
        return spla.spsolve(mod, rhs)


def steady_state(
    config: SystemConfig,
    *,
    method: str = "auto",
    rtol: float = STEADY_STATE_RTOL,
    max_dim: int = MAX_LIOUVILLIAN_DIM,
) -> DensityMatrix:
    """Unique fixed point of the master equation.

    The kernel route replaces one Liouvillian row with the trace row and
    solves directly, then verifies the residual against rtol * ||L|| and
    probes uniqueness with a second solve pinned elsewhere. Configurations
    with no dissipation on some channel are rejected upstream by the residual
    check rather than by inspecting the operators.
    """
    if method not in ("auto", "kernel", "evolve"):
        raise InvalidConfigurationError(f"unknown steady-state method {method!r}")
    if config.qubit_decay <= 0:
        raise InvalidConfigurationError("steady state requires strictly positive qubit decay")
    dim = config.space().total_dim
    if method == "auto":
        method = "kernel" if dim <= max_dim else "evolve"
    if method == "kernel":
        lio = build_liouvillian(config, max_dim=max_dim)
        scale = lio.norm_fro()
        n = dim * dim
        solutions = []
        for pin_row in (0, n // 2 + 1, n - 1):
            x = _kernel_solve(lio, pin_row)
            residual = float(np.linalg.norm(lio.matrix @ x))
            if not np.isfinite(residual) or residual > rtol * scale:
                continue
            solutions.append(x)
            if len(solutions) == 2:
                break
        if not solutions:
            raise ConvergenceError(
                f"kernel solve residual exceeded {rtol:g} * ||L|| for every pinned row"
            )
        if len(solutions) == 2:
            gap = float(np.linalg.norm(solutions[0] - solutions[1]))
            if gap > 1e-8 * max(1.0, float(np.linalg.norm(solutions[0]))):
                raise ConvergenceError(
                    f"two pinned-row solves disagree by {gap:.2e}: "
                    "the steady state looks non-unique"
                )
        rho = unvec_density(solutions[0], dim)
    else:
        rho = _steady_state_by_evolution(config, rtol=rtol)
    rho = 0.5 * (rho + rho.conj().T)
    rho = rho / np.trace(rho).real
    state = DensityMatrix(config.space(), rho)
    lowest = state.smallest_eigenvalue()
    if lowest < -1e-8:
        raise ConvergenceError(f"steady state has negative weight {lowest:.2e}")
    return state


def _steady_state_by_evolution(config: SystemConfig, rtol: float) -> np.ndarray:
    """Fallback for spaces above the direct-solve cap: march until stationary."""
    lio = build_liouvillian(config, max_dim=10 * MAX_LIOUVILLIAN_DIM)
    dim = lio.dim
    rates = [m.decay for m in config.modes] + [config.qubit_decay]
    horizon = 10.0 / min(rates)
    v = vec_density(np.eye(dim, dtype=complex) / dim)
    scale = lio.norm_fro()
    for _ in range(14):
        v = spla.expm_multiply(lio.matrix, v, start=0.0, stop=horizon, num=2, endpoint=True)[-1]
        v = v / np.trace(unvec_density(v, dim)).real
        if float(np.linalg.norm(lio.matrix @ v)) <= rtol * scale:
            return unvec_density(v, dim)
        horizon *= 2.0
    raise ConvergenceError("long-time evolution did not reach a stationary state")


def propagate(config: SystemConfig, rho0: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Density-matrix evolution on a uniform time grid.

    Returns an array of shape (len(times), dim, dim). The first grid point
    must be t=0 and carries rho0 unchanged.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) < 2:
        raise InvalidConfigurationError("need a 1-d time grid with at least two points")
    steps = np.diff(times)
    if times[0] != 0.0 or not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
        raise InvalidConfigurationError("time grid must be uniform and start at zero")
    lio = build_liouvillian(config)
    dim = lio.dim
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (dim, dim):
        raise InvalidConfigurationError(f"rho0 must be {dim}x{dim}")
    flat = spla.expm_multiply(
        lio.matrix, vec_density(rho0), start=times[0], stop=times[-1],
        num=len(times), endpoint=True,
    )
    out = np.array([unvec_density(row, dim) for row in flat])
    drift = np.abs(np.einsum("tii->t", out).real - np.trace(rho0).real)
    if drift.max() > TRACE_DRIFT_TOL:
        raise ConvergenceError(f"trace drifted by {drift.max():.2e} during propagation")
    return out


# ---------------------------------------------------------------------------
# Quantum-jump unraveling
# ---------------------------------------------------------------------------


@dataclass
class TrajectoryEnsemble:
    """Per-walk observable records from a batch of jump-unraveled walks."""

    times: np.ndarray
    values: dict  # name -> complex array (n_walks, n_times)
    jump_counts: np.ndarray  # (n_walks,)
    jump_log: list  # (walk, time, channel) tuples
    seed: int
    final_states: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_walks(self) -> int:
        return len(self.jump_counts)

    def mean(self, name: str) -> np.ndarray:
        return self.values[name].mean(axis=0)

    def stderr(self, name: str) -> np.ndarray:
        v = self.values[name]
        if v.shape[0] < 2:
            return np.full(v.shape[1], np.inf)
        spread = np.sqrt(v.real.std(axis=0, ddof=1) ** 2 + v.imag.std(axis=0, ddof=1) ** 2)
        return spread / math.sqrt(v.shape[0])


def _walk_rng(seed: int, walk: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed).jumped(walk))


def _draw_threshold(rng: np.random.Generator) -> float:
    r = rng.random()
    while r == 0.0:
        r = rng.random()
    return r


class _JumpStepper:
    """Drift exponentials at dt / 2^k plus the jump application logic."""

    def __init__(self, h_eff: np.ndarray, c_mats: list, dt: float):
        self.dt = dt
        self.c_mats = c_mats
        self.levels = [
            scipy.linalg.expm(-1j * h_eff * (dt / 2**k)) for k in range(BISECT_LEVELS + 1)
        ]

    def _apply_jump(self, phi: np.ndarray, rng: np.random.Generator):
        weights = np.array([np.linalg.norm(c @ phi) ** 2 for c in self.c_mats])
        total = weights.sum()
        if total <= 0.0:
            # norm loss without any open channel: numerically degenerate
            raise ConvergenceError("jump detected with zero total channel weight")
        channel = int(rng.choice(len(self.c_mats), p=weights / total))
        psi = self.c_mats[channel] @ phi
        return psi / np.linalg.norm(psi), channel

    def advance(self, psi, r, rng, level, t0, jump_times):
        """Advance by dt/2^level, resolving any threshold crossings inside."""
        phi = self.levels[level] @ psi
        if np.linalg.norm(phi) ** 2 >= r:
            return phi, r
        if level == BISECT_LEVELS:
            psi_new, channel = self._apply_jump(phi, rng)
            jump_times.append((t0 + self.dt / 2**level, channel))
            return psi_new, _draw_threshold(rng)
        half = self.dt / 2 ** (level + 1)
        psi, r = self.advance(psi, r, rng, level + 1, t0, jump_times)
        psi, r = self.advance(psi, r, rng, level + 1, t0 + half, jump_times)
        return psi, r


def quantum_walks(
    config: SystemConfig,
    psi0: np.ndarray,
    times: np.ndarray,
    n_walks: int,
    observables: dict,
    *,
    seed: int = 0,
    substeps: int = 1,
    keep_final_states: bool = False,
) -> TrajectoryEnsemble:
    """Batch of Monte Carlo wave-function walks on a uniform time grid.

    psi0 may be a single vector (shared by all walks) or a (dim, n_walks)
    matrix of per-walk initial states. Walk w draws all its randomness from
    stream (seed, w), so repeated calls reproduce bitwise and any subset of
    walk indices sees the same jump record; expectation values across
    different batch sizes agree to BLAS rounding. Expectations use the
    normalized state. With no open channels the evolution is norm-preserving
    and the jump machinery is skipped.
    """
    space = config.space()
    dim = space.total_dim
    if dim > MAX_MCWF_DIM:
        raise InvalidConfigurationError(f"dimension {dim} exceeds the walk cap {MAX_MCWF_DIM}")
    if n_walks < 1:
        raise InvalidConfigurationError("need at least one walk")
    times = np.asarray(times, dtype=float)
    steps = np.diff(times)
    if len(times) < 2 or not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
        raise InvalidConfigurationError("time grid must be uniform")
    if times[0] != 0.0:
        raise InvalidConfigurationError("time grid must start at zero")
    dt = float(steps[0]) / substeps

    h = build_hamiltonian(config).toarray()
    c_mats = [c.toarray() for c in collapse_operators(config)]
    h_eff = h.astype(complex)
    for c in c_mats:
        h_eff = h_eff - 0.5j * (c.conj().T @ c)
    dissipative = bool(c_mats)
    stepper = _JumpStepper(h_eff, c_mats, dt)
    u_full = stepper.levels[0]

    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.ndim == 1:
        batch = np.repeat(psi0[:, None], n_walks, axis=1)
    elif psi0.shape == (dim, n_walks):
        batch = psi0.copy()
    else:
        raise InvalidConfigurationError("psi0 must be (dim,) or (dim, n_walks)")
    batch = batch / np.linalg.norm(batch, axis=0, keepdims=True)

    obs_mats = {name: op.tocsr() for name, op in observables.items()}
    values = {
        name: np.empty((n_walks, len(times)), dtype=complex) for name in obs_mats
    }
    rngs = [_walk_rng(seed, w) for w in range(n_walks)]
    thresholds = np.array([_draw_threshold(rng) for rng in rngs]) if dissipative else None
    jump_counts = np.zeros(n_walks, dtype=int)
    jump_log: list = []

    def record(idx: int):
        norms2 = np.einsum("iw,iw->w", batch.conj(), batch).real
        for name, mat in obs_mats.items():
            applied = mat @ batch
            values[name][:, idx] = np.einsum("iw,iw->w", batch.conj(), applied) / norms2

    record(0)
    for t_idx in range(1, len(times)):
        for s in range(substeps):
            t0 = times[t_idx - 1] + s * dt
            stepped = u_full @ batch
            if dissipative:
                norms2 = np.einsum("iw,iw->w", stepped.conj(), stepped).real
                crossed = np.flatnonzero(norms2 < thresholds)
                for w in crossed:
                    jumps: list = []
                    psi_w, r_w = stepper.advance(
                        batch[:, w], thresholds[w], rngs[w], 0, t0, jumps
                    )
                    stepped[:, w] = psi_w
                    thresholds[w] = r_w
                    jump_counts[w] += len(jumps)
                    jump_log.extend((w, t, ch) for t, ch in jumps)
            batch = stepped
        record(t_idx)

    return TrajectoryEnsemble(
        times=times,
        values=values,
        jump_counts=jump_counts,
        jump_log=jump_log,
        seed=seed,
        final_states=batch.copy() if keep_final_states else None,
    )
