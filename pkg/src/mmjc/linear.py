"""Single-excitation linear response: manifold spectra, weak-probe
transmission, and vacuum-Rabi coupling fits.

A weak probe injects at most one excitation, so avoided-crossing physics
lives in the (M+1) x (M+1) arrowhead block spanned by the excited qubit and
the M one-photon states. Transmission through the cavity is modeled by
inverting that block with the two-port dissipator subtracted: symmetric
input/output ports of rate kappa_m/2 sit at the two ends of the line, and
standing-wave modes alternate parity at the output end. The dissipator
contributes -i kappa_m/2 on each mode diagonal plus the port-mediated cross
terms that make the frequency response of the passive network a strict
contraction, |t| <= 1, even where the qubit hybridizes neighboring modes.

Everything here is unit agnostic: frequencies come back in whatever unit
they were supplied in. The rest of the package feeds plain MHz.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.optimize
from scipy.signal import find_peaks

from .hilbert import InvalidConfigurationError

SOLVE_CHUNK = 65536  # probe points inverted per batched solve


def _as_float_1d(values, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if arr.ndim != 1:
        raise InvalidConfigurationError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(arr)):
        raise InvalidConfigurationError(f"{name} must be finite")
    return arr


def _mode_arrays(couplings, mode_freqs):
    g = _as_float_1d(couplings, "couplings")
    w = _as_float_1d(mode_freqs, "mode_freqs")
    if len(g) != len(w):
        raise InvalidConfigurationError(
            f"{len(g)} couplings for {len(w)} mode frequencies"
        )
    if len(w) == 0:
        raise InvalidConfigurationError("at least one mode is required")
    return g, w


def _arrowhead(couplings: np.ndarray, mode_freqs: np.ndarray, qubit_freq: float) -> np.ndarray:
    dim = len(mode_freqs) + 1
    h = np.zeros((dim, dim))
    h[0, 0] = qubit_freq
    idx = np.arange(1, dim)
    h[idx, idx] = mode_freqs
    h[0, 1:] = couplings
    h[1:, 0] = couplings
    return h


def first_manifold(couplings, mode_freqs, qubit_freq: float):
    """Eigensystem of the one-excitation block.

    Row/column 0 is the excited qubit, rows 1..M the one-photon states, so
    the matrix is the Hermitian arrowhead diag(qubit, modes) bordered by the
    couplings. Returns (eigenvalues ascending, eigenvector columns). The
    eigenvalues are ground-to-manifold transition frequencies.
    """
    g, w = _mode_arrays(couplings, mode_freqs)
    return np.linalg.eigh(_arrowhead(g, w, float(qubit_freq)))


@dataclass(frozen=True)
class ManifoldSpectrum:
    """First-manifold eigensystem along a qubit-frequency sweep.

    Branches are index-aligned with ascending eigenvalue order at every
    sweep point, so curves are continuous but exchange character through
    each avoided crossing.
    """

    qubit_freqs: np.ndarray  # (Q,)
    eigenvalues: np.ndarray  # (Q, M+1), ascending along axis 1
    qubit_weights: np.ndarray  # (Q, M+1), |<qubit|branch>|^2
    mode_weights: np.ndarray  # (Q, M+1, M)

    def __post_init__(self):
        q, b = self.eigenvalues.shape
        if self.qubit_freqs.shape != (q,) or self.qubit_weights.shape != (q, b):
            raise InvalidConfigurationError("manifold sweep arrays disagree in shape")
        if self.mode_weights.shape != (q, b, b - 1):
            raise InvalidConfigurationError("mode weights must be (sweep, branch, mode)")
        if q > 1:
            # sorted eigenvalues are 1-Lipschitz in the qubit frequency
            # (Weyl bound with a rank-one unit-norm perturbation)
            dq = np.abs(np.diff(self.qubit_freqs))
            de = np.abs(np.diff(self.eigenvalues, axis=0))
            slack = 1e-9 * (1.0 + np.abs(self.eigenvalues).max())
            if not np.all(de <= dq[:, None] + slack):
                raise InvalidConfigurationError("eigenvalue branches are discontinuous")

    @property
    def n_branches(self) -> int:
        return self.eigenvalues.shape[1]


def manifold_sweep(couplings, mode_freqs, qubit_freqs) -> ManifoldSpectrum:
    """first_manifold evaluated along a qubit-frequency grid."""
    g, w = _mode_arrays(couplings, mode_freqs)
    grid = _as_float_1d(qubit_freqs, "qubit_freqs")
    n_modes = len(w)
    evals = np.empty((len(grid), n_modes + 1))
    qw = np.empty_like(evals)
    mw = np.empty((len(grid), n_modes + 1, n_modes))
    for i, f in enumerate(grid):
        e, v = np.linalg.eigh(_arrowhead(g, w, f))
        evals[i] = e
        prob = np.abs(v) ** 2
        qw[i] = prob[0]
        mw[i] = prob[1:].T
    return ManifoldSpectrum(grid, evals, qw, mw)


@dataclass(frozen=True)
class TransmissionMap:
    """Complex weak-probe transmission over probe x qubit frequency grids."""

    probe_freqs: np.ndarray  # (P,)
    qubit_freqs: np.ndarray  # (Q,)
    amplitude: np.ndarray  # (Q, P) complex

    def __post_init__(self):
        if self.amplitude.shape != (len(self.qubit_freqs), len(self.probe_freqs)):
            raise InvalidConfigurationError("amplitude grid must be (qubit, probe)")

    def power(self) -> np.ndarray:
        return np.abs(self.amplitude) ** 2


def weak_probe_transmission(
    couplings,
    mode_freqs,
    mode_decays,
    qubit_freqs,
    probe_freqs,
    *,
    qubit_decay: float = 0.0,
) -> TransmissionMap:
    """Linear-response transmission t(probe) for each qubit frequency.

    t = i <out| (f - A)^-1 |in> with A the arrowhead block minus the
    two-port dissipator (i/2)(|in><in| + |out><out|) and -i gamma/2 on the
    qubit, where the port vectors carry sqrt(kappa_m/2) per mode. The
    dissipator diagonal is -i kappa_m/2; its port-mediated cross terms make
    the scattering matrix a contraction, so |t| <= 1 holds rigorously
    instead of only approximately. Valid for a probe weak enough never to
    populate the two-excitation manifold; strictly positive kappa keeps the
    inversion regular. A decoupled resonant mode transmits |t| = 1 with a
    power FWHM of kappa_m.
    """
    g, w = _mode_arrays(couplings, mode_freqs)
    kappas = _as_float_1d(mode_decays, "mode_decays")
    if len(kappas) != len(w):
        raise InvalidConfigurationError(
            f"{len(kappas)} decay rates for {len(w)} modes"
        )
    if np.any(kappas <= 0):
        raise InvalidConfigurationError("mode decay rates must be positive")
    if qubit_decay < 0:
        raise InvalidConfigurationError("qubit decay must be >= 0")
    qgrid = _as_float_1d(qubit_freqs, "qubit_freqs")
    probe = _as_float_1d(probe_freqs, "probe_freqs")

    ports = np.sqrt(kappas / 2.0)
    v_in = np.concatenate(([0.0], ports))
    v_out = np.concatenate(([0.0], ports * (-1.0) ** np.arange(len(w))))
    loss = 0.5 * (np.outer(v_in, v_in) + np.outer(v_out, v_out))
    loss[0, 0] = qubit_decay / 2.0

    # a lossless fully decoupled qubit leaves an undamped real pole that the
    # response never sees; drop its row so an on-grid probe stays regular
    keep = slice(None) if qubit_decay > 0.0 or np.any(g != 0.0) else slice(1, None)
    v_in = v_in[keep].astype(complex)
    v_out = v_out[keep]
    loss = loss[keep, keep]

    dim = len(v_in)
    eye = np.eye(dim)
    amp = np.empty((len(qgrid), len(probe)), dtype=complex)
    for i, f_q in enumerate(qgrid):
        a_eff = _arrowhead(g, w, f_q)[keep, keep] - 1j * loss
        for start in range(0, len(probe), SOLVE_CHUNK):
            seg = probe[start : start + SOLVE_CHUNK]
            mats = seg[:, None, None] * eye - a_eff
            x = np.linalg.solve(mats, v_in[None, :, None])[..., 0]
            amp[i, start : start + len(seg)] = 1j * (x @ v_out)
    return TransmissionMap(probe, qgrid, amp)


def extract_peaks(tmap: TransmissionMap, rel_height: float = 0.1) -> list[np.ndarray]:
    """Probe frequencies of power-transmission maxima, one array per qubit row.

    The threshold is relative to the brightest point of the whole map, so
    rows where every resonance has moved out of the probe window come back
    empty rather than promoting noise-floor ripples.
    """
    power = tmap.power()
    floor = rel_height * power.max()
    out = []
    for row in power:
        idx, _ = find_peaks(row, height=floor)
        out.append(tmap.probe_freqs[idx])
    return out


@dataclass(frozen=True)
class CouplingFit:
    """Least-squares estimate of the base coupling g0."""

    g0: float
    g0_err: float
    residual_norm: float
    n_peaks: int


def fit_g0(
    qubit_freqs,
    peak_freqs,
    mode_freqs,
    mode_indices,
    *,
    g0_guess: float = 1.0,
) -> CouplingFit:
    """Fit g0 to peak positions under the ladder constraint g_m = g0 sqrt(m+1).

    Each observed peak contributes its distance to the nearest first-manifold
    eigenvalue computed with the trial g0; mode_indices supplies the absolute
    harmonic index m of each mode so the square-root ladder links all
    crossings to the single parameter. Raises when fewer than two peaks are
    supplied or when the data do not constrain g0 (no avoided crossing in
    range).
    """
    w = _as_float_1d(mode_freqs, "mode_freqs")
    ladder = np.sqrt(np.asarray(mode_indices, dtype=float) + 1.0)
    if len(ladder) != len(w):
        raise InvalidConfigurationError(
            f"{len(ladder)} mode indices for {len(w)} modes"
        )
    rows = [(float(q), _as_float_1d(p, "peak_freqs")) for q, p in zip(qubit_freqs, peak_freqs, strict=True)]
    n_peaks = sum(len(p) for _, p in rows)
    if n_peaks < 2:
        raise InvalidConfigurationError(
            "underdetermined fit: need at least two peak positions"
        )

    def residuals(params):
        g0 = params[0]
        out = np.empty(n_peaks)
        k = 0
        for q, peaks in rows:
            if len(peaks) == 0:
                continue
            evals = np.linalg.eigvalsh(_arrowhead(g0 * ladder, w, q))
            out[k : k + len(peaks)] = peaks - evals[
                np.abs(peaks[:, None] - evals[None, :]).argmin(axis=1)
            ]
            k += len(peaks)
        return out

    result = scipy.optimize.least_squares(
        residuals, x0=[float(g0_guess)], bounds=([0.0], [np.inf])
    )
    jac_norm = float(np.linalg.norm(result.jac))
    scale = max(float(np.abs(np.concatenate([p for _, p in rows if len(p)])).max()), 1.0)
    if jac_norm < 1e-9 * scale:
        raise InvalidConfigurationError(
            "underdetermined fit: peak positions are insensitive to g0"
        )
    dof = max(n_peaks - 1, 1)
    variance = 2.0 * result.cost / dof
    g0_err = float(np.sqrt(variance / (result.jac[:, 0] @ result.jac[:, 0])))
    return CouplingFit(
        g0=float(result.x[0]),
        g0_err=g0_err,
        residual_norm=float(np.linalg.norm(result.fun)),
        n_peaks=n_peaks,
    )


def fit_g0_from_map(
    tmap: TransmissionMap,
    mode_freqs,
    mode_indices,
    *,
    g0_guess: float = 1.0,
    rel_height: float = 0.1,
) -> CouplingFit:
    """extract_peaks followed by fit_g0 on every qubit row of the map."""
    peaks = extract_peaks(tmap, rel_height=rel_height)
    return fit_g0(
        tmap.qubit_freqs, peaks, mode_freqs, mode_indices, g0_guess=g0_guess
    )
