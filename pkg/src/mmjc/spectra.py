"""Two-time correlations, emission spectra, and linewidth extraction.

The stationary correlation g(tau) = <A^dag(tau) A(0)> is computed two ways:

  regression    propagate the non-state matrix A rho_ss under the master
                equation and trace against A^dag along the tau grid
  mcwf_two_step trajectory estimator: decompose A|psi><psi| into four rank-one
                pieces (1 +- A)|psi> and (1 -+ iA)|psi>, evolve each as an
                ordinary walk, and recombine the <A^dag> records

Spectra use the one-sided transform S(f) = 2 Re integral_0^inf g(tau)
exp(-2 pi i f tau) dtau, evaluated as a rectangle-rule FFT with the half-sample
endpoint correction, which makes the discrete Parseval identity
sum(S) df = g(0) exact. Frequencies are plain MHz in the drive rotating frame;
mode peaks land near their detunings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.optimize
import scipy.sparse.linalg as spla

from .hilbert import InvalidConfigurationError, SparseOperator, identity_op
from .model import QubitDrive, SystemConfig
from .dynamics import (
    ConvergenceError,
    DensityMatrix,
    Liouvillian,
    build_liouvillian,
    ground_vector,
    quantum_walks,
    steady_state,
    vec_density,
)

STATIONARITY_RTOL = 1e-8
TAIL_FRACTION = 0.01  # |g| must fall below this times g(0) by the window end
CHUNK = 64  # tau points propagated per Krylov call


@dataclass(frozen=True)
class CorrelationSeries:
    taus: np.ndarray  # us, uniform from 0
    values: np.ndarray  # complex g(tau)
    method: str  # "regression" | "mcwf_two_step"
    stderr: np.ndarray | None = None
    # long-time limit |<A>_ss|^2: the coherent (elastic) emission weight.
    # Zero when A already has its stationary mean subtracted.
    asymptote: float = 0.0

    def zero_lag(self) -> float:
        return float(self.values[0].real)


@dataclass(frozen=True)
class Spectrum:
    freqs: np.ndarray  # plain MHz, rotating frame, monotonic
    psd: np.ndarray  # real, fluctuation (inelastic) part
    zero_lag: float  # fluctuation g(0), for normalization checks
    coherent_weight: float = 0.0  # elastic delta weight removed before the FFT

    def integral(self) -> float:
        df = float(self.freqs[1] - self.freqs[0])
        return float(self.psd.sum() * df)


@dataclass(frozen=True)
class LorentzianFit:
    center: float  # MHz
    fwhm: float  # MHz
    amplitude: float
    baseline: float
    center_err: float
    fwhm_err: float
    residual_norm: float


def fluctuation_operator(op: SparseOperator, rho_ss: DensityMatrix) -> SparseOperator:
    """A - <A>_ss, removing the coherent (delta-like) emission component."""
    mean = rho_ss.expect(op)
    return op - mean * identity_op(op.space)


def _check_uniform(taus: np.ndarray) -> float:
    taus = np.asarray(taus, dtype=float)
    if taus.ndim != 1 or len(taus) < 4:
        raise InvalidConfigurationError("tau grid must be 1-d with at least 4 points")
    steps = np.diff(taus)
    if taus[0] != 0.0 or not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
        raise InvalidConfigurationError("tau grid must be uniform and start at zero")
    return float(steps[0])


def correlation_from_state(lio: Liouvillian, rho0: np.ndarray, op: SparseOperator,
                           taus: np.ndarray) -> CorrelationSeries:
    """g(tau) = Tr(A^dag e^{L tau}[A rho0]) without any stationarity requirement."""
    dtau = _check_uniform(taus)
    seed_matrix = op.tocsr() @ rho0
    # Tr(A^dag M) = vec(A)* . vec(M) in any consistent vectorization
    a_dag_vec = vec_density(op.toarray()).conj()
    v0 = vec_density(seed_matrix)
    values = np.empty(len(taus), dtype=complex)
    values[0] = a_dag_vec @ v0
    values[1:], _ = _propagate_traces_from(lio, v0, a_dag_vec, len(taus) - 1, dtau)
    return CorrelationSeries(np.asarray(taus, dtype=float), values, "regression")


def correlation_regression(lio: Liouvillian, rho_ss: DensityMatrix, op: SparseOperator,
                           taus: np.ndarray) -> CorrelationSeries:
    """Stationary two-time correlation via the regression route."""
    drift = float(np.linalg.norm(lio.matrix @ vec_density(rho_ss.matrix)))
    if drift > STATIONARITY_RTOL * lio.norm_fro():
        raise InvalidConfigurationError(
            f"input state is not stationary: ||L rho|| = {drift:.2e}"
        )
    return correlation_from_state(lio, rho_ss.matrix, op, taus)


def default_dtau(config: SystemConfig) -> float:
    """Sampling interval resolving the fastest expected spectral content."""
    w = [abs(m.detuning) + m.coupling for m in config.modes]
    w.append(abs(config.qubit_detuning))
    w.append(config.qubit_decay)
    if isinstance(config.drive, QubitDrive):
        w.append(abs(config.drive.rabi))
    f_max = max(max(w), 1.0) / (2.0 * math.pi)
    return 1.0 / (6.0 * f_max)


def stationary_correlation(
    config: SystemConfig,
    op: SparseOperator,
    *,
    dtau: float | None = None,
    window: float | None = None,
    fluctuation: bool = False,
    max_doublings: int = 7,
) -> CorrelationSeries:
    """Steady-state correlation with automatic tau-window sizing.

    The window doubles until |g| over the last 5% of the grid has fallen below
    TAIL_FRACTION of g(0); spectrally narrowed lines decay much slower than the
    bare rates, so no fixed multiple of 1/kappa is safe.
    """
    lio = build_liouvillian(config)
    rho_ss = steady_state(config)
    if fluctuation:
        a = fluctuation_operator(op, rho_ss)
        asymptote = 0.0
    else:
        a = op
        asymptote = abs(rho_ss.expect(op)) ** 2
    if dtau is None:
        dtau = default_dtau(config)
    if window is None:
        rates = [m.decay for m in config.modes] + [config.qubit_decay]
        window = 2.0 * math.log(100.0) / min(rates)
    a_dag_vec = vec_density(a.toarray()).conj()
    v = vec_density(a.tocsr() @ rho_ss.matrix)
    drift = float(np.linalg.norm(lio.matrix @ vec_density(rho_ss.matrix)))
    if drift > STATIONARITY_RTOL * lio.norm_fro():
        raise InvalidConfigurationError(f"steady state failed stationarity: {drift:.2e}")

    n_seg = max(int(round(window / dtau)), 8)
    values = np.empty(1 + n_seg, dtype=complex)
    values[0] = a_dag_vec @ v
    # decay is judged on the fluctuation part, which falls to zero; the raw
    # correlation levels off at the coherent weight |<A>|^2 instead
    g0_fluct = abs(values[0] - asymptote)
    scale = g0_fluct if g0_fluct > 0 else 1.0
    total = 0
    for attempt in range(max_doublings + 1):
        seg = _propagate_traces_from(lio, v, a_dag_vec, n_seg, dtau)
        values[total + 1 : total + 1 + n_seg] = seg[0]
        v = seg[1]
        total += n_seg
        tail = np.abs(values[max(1, total - max(total // 20, 4)) : total + 1] - asymptote)
        if tail.max() <= TAIL_FRACTION * scale:
            break
        if attempt == max_doublings:
            raise ConvergenceError(
                f"correlation tail still {tail.max() / scale:.3f} of g(0) after "
                f"{total * dtau:.1f} us; raise the window cap"
            )
        n_seg = total  # double the window
        values = np.concatenate([values, np.empty(n_seg, dtype=complex)])
    taus = dtau * np.arange(total + 1)
    return CorrelationSeries(taus, values[: total + 1], "regression", asymptote=asymptote)


def _propagate_traces_from(lio, v, a_dag_vec, n_points, dtau):
    """n_points further trace values beyond the state v, plus the end state."""
    out = np.empty(n_points, dtype=complex)
    done = 0
    while done < n_points:
        take = min(CHUNK, n_points - done)
        seg = spla.expm_multiply(
            lio.matrix, v, start=0.0, stop=take * dtau, num=take + 1, endpoint=True
        )
        out[done : done + take] = seg[1:] @ a_dag_vec
        v = seg[-1]
        done += take
    return out, v


def correlation_mcwf(
    config: SystemConfig,
    op: SparseOperator,
    taus: np.ndarray,
    n_walks: int,
    base_seed: int,
    *,
    t_relax: float | None = None,
    fluctuation: bool = False,
) -> CorrelationSeries:
    """Trajectory two-step estimator of the stationary correlation.

    Step one relaxes an ensemble to the stationary regime and keeps each
    walk's state. Step two decomposes A|psi><psi| by polarization into the
    four rank-one states (1 +- A)|psi>, (1 -+ iA)|psi>, evolves each with its
    own stream, and recombines per walk:
        C(tau) = (1/4) [ (m1 - m2) - i (m3 - m4) ],
        m_k(tau) = ||chi_k||^2 <A^dag(tau)>_{chi_k normalized}.
    """
    _check_uniform(taus)
    space = config.space()
    if t_relax is None:
        rates = [m.decay for m in config.modes] + [config.qubit_decay]
        rates = [r for r in rates if r > 0]
        if not rates:
            raise InvalidConfigurationError("two-step estimator needs dissipation")
        t_relax = 10.0 / min(rates)
    relax_grid = np.linspace(0.0, t_relax, 201)
    stage1 = quantum_walks(
        config, ground_vector(space), relax_grid, n_walks, {}, seed=base_seed,
        keep_final_states=True,
    )
    psis = stage1.final_states / np.linalg.norm(stage1.final_states, axis=0, keepdims=True)

    a_csr0 = op.tocsr()
    means = np.einsum("iw,iw->w", psis.conj(), a_csr0 @ psis)
    mean = complex(means.mean())
    if fluctuation:
        # subtract the ensemble-stationary mean of A
        a_op = op - mean * identity_op(space)
        asymptote = 0.0
    else:
        a_op = op
        asymptote = abs(mean) ** 2
    a = a_op.tocsr()

    signs = (1.0, -1.0, -1j, 1j)
    prefactors = (1.0, -1.0, 1j, -1j)  # chi_k = (1 + p_k A) |psi>
    contrib = np.zeros((4, n_walks, len(taus)), dtype=complex)
    a_dag = a_op.dag()
    for k, p in enumerate(prefactors):
        chi = psis + p * (a @ psis)
        norms = np.linalg.norm(chi, axis=0)
        live = norms > 1e-12
        if not np.any(live):
            continue
        chi_live = chi[:, live] / norms[live]
        ens = quantum_walks(
            config, chi_live, taus, int(live.sum()), {"a_dag": a_dag},
            seed=base_seed + 1_000_003 * (k + 1),
        )
        contrib[k, live, :] = ens.values["a_dag"] * (norms[live] ** 2)[:, None]
    per_walk = 0.25 * (
        signs[0] * contrib[0] + signs[1] * contrib[1]
        + signs[2] * contrib[2] + signs[3] * contrib[3]
    )
    values = per_walk.mean(axis=0)
    if n_walks > 1:
        spread = np.sqrt(
            per_walk.real.std(axis=0, ddof=1) ** 2 + per_walk.imag.std(axis=0, ddof=1) ** 2
        )
        stderr = spread / math.sqrt(n_walks)
    else:
        stderr = np.full(len(taus), np.inf)
    return CorrelationSeries(
        np.asarray(taus, dtype=float), values, "mcwf_two_step", stderr,
        asymptote=asymptote,
    )


# ---------------------------------------------------------------------------
# Spectrum and fitting
# ---------------------------------------------------------------------------


def emission_spectrum(corr: CorrelationSeries, pad_factor: int = 4) -> Spectrum:
    """One-sided power spectral density of a decayed correlation series.

    The coherent asymptote |<A>|^2 carried by the series would transform into
    a delta spike at zero frequency; it is subtracted before the FFT and
    reported as coherent_weight so the PSD holds only the fluctuation part.
    Zero-padding refines the plotted grid by interpolation; the physical
    resolution stays 1/(tau window).
    """
    dtau = _check_uniform(corr.taus)
    g = corr.values - corr.asymptote
    g0 = abs(g[0])
    if g0 > 0 and abs(g[-1]) > TAIL_FRACTION * g0 * 1.0000001:
        raise ConvergenceError(
            f"correlation has only decayed to {abs(g[-1]) / g0:.3f} of g(0); "
            "extend the tau window before transforming"
        )
    n = len(g) * max(int(pad_factor), 1)
    transform = np.fft.fft(g, n=n)
    psd = 2.0 * dtau * transform.real - dtau * g[0].real
    freqs = np.fft.fftfreq(n, d=dtau)  # cycles/us = plain MHz
    order = np.argsort(freqs)
    return Spectrum(
        freqs[order], psd[order], zero_lag=float(g[0].real),
        coherent_weight=corr.asymptote,
    )


def _lorentzian(f, amplitude, center, fwhm, baseline):
    half = fwhm / 2.0
    return amplitude * half**2 / ((f - center) ** 2 + half**2) + baseline


def fit_linewidth(
    spectrum: Spectrum,
    center: float | None = None,
    halfwidth: float | None = None,
) -> LorentzianFit:
    """Lorentzian + constant baseline least-squares fit around one peak.

    center/halfwidth select the fit window in MHz; by default the global
    maximum is taken and the window spans the whole grid. The peak must be
    interior to the window.
    """
    f, s = spectrum.freqs, spectrum.psd
    if center is not None:
        hw = halfwidth if halfwidth is not None else (f[-1] - f[0]) / 4
        mask = np.abs(f - center) <= hw
        if mask.sum() < 8:
            raise InvalidConfigurationError("fit window contains fewer than 8 points")
        f, s = f[mask], s[mask]
    i_peak = int(np.argmax(s))
    if i_peak in (0, len(s) - 1):
        raise ConvergenceError("no interior peak in the fit window")
    baseline0 = float(np.median(np.concatenate([s[:3], s[-3:]])))
    amp0 = float(s[i_peak] - baseline0)
    if amp0 <= 0:
        raise ConvergenceError("window maximum does not rise above the baseline")
    half_level = baseline0 + amp0 / 2.0
    above = s >= half_level
    left = i_peak
    while left > 0 and above[left]:
        left -= 1
    right = i_peak
    while right < len(s) - 1 and above[right]:
        right += 1
    fwhm0 = max(float(f[right] - f[left]), 2.0 * float(f[1] - f[0]))
    try:
        popt, pcov = scipy.optimize.curve_fit(
            _lorentzian, f, s,
            p0=(amp0, float(f[i_peak]), fwhm0, baseline0),
            bounds=(
                (0.0, float(f[0]), 1e-9, -np.inf),
                (np.inf, float(f[-1]), float(f[-1] - f[0]) * 2, np.inf),
            ),
            maxfev=20000,
        )
    except RuntimeError as exc:
        raise ConvergenceError(f"Lorentzian fit did not converge: {exc}") from exc
    perr = np.sqrt(np.abs(np.diag(pcov)))
    residual = float(np.linalg.norm(_lorentzian(f, *popt) - s))
    return LorentzianFit(
        center=float(popt[1]), fwhm=float(popt[2]),
        amplitude=float(popt[0]), baseline=float(popt[3]),
        center_err=float(perr[1]), fwhm_err=float(perr[2]),
        residual_norm=residual,
    )
