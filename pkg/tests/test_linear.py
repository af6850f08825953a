"""Single-excitation linear response tests.

Frozen anchors, derived by hand before the implementation:
  - one mode, qubit resonant: arrowhead eigenvalues are exactly w +- g,
    so the transmission doublet splits by 2g and |t| = 1 at both peaks
    when the qubit is lossless, with an exact zero at the center
  - decoupled mode: power transmission is Lorentzian with FWHM = kappa
    and unit peak height
  - coupling ladder g_m = 3.75 sqrt(m+1) for m = 74, 75, 76:
    32.47595, 32.69174, 32.90611; with all three modes an FSR apart the
    chained 4x4 eigenvalue gaps at resonance are 62.7962, 57.7882, 63.5546,
    visibly squeezed below the isolated-pair values 2 g_m
  - arrowhead eigenvalues Cauchy-interlace the bare mode frequencies and
    are 1-Lipschitz in the qubit frequency (rank-one Weyl bound)
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmjc.hilbert import InvalidConfigurationError, make_space
from mmjc.linear import (
    CouplingFit,
    ManifoldSpectrum,
    TransmissionMap,
    extract_peaks,
    first_manifold,
    fit_g0,
    fit_g0_from_map,
    manifold_sweep,
    weak_probe_transmission,
)
from mmjc.model import CavityDrive, ModeSpec, SystemConfig, bare_hamiltonian, from_mhz

FSR = 92.0
FIG2_MODES = (6900.0, 6992.0, 7084.0)
FIG2_INDICES = (74, 75, 76)
G0_TRUE = 3.75
FIG2_COUPLINGS = tuple(G0_TRUE * math.sqrt(m + 1) for m in FIG2_INDICES)


# --- first manifold --------------------------------------------------------


def test_decoupled_eigenvalues_are_bare_frequencies():
    evals, _ = first_manifold([0.0, 0.0], [10.0, 30.0], 20.0)
    assert np.allclose(evals, [10.0, 20.0, 30.0], atol=1e-12)


def test_resonant_pair_splits_by_twice_the_coupling():
    evals, vecs = first_manifold([4.0], [100.0], 100.0)
    assert np.allclose(evals, [96.0, 104.0], atol=1e-12)
    # both branches half qubit, half photon at exact resonance
    assert np.allclose(np.abs(vecs[0]) ** 2, [0.5, 0.5], atol=1e-12)

    # a far-detuned spectator barely perturbs the resonant splitting
    evals3, _ = first_manifold([4.0, 4.0], [100.0, 3000.0], 100.0)
    splitting = evals3[1] - evals3[0]
    assert splitting == pytest.approx(8.0, rel=1e-3)


def test_input_validation():
    with pytest.raises(InvalidConfigurationError):
        first_manifold([], [], 5.0)
    with pytest.raises(InvalidConfigurationError):
        first_manifold([1.0, 2.0], [10.0], 5.0)
    with pytest.raises(InvalidConfigurationError):
        first_manifold([np.nan], [10.0], 5.0)


def test_matches_single_excitation_block_of_full_hamiltonian():
    """Arrowhead eigenvalues are ground-to-manifold transition frequencies
    of the undriven multimode Hamiltonian."""
    delta = (from_mhz(100.0), from_mhz(-100.0))
    g = from_mhz(15.0)
    delta_a = from_mhz(7.0)
    config = SystemConfig(
        modes=(ModeSpec(delta[0], from_mhz(1.0), g), ModeSpec(delta[1], from_mhz(1.0), g)),
        qubit_detuning=delta_a,
        qubit_decay=0.0,
        drive=CavityDrive(0, 0.0),
        cutoffs=(1, 1),
        frame="rotating_cavity_drive",
    )
    h = bare_hamiltonian(config).toarray()
    space = config.space()
    idx = [
        space.basis_index(1, (0, 0)),
        space.basis_index(0, (1, 0)),
        space.basis_index(0, (0, 1)),
    ]
    block = h[np.ix_(idx, idx)]
    ground_energy = h[space.basis_index(0, (0, 0)), space.basis_index(0, (0, 0))]
    transitions = np.linalg.eigvalsh(block) - ground_energy.real
    evals, _ = first_manifold([g, g], list(delta), delta_a)
    assert np.allclose(transitions, evals, atol=1e-9)


@given(
    n_modes=st.integers(1, 5),
    start=st.floats(-100.0, 100.0),
    gaps=st.lists(st.floats(1.0, 50.0), min_size=5, max_size=5),
    couplings=st.lists(st.floats(0.05, 5.0), min_size=5, max_size=5),
    qubit=st.floats(-200.0, 200.0),
)
@settings(max_examples=60, deadline=None)
def test_eigenvalues_interlace_bare_modes(n_modes, start, gaps, couplings, qubit):
    freqs = start + np.cumsum(gaps[:n_modes])
    evals, _ = first_manifold(couplings[:n_modes], freqs, qubit)
    tol = 1e-9 * (1.0 + np.abs(freqs).max())
    assert len(evals) == n_modes + 1
    for k in range(n_modes):
        assert evals[k] <= freqs[k] + tol
        assert freqs[k] <= evals[k + 1] + tol


@given(
    n_modes=st.integers(1, 4),
    qubit_lo=st.floats(-150.0, 0.0),
    qubit_hi=st.floats(1.0, 150.0),
)
@settings(max_examples=40, deadline=None)
def test_sweep_is_continuous_with_normalized_weights(n_modes, qubit_lo, qubit_hi):
    freqs = np.linspace(-60.0, 60.0, n_modes + 2)[1:-1]
    sweep = manifold_sweep(
        np.full(n_modes, 3.0), freqs, np.linspace(qubit_lo, qubit_hi, 41)
    )
    assert sweep.n_branches == n_modes + 1
    per_branch = sweep.qubit_weights + sweep.mode_weights.sum(axis=2)
    assert np.allclose(per_branch, 1.0, atol=1e-10)
    # the qubit distributes across branches with unit total weight
    assert np.allclose(sweep.qubit_weights.sum(axis=1), 1.0, atol=1e-10)


def test_sweep_rejects_discontinuous_data():
    good = manifold_sweep([3.0], [0.0], np.linspace(-20.0, 20.0, 21))
    jumbled = good.eigenvalues.copy()
    jumbled[10] += 30.0
    with pytest.raises(InvalidConfigurationError):
        ManifoldSpectrum(good.qubit_freqs, jumbled, good.qubit_weights, good.mode_weights)


# --- weak-probe transmission -----------------------------------------------


def test_decoupled_mode_transmits_a_unit_lorentzian():
    probe = np.linspace(45.0, 55.0, 1001)  # grid hits 49.5, 50.0, 50.5 exactly
    tmap = weak_probe_transmission([0.0], [50.0], [1.0], [-500.0], probe)
    power = tmap.power()[0]
    assert abs(tmap.amplitude[0, np.argmax(power)]) == pytest.approx(1.0, abs=1e-12)
    assert probe[np.argmax(power)] == pytest.approx(50.0, abs=1e-12)
    # half maximum exactly half a linewidth away: power FWHM = kappa
    assert power[probe.searchsorted(49.5)] == pytest.approx(0.5, abs=1e-9)
    assert power[probe.searchsorted(50.5)] == pytest.approx(0.5, abs=1e-9)
    (peaks,) = extract_peaks(tmap)
    assert np.allclose(peaks, [50.0])


def test_resonant_doublet_splits_by_twice_the_coupling():
    probe = np.linspace(-50.0, 50.0, 2001)  # step 0.05, hits 0 and +-10
    tmap = weak_probe_transmission([10.0], [0.0], [1.0], [0.0], probe)
    amp = tmap.amplitude[0]
    center = np.searchsorted(probe, 0.0)
    assert abs(amp[center]) < 1e-12  # exact interference zero at the bare line
    for f in (-10.0, 10.0):
        assert abs(amp[np.searchsorted(probe, f)]) == pytest.approx(1.0, abs=1e-9)
    (peaks,) = extract_peaks(tmap)
    assert np.allclose(sorted(peaks), [-10.0, 10.0], atol=0.05)


def test_transmission_validation():
    with pytest.raises(InvalidConfigurationError):
        weak_probe_transmission([1.0], [0.0], [0.0], [0.0], [0.0, 1.0])
    with pytest.raises(InvalidConfigurationError):
        weak_probe_transmission([1.0], [0.0], [1.0, 2.0], [0.0], [0.0, 1.0])
    with pytest.raises(InvalidConfigurationError):
        weak_probe_transmission([1.0], [0.0], [1.0], [0.0], [0.0, 1.0], qubit_decay=-1.0)


def test_zero_coupling_peaks_sit_at_bare_modes():
    probe = np.linspace(6850.0, 7134.0, 2841)  # 0.1 MHz bins
    tmap = weak_probe_transmission(
        [0.0, 0.0, 0.0], FIG2_MODES, [1.0, 1.0, 1.0], [6900.0, 7000.0], probe
    )
    for peaks in extract_peaks(tmap):
        assert len(peaks) == 3
        assert np.allclose(peaks, FIG2_MODES, atol=0.1)


@given(
    n_modes=st.integers(1, 4),
    gap=st.floats(25.0, 60.0),
    kappa=st.floats(0.2, 1.0),
    coupling=st.floats(0.0, 10.0),
    qubit_offset=st.floats(-30.0, 30.0),
    gamma=st.floats(0.0, 2.0),
)
@settings(max_examples=50, deadline=None)
def test_transmission_respects_the_passive_bound(
    n_modes, gap, kappa, coupling, qubit_offset, gamma
):
    freqs = gap * np.arange(n_modes)
    probe = np.linspace(freqs.min() - 20.0, freqs.max() + 20.0, 801)
    tmap = weak_probe_transmission(
        np.full(n_modes, coupling),
        freqs,
        np.full(n_modes, kappa),
        [freqs.mean() + qubit_offset],
        probe,
        qubit_decay=gamma,
    )
    assert np.abs(tmap.amplitude).max() <= 1.0 + 1e-3


def test_chained_avoided_crossing_map():
    """Three modes an FSR apart produce bright lines spaced by 92 MHz whose
    crossings split as sqrt(m+1), with no dispersive plateau anywhere."""
    qubit_grid = np.linspace(FIG2_MODES[1] - 2 * FSR, FIG2_MODES[1] + 2 * FSR, 185)
    probe = np.linspace(6850.0, 7134.0, 1421)  # 0.2 MHz bins
    tmap = weak_probe_transmission(
        FIG2_COUPLINGS, FIG2_MODES, [1.0, 1.0, 1.0], qubit_grid, probe,
        qubit_decay=0.2,
    )
    assert np.abs(tmap.amplitude).max() <= 1.0 + 1e-3

    # bright vertical lines: brightness centroids near each bare mode, 92 apart
    power = tmap.power()
    centroids = []
    for f_mode in FIG2_MODES:
        window = np.abs(probe - f_mode) < 30.0
        weight = power[:, window].sum(axis=0)
        centroids.append(float(probe[window] @ weight / weight.sum()))
    spacings = np.diff(centroids)
    assert np.allclose(centroids, FIG2_MODES, atol=5.0)
    assert np.allclose(spacings, FSR, atol=5.0)

    # transmission doublets land on the chained-model eigenvalue gaps, which
    # the neighboring modes squeeze well below the bare 2 g_m values
    def oracle_gap(qubit_freq, mode_freq):
        h = np.zeros((4, 4))
        h[0, 0] = qubit_freq
        h[1:, 1:] = np.diag(FIG2_MODES)
        h[0, 1:] = h[1:, 0] = FIG2_COUPLINGS
        evals = np.linalg.eigvalsh(h)
        pair = np.sort(np.abs(evals - mode_freq).argsort()[:2])
        return evals[pair[1]] - evals[pair[0]]

    expected_gaps = [oracle_gap(f, f) for f in FIG2_MODES]
    assert np.allclose(expected_gaps, [62.7962, 57.7882, 63.5546], atol=1e-3)
    for f_mode, expected in zip(FIG2_MODES, expected_gaps):
        fine = np.linspace(f_mode - 50.0, f_mode + 50.0, 5001)  # 0.02 MHz bins
        row = weak_probe_transmission(
            FIG2_COUPLINGS, FIG2_MODES, [1.0, 1.0, 1.0], [f_mode], fine,
            qubit_decay=0.2,
        )
        (peaks,) = extract_peaks(row)
        doublet = peaks[np.abs(peaks - f_mode) < 45.0]
        assert len(doublet) == 2
        assert doublet[1] - doublet[0] == pytest.approx(expected, abs=0.06)

    # sqrt(m+1) ladder: fitting each crossing alone, with the chained model,
    # recovers one consistent g0
    per_crossing = []
    for f_mode in FIG2_MODES:
        rows = [f_mode + off for off in (-10.0, -4.0, 0.0, 4.0, 10.0)]
        fine = np.linspace(f_mode - 60.0, f_mode + 60.0, 2401)
        local = weak_probe_transmission(
            FIG2_COUPLINGS, FIG2_MODES, [1.0, 1.0, 1.0], rows, fine,
            qubit_decay=0.2,
        )
        fit = fit_g0_from_map(local, FIG2_MODES, FIG2_INDICES, g0_guess=2.0)
        per_crossing.append(fit.g0)
        assert fit.g0 == pytest.approx(G0_TRUE, rel=0.01)
    assert max(per_crossing) - min(per_crossing) < 0.005 * G0_TRUE

    # no dispersive plateau: the middle mode never relaxes to its bare line
    sweep = manifold_sweep(FIG2_COUPLINGS, FIG2_MODES, qubit_grid)
    min_distance = np.abs(sweep.eigenvalues - FIG2_MODES[1]).min()
    assert min_distance > 4.0


# --- coupling fits ----------------------------------------------------------


def test_fit_g0_round_trip_on_synthetic_map():
    qubit_rows = [f + off for f in FIG2_MODES for off in (-20.0, -8.0, 0.0, 8.0, 20.0)]
    probe = np.linspace(6850.0, 7134.0, 2841)  # 0.1 MHz bins
    tmap = weak_probe_transmission(
        FIG2_COUPLINGS, FIG2_MODES, [1.0, 1.0, 1.0], qubit_rows, probe,
        qubit_decay=0.2,
    )
    fit = fit_g0_from_map(tmap, FIG2_MODES, FIG2_INDICES, g0_guess=2.0)
    assert fit.g0 == pytest.approx(G0_TRUE, rel=0.01)
    assert fit.g0 * math.sqrt(76.0) == pytest.approx(32.69174, rel=0.01)
    assert fit.g0_err < 0.02
    assert fit.n_peaks >= 2 * len(qubit_rows)


def test_fit_g0_exact_on_noiseless_single_crossing():
    fit = fit_g0([100.0], [[96.8, 103.2]], [100.0], [0], g0_guess=1.0)
    assert fit.g0 == pytest.approx(3.2, abs=1e-9)
    assert fit.residual_norm < 1e-9
    assert fit.g0_err == pytest.approx(0.0, abs=1e-9)


def test_fit_g0_underdetermined_inputs():
    with pytest.raises(InvalidConfigurationError):
        fit_g0([100.0], [[]], [100.0], [0])
    with pytest.raises(InvalidConfigurationError):
        fit_g0([100.0], [[101.0]], [100.0], [0])
    # a qubit parked absurdly far away leaves the peaks blind to g0
    with pytest.raises(InvalidConfigurationError):
        fit_g0([1e9], [[1000.0, 1000.5]], [1000.0], [0])
    with pytest.raises(InvalidConfigurationError):
        fit_g0([100.0], [[99.0, 101.0]], [100.0], [0, 1])
