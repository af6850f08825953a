"""System configuration, Hamiltonians, and frame transformations.

All frequencies and rates held by these types are angular (rad/us): a value
quoted as "x MHz" enters as 2*pi*x. Config files carry plain MHz and are
converted on load. The drive rotating frame is implicit everywhere: mode and
qubit energies are detunings from the drive.

Frames
------
rotating_cavity_drive   H0 + i*eta*(a_r^dag - a_r), cavity drive on mode r
rotating_qubit_drive    H0 + (Omega/2)*(sigma+ + sigma-), drive on the qubit
polaron                 rotated qubit basis + state-dependent mode displacement
effective               truncated resonant interaction at order 1 or 2
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace
from typing import Union

import numpy as np
import scipy.linalg

from .hilbert import (
    HilbertSpace,
    InvalidConfigurationError,
    SparseOperator,
    _mode_factor_op,
    _qubit_factor_op,
    _wrap,
    annihilator,
    basis_state,
    number_op,
    qubit_op,
)

TWO_PI = 2.0 * math.pi

FRAMES = ("rotating_cavity_drive", "rotating_qubit_drive", "polaron", "effective")

CONFIG_SCHEMA_VERSION = 1


def from_mhz(value_mhz: float) -> float:
    """Plain MHz (the conventional 'over 2*pi' quotation) to rad/us."""
    return TWO_PI * value_mhz


def to_mhz(value_rad: float) -> float:
    return value_rad / TWO_PI


def coupling_strength(g0: float, m: int) -> float:
    """Coupling of the qubit to the m-th harmonic: g0 * sqrt(m+1)."""
    if m < 0:
        raise InvalidConfigurationError("harmonic index must be >= 0")
    if g0 < 0:
        raise InvalidConfigurationError("fundamental coupling must be >= 0")
    return g0 * math.sqrt(m + 1)


@dataclass(frozen=True)
class CouplingLadder:
    """Couplings for a set of harmonics generated from the fundamental g0."""

    g0: float
    harmonics: tuple[int, ...]

    @property
    def couplings(self) -> tuple[float, ...]:
        return tuple(coupling_strength(self.g0, m) for m in self.harmonics)


@dataclass(frozen=True)
class ModeSpec:
    """One cavity mode: detuning from the drive, photon decay, qubit coupling."""

    detuning: float  # rad/us
    decay: float  # rad/us, > 0
    coupling: float  # rad/us, >= 0

    def __post_init__(self):
        if self.decay <= 0:
            raise InvalidConfigurationError("mode decay must be > 0")
        if self.coupling < 0:
            raise InvalidConfigurationError("mode coupling must be >= 0")

    @classmethod
    def from_mhz(cls, detuning_mhz: float, decay_mhz: float, coupling_mhz: float) -> "ModeSpec":
        return cls(from_mhz(detuning_mhz), from_mhz(decay_mhz), from_mhz(coupling_mhz))


@dataclass(frozen=True)
class CavityDrive:
    """Coherent drive i*eta*(a_r^dag - a_r) on the resonant mode r."""

    mode_index: int
    amplitude: float  # eta, rad/us


@dataclass(frozen=True)
class QubitDrive:
    """Direct qubit drive (Omega/2)*(sigma+ + sigma-)."""

    rabi: float  # Omega, rad/us


Drive = Union[CavityDrive, QubitDrive]


@dataclass(frozen=True)
class SystemConfig:
    """All physical parameters of one simulation: modes, qubit, drive, frame."""

    modes: tuple[ModeSpec, ...]
    qubit_detuning: float  # Delta_a, rad/us
    qubit_decay: float  # gamma, rad/us
    drive: Drive
    cutoffs: tuple[int, ...]
    frame: str = "rotating_qubit_drive"
    effective_order: int | None = None
    drive_all_modes: bool = False  # robustness studies only; default resonant-mode drive

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "cutoffs", tuple(int(c) for c in self.cutoffs))
        if len(self.cutoffs) != len(self.modes):
            raise InvalidConfigurationError(
                f"{len(self.modes)} modes but {len(self.cutoffs)} cutoffs"
            )
        if self.qubit_decay < 0:
            raise InvalidConfigurationError("qubit decay must be >= 0")
        if self.frame not in FRAMES:
            raise InvalidConfigurationError(f"unknown frame {self.frame!r}")
        if self.frame == "effective":
            if self.effective_order not in (1, 2):
                raise InvalidConfigurationError("effective frame requires order 1 or 2")
            if len(self.modes) != 2:
                raise InvalidConfigurationError("effective frame is defined for two modes")
        if self.frame == "polaron" and len(self.modes) != 2:
            raise InvalidConfigurationError("polaron frame is defined for two modes")
        if isinstance(self.drive, CavityDrive):
            if self.frame != "rotating_cavity_drive":
                raise InvalidConfigurationError(
                    f"cavity drive requires frame rotating_cavity_drive, not {self.frame!r}"
                )
            if not 0 <= self.drive.mode_index < len(self.modes):
                raise InvalidConfigurationError(
                    f"drive mode index {self.drive.mode_index} out of range"
                )
        elif isinstance(self.drive, QubitDrive):
            if self.frame == "rotating_cavity_drive":
                raise InvalidConfigurationError(
                    "frame rotating_cavity_drive requires a cavity drive"
                )
        else:
            raise InvalidConfigurationError("drive must be CavityDrive or QubitDrive")

    def space(self) -> HilbertSpace:
        return HilbertSpace(self.cutoffs)


# ---------------------------------------------------------------------------
# Hamiltonians
# ---------------------------------------------------------------------------


def bare_hamiltonian(config: SystemConfig) -> SparseOperator:
    """Detuning terms plus excitation-conserving couplings, no drive."""
    space = config.space()
    sz = qubit_op(space, "sigma_z")
    sm = qubit_op(space, "sigma_minus")
    h = 0.5 * config.qubit_detuning * sz
    for m, mode in enumerate(config.modes):
        a = annihilator(space, m)
        h = h + mode.detuning * (a.dag() @ a)
        if mode.coupling != 0.0:
            h = h + mode.coupling * (a.dag() @ sm + (a.dag() @ sm).dag())
    return h


def build_hamiltonian(config: SystemConfig) -> SparseOperator:
    """Full rotating-frame Hamiltonian, including the drive term."""
    if config.frame not in ("rotating_cavity_drive", "rotating_qubit_drive"):
        raise InvalidConfigurationError(
            f"build_hamiltonian handles the rotating frames, not {config.frame!r}"
        )
    space = config.space()
    h = bare_hamiltonian(config)
    if isinstance(config.drive, CavityDrive):
        eta = config.drive.amplitude
        targets = range(len(config.modes)) if config.drive_all_modes else [config.drive.mode_index]
        for r in targets:
            a = annihilator(space, r)
            h = h + (1j * eta) * (a.dag() - a)
    else:
        sm = qubit_op(space, "sigma_minus")
        h = h + (0.5 * config.drive.rabi) * (sm.dag() + sm)
    return h


def collapse_operators(config: SystemConfig) -> list[SparseOperator]:
    """Rate-absorbed jump operators: sqrt(kappa_m) a_m and sqrt(gamma) sigma-."""
    space = config.space()
    ops = [math.sqrt(mode.decay) * annihilator(space, m) for m, mode in enumerate(config.modes)]
    if config.qubit_decay > 0:
        ops.append(math.sqrt(config.qubit_decay) * qubit_op(space, "sigma_minus"))
    return ops


# ---------------------------------------------------------------------------
# Displacement transformation and the equivalent qubit drive
# ---------------------------------------------------------------------------


def displacement_operator(space: HilbertSpace, mode_index: int, xi: float) -> SparseOperator:
    """Unitary displacement exp(xi*(a_r^dag - a_r)) on one mode.

    Valid only while the displaced coherent state fits comfortably below the
    cutoff; enforced as xi^2 < N_r / 4.
    """
    cutoff = space.mode_cutoffs[mode_index] if 0 <= mode_index < space.n_modes else None
    if cutoff is None:
        raise InvalidConfigurationError(f"mode index {mode_index} out of range")
    if xi != 0.0 and xi * xi >= cutoff / 4.0:
        raise InvalidConfigurationError(
            f"displacement xi={xi:.4g} too large for cutoff {cutoff}: need xi^2 < N/4"
        )
    d = cutoff + 1
    a = np.diag(np.sqrt(np.arange(1, d, dtype=float)), k=1).astype(complex)
    gen = xi * (a.conj().T - a)
    return _mode_factor_op(space, mode_index, scipy.linalg.expm(gen))


def displaced_frame_hamiltonian(config: SystemConfig) -> SparseOperator:
    """Hamiltonian after displacing the driven mode to its coherent amplitude.

    The displacement D = exp(xi*(a_r^dag - a_r)) with xi = 2*eta/kappa_r acts
    on the master equation; the mode-r dissipator then contributes an extra
    Hamiltonian piece -i*(kappa_r*xi/2)*(a_r^dag - a_r) which cancels the
    cavity drive exactly when the drive is resonant with mode r.
    """
    if not isinstance(config.drive, CavityDrive):
        raise InvalidConfigurationError("displaced frame starts from a cavity drive")
    r = config.drive.mode_index
    mode = config.modes[r]
    if mode.detuning != 0.0:
        raise InvalidConfigurationError(
            "displacement-to-qubit-drive transformation requires a resonant drive mode"
        )
    space = config.space()
    xi = 2.0 * config.drive.amplitude / mode.decay
    d_op = displacement_operator(space, r, xi)
    h = build_hamiltonian(config)
    a = annihilator(space, r)
    dissipator_shift = (-1j * mode.decay * xi / 2.0) * (a.dag() - a)
    return d_op.dag() @ h @ d_op + dissipator_shift


def equivalent_qubit_drive(config: SystemConfig) -> SystemConfig:
    """Replace a resonant cavity drive by the numerically equivalent qubit drive.

    The Rabi amplitude is read off the displaced-frame Hamiltonian as twice the
    <e, vac| H |g, vac> matrix element rather than taken from a closed-form
    prefactor. (A global trace against sigma_+ would be useless here: traces
    are invariant under the truncated unitary, so the coefficient must be read
    in the bulk, where cutoff artifacts are exponentially small.) For a
    resonant drive this evaluates to Omega = 2*g_r*xi = 4*g_r*eta/kappa_r.
    Qubit observables agree between the two configs; mode-r observables in the
    returned frame are offset by the coherent amplitude xi.
    """
    space = config.space()
    h_disp = displaced_frame_hamiltonian(config).tocsr()
    vac = (0,) * space.n_modes
    g_vec = basis_state(space, 0, vac)
    e_vec = basis_state(space, 1, vac)
    coeff = complex(e_vec.conj() @ (h_disp @ g_vec))
    omega = 2.0 * float(coeff.real)
    scale = max(abs(coeff), max(m.coupling for m in config.modes), 1.0)
    if abs(coeff.imag) > 1e-9 * scale:
        raise InvalidConfigurationError(f"displaced drive coefficient is not real: {coeff}")
    return replace(config, drive=QubitDrive(rabi=omega), frame="rotating_qubit_drive")


# ---------------------------------------------------------------------------
# Rotated qubit basis and the polaron picture
# ---------------------------------------------------------------------------

# Basis change to the drive eigenbasis |0~> = (|g>-|e>)/sqrt2, |1~> = (|g>+|e>)/sqrt2:
# columns of _TILDE are the new basis vectors in (g, e) coordinates. In the new
# basis sigma_x becomes diagonal, so the qubit drive term reads (Omega/2)*sigma_z~.
_TILDE = np.array([[1.0, 1.0], [-1.0, 1.0]]) / math.sqrt(2.0)


def rotated_basis_transform(space: HilbertSpace) -> SparseOperator:
    return _qubit_factor_op(space, _TILDE.astype(complex))


def rotated_qubit_hamiltonian(config: SystemConfig) -> SparseOperator:
    """build_hamiltonian expressed in the drive eigenbasis of the qubit."""
    r = rotated_basis_transform(config.space())
    h = build_hamiltonian(replace(config, frame="rotating_qubit_drive"))
    return r.dag() @ h @ r


def polaron_hamiltonian(config: SystemConfig) -> SparseOperator:
    """Exact polaron-frame Hamiltonian for a two-mode, qubit-driven config.

    Conjugates the rotated-basis Hamiltonian by the state-dependent
    displacement U = prod_i exp((g_i/2Delta_i)(a_i - a_i^dag) sigma_z~),
    evaluated as a full matrix exponential on the truncated space, so the
    result is unitarily equivalent to build_hamiltonian up to cutoff effects.
    """
    if len(config.modes) != 2:
        raise InvalidConfigurationError("polaron transformation is defined for two modes")
    if not isinstance(config.drive, QubitDrive):
        raise InvalidConfigurationError("polaron transformation starts from a qubit drive")
    if any(mode.detuning == 0.0 for mode in config.modes):
        raise InvalidConfigurationError("polaron transformation is singular at zero detuning")
    space = config.space()
    h_tilde = rotated_qubit_hamiltonian(config)
    sz = qubit_op(space, "sigma_z")  # sigma_z~ has this representation in the new basis
    gen = None
    for i, mode in enumerate(config.modes):
        a = annihilator(space, i)
        term = (mode.coupling / (2.0 * mode.detuning)) * ((a - a.dag()) @ sz)
        gen = term if gen is None else gen + term
    u = _wrap(space, scipy.linalg.expm(gen.toarray()))
    return u.dag() @ h_tilde @ u


def effective_hamiltonian(config: SystemConfig, order: int) -> SparseOperator:
    """Resonant interaction kept at the given order for the symmetric two-mode case.

    Requires Delta_1 = -Delta_2, g_1 = g_2, qubit resonant with the drive.
    Order 1 keeps the single-photon vertex (g/2)(sigma+~ a_1 - sigma+~ a_2^dag + h.c.),
    valid near Omega = Delta; order 2 the two-photon vertex
    (g^2/2Delta)(-sigma+~ a_1^2 + sigma+~ a_2^dag^2 + h.c.), valid near Omega = 2*Delta.
    Expressed in the rotated qubit basis.
    """
    if order not in (1, 2):
        raise InvalidConfigurationError("effective order must be 1 or 2")
    if len(config.modes) != 2:
        raise InvalidConfigurationError("effective Hamiltonian is defined for two modes")
    if not isinstance(config.drive, QubitDrive):
        raise InvalidConfigurationError("effective Hamiltonian requires a qubit drive")
    m1, m2 = config.modes
    sym = (
        m1.detuning > 0
        and math.isclose(m1.detuning, -m2.detuning, rel_tol=1e-12)
        and math.isclose(m1.coupling, m2.coupling, rel_tol=1e-12)
        and config.qubit_detuning == 0.0
    )
    if not sym:
        raise InvalidConfigurationError(
            "effective Hamiltonian requires Delta_1 = -Delta_2 > 0, g_1 = g_2, "
            "and a resonant qubit"
        )
    space = config.space()
    delta, g = m1.detuning, m1.coupling
    omega = config.drive.rabi
    a1, a2 = annihilator(space, 0), annihilator(space, 1)
    sz = qubit_op(space, "sigma_z")
    sp_ = qubit_op(space, "sigma_plus")
    h = delta * number_op(space, 0) - delta * number_op(space, 1) + (0.5 * omega) * sz
    if order == 1:
        vertex = (0.5 * g) * (sp_ @ a1 - sp_ @ a2.dag())
    else:
        vertex = (g * g / (2.0 * delta)) * (-(sp_ @ a1 @ a1) + sp_ @ a2.dag() @ a2.dag())
    return h + vertex + vertex.dag()


# ---------------------------------------------------------------------------
# Config file schema (plain-MHz JSON with mandatory schema version)
# ---------------------------------------------------------------------------


def config_to_dict(config: SystemConfig) -> dict:
    d = {
        "schema_version": CONFIG_SCHEMA_VERSION,
        "frame": config.frame,
        "qubit": {
            "detuning_mhz": to_mhz(config.qubit_detuning),
            "decay_mhz": to_mhz(config.qubit_decay),
        },
        "modes": [
            {
                "detuning_mhz": to_mhz(m.detuning),
                "decay_mhz": to_mhz(m.decay),
                "coupling_mhz": to_mhz(m.coupling),
            }
            for m in config.modes
        ],
        "cutoffs": list(config.cutoffs),
    }
    if isinstance(config.drive, CavityDrive):
        d["drive"] = {
            "kind": "cavity",
            "mode_index": config.drive.mode_index,
            "amplitude_mhz": to_mhz(config.drive.amplitude),
        }
    else:
        d["drive"] = {"kind": "qubit", "rabi_mhz": to_mhz(config.drive.rabi)}
    if config.effective_order is not None:
        d["effective_order"] = config.effective_order
    if config.drive_all_modes:
        d["drive_all_modes"] = True
    return d


def config_from_dict(d: dict) -> SystemConfig:
    if not isinstance(d, dict):
        raise InvalidConfigurationError("config must be a mapping")
    version = d.get("schema_version")
    if version != CONFIG_SCHEMA_VERSION:
        raise InvalidConfigurationError(
            f"schema_version must be {CONFIG_SCHEMA_VERSION}, got {version!r}"
        )
    try:
        qubit = d["qubit"]
        modes = tuple(
            ModeSpec.from_mhz(m["detuning_mhz"], m["decay_mhz"], m["coupling_mhz"])
            for m in d["modes"]
        )
        drive_d = d["drive"]
        if drive_d["kind"] == "cavity":
            drive: Drive = CavityDrive(int(drive_d["mode_index"]), from_mhz(drive_d["amplitude_mhz"]))
        elif drive_d["kind"] == "qubit":
            drive = QubitDrive(from_mhz(drive_d["rabi_mhz"]))
        else:
            raise InvalidConfigurationError(f"unknown drive kind {drive_d['kind']!r}")
        return SystemConfig(
            modes=modes,
            qubit_detuning=from_mhz(qubit["detuning_mhz"]),
            qubit_decay=from_mhz(qubit["decay_mhz"]),
            drive=drive,
            cutoffs=tuple(d["cutoffs"]),
            frame=d.get("frame", "rotating_qubit_drive"),
            effective_order=d.get("effective_order"),
            drive_all_modes=bool(d.get("drive_all_modes", False)),
        )
    except KeyError as exc:
        raise InvalidConfigurationError(f"config missing required field {exc}") from exc


def save_config(config: SystemConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config_to_dict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_config(path) -> SystemConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def config_hash(config: SystemConfig) -> str:
    """Stable short hash of the physical configuration."""
    blob = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
