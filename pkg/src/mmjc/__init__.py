"""Driven-dissipative multimode cavity QED simulator.

A qubit coupled to several modes of a long cavity, with coherent drive and
photon loss: truncated Fock-space operators, frame transformations, Lindblad
and quantum-trajectory dynamics, emission spectra, and weak-probe transmission.

Unit convention: all rates and frequencies are angular (rad/us) internally.
Config files and CLI flags take plain MHz values ("MHz over 2*pi") and are
multiplied by 2*pi on load; time is in microseconds throughout.
"""

__version__ = "0.1.0"
