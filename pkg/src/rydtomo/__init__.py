"""Simulation of phonon-number readout, displacement and Wigner tomography
of a torsional nano-oscillator probed by a beam of Rydberg atoms."""

__version__ = "0.1.0"
