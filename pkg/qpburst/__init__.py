"""Quasiparticle-burst simulation, detection and analysis for MKID/qubit radiation studies."""

__version__ = "0.1.0"
