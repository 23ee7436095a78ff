"""Spin-resolved golden-rule electron transfer in harmonic systems.

The package computes nonadiabatic transfer dynamics between two multi-mode
harmonic electronic surfaces related by a Duschinskii rotation, with a
complex exponential (spin-dependent) diabatic coupling.  ``model`` builds and
reduces the Hamiltonians, ``correlators`` evaluates the closed-form Gaussian
correlation functions, ``dynamics`` turns them into populations, rates and
spin polarizations, and ``oracle`` provides brute-force Fock-space
cross-checks.  The ``spinet`` command line exposes the common workflows.
"""

__version__ = "0.1.0"
