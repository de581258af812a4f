"""Quantum-classical hybrid networks for seismic patch restoration.

Subpackages: exact qubit-register simulation (qsim), a small reverse-mode
autodiff engine (autograd), the differentiable quantum feature layer
(qlayer), network assemblies (models), losses and metrics (objectives),
synthetic data and degradations (seisdata), training and checkpoints
(trainer), and the command-line interface (cli).
"""

__version__ = "0.1.0"
