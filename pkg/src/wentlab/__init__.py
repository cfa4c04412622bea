"""Numerical laboratory for quasilinear parabolic systems with dynamic
(Wentzell), Neumann-Robin and Dirichlet boundary conditions.

Submodules:
    domain    meshes, the bulk (+) boundary measure, field states
    model     diffusion laws, reactions, boundary assignments, scenarios
    solver    adaptive explicit / implicit time integration
    spectral  boundary eigenproblems, Rayleigh quotients, instability counts
    analysis  norms, energies, decay envelopes, Moser / DeGiorgi machinery
    waves     boundary conservation law: self-similar and traveling profiles
    cli       scenario files and the wentlab command
"""

__version__ = "0.1.0"

from . import analysis, cli, domain, model, solver, spectral, waves

__all__ = ["analysis", "cli", "domain", "model", "solver", "spectral",
           "waves", "__version__"]
