"""Gauge-invariant frozen Gaussian propagation of semiclassical waves in periodic media.

The package solves the one-dimensional Schrödinger equation with a lattice
potential ``V(x/eps)`` and a slowly varying external potential ``U(x)``.
Bloch bands come from a truncated plane-wave diagonalisation, the initial
datum is expanded in Gaussian-windowed Bloch waves, each phase-space sample
is transported along the band flow, and the Berry phase is accumulated
from normalised overlaps of Bloch states so the result does not depend on
the arbitrary phases returned by the eigensolver. A Strang-split Fourier
solver provides reference solutions.
"""

__version__ = "0.1.0"

from .bloch import (  # noqa: E402
    BandEigenpair,
    BandTable,
    BlochBandSolver,
    BlochProblem,
    BlochSolver,
    assemble_hamiltonian,
    band_grad,
    band_hess,
    band_value,
    evaluate_u,
    overlap,
    solve_bands,
)
from .dynamics import (  # noqa: E402
    IntegratorConfig,
    PhaseSpaceMesh,
    TrajectoryState,
    evolve_ensemble,
    flow_rhs,
)
from .exceptions import *  # noqa: E402,F401,F403
from .fga import (  # noqa: E402
    FgaCoefficients,
    InitialData,
    WaveField,
    gaussian_eval,
    project_band,
    reconstruct,
    windowed_transform,
)
from .gauge import WilsonChain, accumulate, wilson_factor  # noqa: E402
from .potentials import (  # noqa: E402
    ExternalPotential,
    PeriodicPotential,
    fourier_coefficients,
    make_external,
    make_lattice,
)
from .propagator import FrozenGaussianPropagator  # noqa: E402
from .spectral import (  # noqa: E402
    SpectralConfig,
    StrangSolver,
    convergence_order,
    l2_error,
    solve_reference,
    strang_step,
)
