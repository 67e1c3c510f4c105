"""Estimator tying the steps together: bands, transform, flow, reconstruction."""

from __future__ import annotations

import logging
import time

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .bloch import BlochProblem, BlochSolver, solve_bands
from .dynamics import EnsembleResult, IntegratorConfig, PhaseSpaceMesh, evolve_ensemble
from .exceptions import InvalidConfigError
from .fga import FgaCoefficients, InitialData, WaveField, reconstruct, windowed_transform
from .potentials import ExternalPotential, PeriodicPotential, make_external

__all__ = ["FrozenGaussianPropagator"]

logger = logging.getLogger(__name__)


class FrozenGaussianPropagator(BaseEstimator):
    """Gauge-invariant frozen Gaussian propagation in a periodic lattice.

    Parameters
    ----------
    lattice : PeriodicPotential
    external : ExternalPotential, optional
        Defaults to zero.
    n_bands : int
        Number of Bloch bands kept in the expansion.
    T : float
        Final time.
    K : int
        Number of integrator steps.
    scheme : {"rk4-classical", "gauss2-symplectic"}
    lam : int, optional
        Plane-wave truncation; defaults to ``lattice.lam``.
    n_xi : int
        Momentum samples of the band table.
    rho : float, optional
        Shift of the band-table grid.
    theta : float, optional
        Gaussian cut-off radius, ``6 sqrt(eps)`` by default.
    dy : float, optional
        Quadrature spacing of the transform.
    prune_tol : float
        Trajectories with ``|w| <= prune_tol * max|w|`` are dropped. The mask
        depends only on ``|w|``, which is gauge invariant.
    rephase_seed : int, optional
        Multiply every Bloch vector by a seeded random phase.
    overlap_floor : float
        Minimum overlap modulus between consecutive Bloch states.
    record_history : bool
        Keep trajectory variables at every step boundary.

    Examples
    --------
    >>> prop = FrozenGaussianPropagator(lattice, T=0.2).fit(psi0)  # doctest: +SKIP
    >>> field = prop.predict(x)                                     # doctest: +SKIP
    """

    def __init__(self, lattice: PeriodicPotential | None = None, external: ExternalPotential | None = None,
                 n_bands: int = 8, T: float = 0.0, K: int = 150, scheme: str = "rk4-classical",
                 lam: int | None = None, n_xi: int = 200, rho: float | None = None,
                 theta: float | None = None, dy: float | None = None, prune_tol: float = 1e-8,
                 rephase_seed: int | None = None, overlap_floor: float = 0.5, record_history: bool = False):
        self.lattice = lattice
        self.external = external
        self.n_bands = n_bands
        self.T = T
        self.K = K
        self.scheme = scheme
        self.lam = lam
        self.n_xi = n_xi
        self.rho = rho
        self.theta = theta
        self.dy = dy
        self.prune_tol = prune_tol
        self.rephase_seed = rephase_seed
        self.overlap_floor = overlap_floor
        self.record_history = record_history

    def _validate(self):
        if not isinstance(self.lattice, PeriodicPotential):
            raise InvalidConfigError("lattice must be a PeriodicPotential")
        lam = self.lam or self.lattice.lam
        if not 1 <= int(self.n_bands) <= 2 * lam:
            raise InvalidConfigError(f"n_bands must lie in 1..{2 * lam}")
        if not 0.0 <= self.prune_tol < 1.0:
            raise InvalidConfigError("prune_tol must lie in [0, 1)")
        return lam

    def fit(self, psi0: InitialData, y=None):
        """Transform ``psi0`` and integrate the trajectory ensemble to ``T``."""
        lam = self._validate()
        if not isinstance(psi0, InitialData):
            raise InvalidConfigError("fit expects an InitialData instance")
        eps = psi0.eps
        U = self.external if self.external is not None else make_external("zero")
        timings = {}
        t0 = time.perf_counter()
        problem = BlochProblem(self.lattice, lam, self.n_xi, self.rho)
        # one band more than needed so the top gap is known
        self.table_ = solve_bands(problem, min(int(self.n_bands) + 1, 2 * lam))
        self.solver_ = BlochSolver(self.lattice, lam, rephase_seed=self.rephase_seed)
        timings["bands"] = time.perf_counter() - t0

        theta = 6.0 * np.sqrt(eps) if self.theta is None else float(self.theta)
        self.theta_ = theta
        t0 = time.perf_counter()
        self.coeffs_ = self._coefficients(psi0, theta)
        self.mesh_ = self.coeffs_.mesh
        timings["transform"] = time.perf_counter() - t0

        w = np.abs(self.coeffs_.flat())
        wmax = w.max(initial=0.0)
        self.active_ = w > self.prune_tol * wmax if wmax > 0 else np.zeros(w.size, bool)
        self.integrator_ = IntegratorConfig(float(self.T), int(self.K), self.scheme)
        t0 = time.perf_counter()
        self.ensemble_ = evolve_ensemble(self.mesh_, self.table_, int(self.n_bands), U, self.integrator_,
                                         self.solver_, self.active_, self.overlap_floor,
                                         bool(self.record_history))
        timings["dynamics"] = time.perf_counter() - t0
        self.eps_ = eps
        self.timings_ = timings
        logger.info("fit eps=%g: %d/%d trajectories active, %s", eps, int(self.active_.sum()),
                    self.active_.size, {k: round(v, 2) for k, v in timings.items()})
        return self

    def _coefficients(self, psi0: InitialData, theta: float) -> FgaCoefficients:
        # a band-projected datum is W_n* W_n psi; its exact expansion is the
        # band-n slice of the transform of psi itself
        src = psi0 if psi0.band is None else psi0.base
        mesh = PhaseSpaceMesh.build(psi0.eps, src.declared_support, theta)
        coeffs = windowed_transform(src, mesh, int(self.n_bands), self.solver_, theta, self.dy)
        if psi0.band is not None:
            if not 1 <= psi0.band <= int(self.n_bands):
                raise InvalidConfigError(f"projected band {psi0.band} is not among the {self.n_bands} kept")
            mask = np.arange(1, coeffs.n_bands + 1) == psi0.band
            coeffs.w[~mask] = 0.0
        return coeffs

    def transform(self, psi0: InitialData) -> FgaCoefficients:
        """Windowed Bloch transform of ``psi0``.

        For band-projected data only the projected band carries coefficients.
        """
        check_is_fitted(self, "solver_")
        return self._coefficients(psi0, self.theta_)

    def field(self, x_grid, per_band: bool = False):
        """Reconstructed field at ``T`` on a uniform grid."""
        check_is_fitted(self, "ensemble_")
        ens: EnsembleResult = self.ensemble_
        t0 = time.perf_counter()
        out = reconstruct(ens.state, ens.bands, ens.vectors, ens.winding, self.coeffs_.flat()[ens.index],
                          self.eps_, x_grid, self.theta_, self.mesh_.dq, self.mesh_.dp,
                          int(self.n_bands), per_band=per_band)
        self.timings_["reconstruct"] = time.perf_counter() - t0
        return out

    def predict(self, x_grid) -> np.ndarray:
        """Samples of the reconstructed field at ``T``."""
        return self.field(x_grid).values

    def manifest(self) -> dict:
        check_is_fitted(self, "ensemble_")
        ens = self.ensemble_
        return {
            "lam": self.solver_.lam,
            "n_xi": self.n_xi,
            "rho": float(self.table_.xi_grid[0]),
            "n_bands": int(self.n_bands),
            "theta": self.theta_,
            "dy": self.coeffs_.dy,
            "lam_eff": self.coeffs_.lam_eff,
            "K": int(self.K),
            "dt": self.integrator_.dt,
            "scheme": self.scheme,
            "prune_tol": self.prune_tol,
            "active_trajectories": int(self.active_.sum()),
            "total_trajectories": int(self.active_.size),
            "min_overlap": ens.min_overlap,
            "min_abs_Z": ens.min_absZ,
            "eigh_fallbacks": self.solver_.n_fallback,
            "mesh": self.mesh_.describe(),
            "timings": dict(self.timings_),
        }

    def to_field(self, values, x_grid) -> WaveField:
        return WaveField(np.asarray(x_grid, dtype=float), values, self.eps_)
