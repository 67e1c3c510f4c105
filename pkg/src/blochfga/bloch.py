"""Bloch bands by truncated plane-wave diagonalisation.

For a crystal momentum ``xi`` the Bloch Hamiltonian is assembled on the
plane-wave modes ``eta = -lam .. lam-1``. Eigenvectors are stored with
``sum |c|^2 = 1/(2 pi)`` so that the periodic Bloch function has unit
:math:`L^2` norm on the cell ``[-pi, pi)``.

Band energies are tabulated on a shifted uniform grid of the Brillouin zone
and interpolated trigonometrically; derivatives come from differentiating
the same interpolant.
"""

from __future__ import annotations

import logging
import threading
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._kernels import inverse_iteration
from .exceptions import (
    BandCrossingWarning,
    EigensolverError,
    InvalidConfigError,
    NearDegeneracyWarning,
)
from .potentials import PeriodicPotential

__all__ = [
    "BlochProblem",
    "BandEigenpair",
    "BandTable",
    "BlochSolver",
    "BlochBandSolver",
    "assemble_hamiltonian",
    "solve_bands",
    "band_value",
    "band_grad",
    "band_hess",
    "overlap",
    "evaluate_u",
]

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
SQRT_TWO_PI = np.sqrt(TWO_PI)


def _modes(lam: int) -> np.ndarray:
    return np.arange(-lam, lam)


def _toeplitz(potential: PeriodicPotential, lam: int) -> np.ndarray:
    if lam > potential.lam:
        potential = potential.with_lam(lam)
    eta = _modes(lam)
    T = potential.coeff(np.subtract.outer(eta, eta))
    if potential.is_even:
        T = T.real.copy()
    return T


def assemble_hamiltonian(xi: float, lam: int, potential: PeriodicPotential) -> np.ndarray:
    """Truncated Bloch Hamiltonian ``H_xi(lam)`` of size ``2 lam x 2 lam``.

    Entry ``(eta, eta')`` is the potential coefficient ``V(eta - eta')``; the
    diagonal also carries the kinetic term ``(eta + xi)**2 / 2``.
    """
    lam = int(lam)
    if lam < 1:
        raise InvalidConfigError(f"lam must be >= 1, got {lam}")
    H = np.array(_toeplitz(potential, lam), dtype=complex)
    H[np.diag_indices_from(H)] += 0.5 * (_modes(lam) + xi) ** 2
    return H


# ---------------------------------------------------------------------------
# eigenpairs


@dataclass(frozen=True, eq=False)
class BandEigenpair:
    """Eigenpair of ``H_xi`` for one band.

    ``coeffs`` are the plane-wave coefficients on modes ``-lam..lam-1``
    normalised to ``1/(2 pi)``. ``winding`` ``m`` makes the object stand for
    the Bloch function at crystal momentum ``xi + m``, i.e. ``exp(-i m x)``
    times the periodic part at ``xi``.
    """

    xi: float
    band: int
    energy: float
    coeffs: np.ndarray = field(repr=False)
    winding: int = 0
    degenerate: bool = False

    @property
    def lam(self) -> int:
        return self.coeffs.shape[-1] // 2

    @property
    def unit(self) -> np.ndarray:
        """Coefficients rescaled to unit Euclidean norm."""
        return self.coeffs * SQRT_TWO_PI

    def wound(self, winding: int) -> "BandEigenpair":
        """Same eigenvector viewed as the state at ``xi + winding``."""
        return BandEigenpair(self.xi, self.band, self.energy, self.coeffs, int(winding), self.degenerate)


def shift_modes(coeffs: np.ndarray, shift) -> np.ndarray:
    """Return ``c'[eta] = c[eta + shift]`` with zero fill outside the mode window.

    ``shift`` may be a scalar or an integer array broadcasting against the
    leading axes of ``coeffs``.
    """
    coeffs = np.asarray(coeffs)
    shift = np.asarray(shift, dtype=int)
    if shift.ndim == 0:
        s = int(shift)
        out = np.zeros_like(coeffs)
        n = coeffs.shape[-1]
        if abs(s) >= n:
            return out
        if s >= 0:
            out[..., : n - s] = coeffs[..., s:]
        else:
            out[..., -s:] = coeffs[..., : n + s]
        return out
    out = np.zeros_like(coeffs)
    for s in np.unique(shift):
        sel = shift == s
        out[sel] = shift_modes(coeffs[sel], int(s))
    return out


def overlap(a: BandEigenpair, b: BandEigenpair) -> complex:
    """Cell inner product ``<u_a, u_b>`` (antilinear in ``a``)."""
    if a.coeffs.shape != b.coeffs.shape:
        raise InvalidConfigError("eigenpairs come from different truncations")
    cb = shift_modes(b.coeffs, b.winding - a.winding)
    return complex(TWO_PI * np.vdot(a.coeffs, cb))


def evaluate_u(e: BandEigenpair, x_scaled) -> np.ndarray | complex:
    """Periodic Bloch function ``sum_eta c(eta) exp(i eta x)`` at cell coordinates."""
    x = np.asarray(x_scaled, dtype=float)
    eta = _modes(e.lam) - e.winding
    out = np.exp(1j * np.multiply.outer(x, eta)) @ e.coeffs
    return complex(out) if out.ndim == 0 else out


class BlochSolver:
    """On-demand diagonalisation of ``H_xi`` with a thread-safe cache.

    Parameters
    ----------
    potential : PeriodicPotential
    lam : int, optional
        Plane-wave truncation; defaults to ``potential.lam``.
    rephase_seed : int, optional
        If given, every eigenvector produced by this solver is multiplied by
        an independent random unit phase. Results of gauge-invariant
        quantities must not change.
    deg_tol : float
        Adjacent-energy separation below which a warning is raised.
    """

    def __init__(self, potential: PeriodicPotential, lam: int | None = None,
                 rephase_seed: int | None = None, deg_tol: float = 1e-8):
        self.potential = potential
        self.lam = int(lam or potential.lam)
        if self.lam < 1:
            raise InvalidConfigError("lam must be >= 1")
        self.deg_tol = deg_tol
        self.rephase_seed = rephase_seed
        self._rng = None if rephase_seed is None else np.random.default_rng(rephase_seed)
        self._T = _toeplitz(potential, self.lam)
        self._eta = _modes(self.lam).astype(float)
        self._cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}
        self._lock = threading.Lock()
        self.n_fallback = 0

    @property
    def real(self) -> bool:
        return self._T.dtype.kind == "f"

    @property
    def size(self) -> int:
        return 2 * self.lam

    @property
    def eta(self) -> np.ndarray:
        return self._eta

    def hamiltonians(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        H = np.broadcast_to(self._T, xi.shape + self._T.shape).copy()
        idx = np.arange(self.size)
        H[..., idx, idx] += 0.5 * (self._eta + xi[..., None]) ** 2
        return H

    def _phases(self, shape):
        if self._rng is None:
            return None
        return np.exp(1j * self._rng.uniform(0.0, TWO_PI, size=shape))

    @staticmethod
    def key(xi: float) -> float:
        return round(float(np.mod(xi, 1.0)), 12) % 1.0

    def _diagonalize(self, xi: float):
        try:
            E, V = np.linalg.eigh(self.hamiltonians(np.array(xi)))
        except np.linalg.LinAlgError as exc:
            raise EigensolverError(xi, str(exc)) from exc
        if not np.all(np.isfinite(E)):
            raise EigensolverError(xi, "non-finite eigenvalues")
        V = V.astype(complex)
        ph = self._phases(V.shape[1])
        if ph is not None:
            V = V * ph
        return E, V

    def full(self, xi: float):
        """Cached ``(energies, unit eigenvectors as columns)`` at ``xi mod 1``."""
        k = self.key(xi)
        hit = self._cache.get(k)
        if hit is not None:
            return hit
        with self._lock:
            hit = self._cache.get(k)
            if hit is None:
                E, V = self._diagonalize(k)
                E.setflags(write=False)
                V.setflags(write=False)
                hit = self._cache.setdefault(k, (E, V))
        return hit

    def eigenpair_at(self, xi: float, band: int) -> BandEigenpair:
        """Eigenpair of band ``band`` (1-based) at ``xi`` reduced mod 1."""
        band = int(band)
        if not 1 <= band <= self.size:
            raise InvalidConfigError(f"band must be in 1..{self.size}")
        k = self.key(xi)
        E, V = self.full(k)
        n = band - 1
        gaps = []
        if n > 0:
            gaps.append(E[n] - E[n - 1])
        if n + 1 < E.size:
            gaps.append(E[n + 1] - E[n])
        degenerate = bool(gaps) and min(gaps) < self.deg_tol
        if degenerate:
            warnings.warn(f"band {band} nearly degenerate at xi={k}; gauge factor may be ill-conditioned",
                          NearDegeneracyWarning, stacklevel=2)
        return BandEigenpair(k, band, float(E[n]), V[:, n] / SQRT_TWO_PI, 0, degenerate)

    def unit_vectors(self, xi, bands) -> np.ndarray:
        """Cached unit eigenvectors for arrays of momenta and 1-based bands."""
        xi = np.ravel(xi)
        bands = np.broadcast_to(np.asarray(bands, dtype=int), xi.shape)
        out = np.empty((xi.size, self.size), dtype=complex)
        for i, (x, b) in enumerate(zip(xi, bands)):
            out[i] = self.full(x)[1][:, b - 1]
        return out

    def track(self, xi, bands, start, shift, lower=None, upper=None, tol=1e-12):
        """Eigenvectors at new momenta by shifted inverse iteration.

        Parameters
        ----------
        xi : array
            Momenta in ``[0, 1)``.
        bands : int array
            1-based band indices.
        start : complex array (m, 2 lam)
            Starting vectors, already expressed on the mode window of ``xi``.
        shift : array
            Energy guesses ``E_n(xi)``.
        lower, upper : array, optional
            Guesses for the neighbouring band energies; a converged Rayleigh
            quotient closer to a neighbour than to ``shift`` is rejected.

        Entries whose residual stays above ``tol * ||H||`` after three
        Rayleigh-quotient steps, or whose band identity is doubtful, are
        recomputed by full diagonalisation. The returned vectors carry an
        arbitrary phase.

        Returns
        -------
        vectors : complex array (m, 2 lam), unit norm
        energies : real array (m,)
        """
        xi = np.ascontiguousarray(xi, dtype=float).ravel()
        m = xi.size
        bands = np.broadcast_to(np.asarray(bands, dtype=int), xi.shape)
        v, rho, _, ok = inverse_iteration(self._T, self._eta, xi,
                                          np.ascontiguousarray(start, dtype=complex),
                                          np.ascontiguousarray(shift, dtype=float), tol, 3)
        # band identity: stay nearer the guessed energy than its neighbours
        guess = np.asarray(shift, dtype=float)
        if lower is not None:
            ok &= np.abs(rho - guess) < 0.5 * np.abs(guess - np.asarray(lower))
        if upper is not None:
            ok &= np.abs(rho - guess) < 0.5 * np.abs(np.asarray(upper) - guess)
        bad = np.flatnonzero(~ok)
        if bad.size:
            self.n_fallback += bad.size
            try:
                E, V = np.linalg.eigh(self.hamiltonians(xi[bad]))
            except np.linalg.LinAlgError as exc:
                raise EigensolverError(xi[bad], str(exc)) from exc
            nb = bands[bad] - 1
            v[bad] = V[np.arange(bad.size), :, nb]
            rho[bad] = E[np.arange(bad.size), nb]
        ph = self._phases(m)
        if ph is not None:
            v = v * ph[:, None]
        return v, rho


# ---------------------------------------------------------------------------
# band tables


@dataclass(frozen=True)
class BlochProblem:
    """Discretisation of the Brillouin zone for band tabulation.

    The grid is ``xi_j = rho + j * dxi`` with ``dxi = (1 - 2 rho)/(n_xi - 1)``.
    The default ``rho = 1/(2 n_xi)`` makes it uniform on the circle, which
    keeps the trigonometric interpolant well conditioned.
    """

    potential: PeriodicPotential
    lam: int | None = None
    n_xi: int = 200
    rho: float | None = None

    def __post_init__(self):
        if self.lam is None:
            object.__setattr__(self, "lam", self.potential.lam)
        if self.rho is None:
            object.__setattr__(self, "rho", 0.5 / self.n_xi)
        if self.lam < 1:
            raise InvalidConfigError("lam must be >= 1")
        if self.n_xi < 4:
            raise InvalidConfigError("n_xi must be >= 4")
        if not 0.0 < self.rho < 0.25:
            raise InvalidConfigError("rho must lie in (0, 1/4)")
        d = np.min(np.abs(self.xi_grid[:, None] - np.array([0.0, 0.5, 1.0])[None, :]))
        if d < 0.5 * self.rho:
            raise InvalidConfigError("xi grid hits a high-symmetry point; change rho or n_xi")

    @property
    def dxi(self) -> float:
        return (1.0 - 2.0 * self.rho) / (self.n_xi - 1)

    @property
    def xi_grid(self) -> np.ndarray:
        return self.rho + np.arange(self.n_xi) * self.dxi


class _TrigBasis:
    """Real trigonometric basis of dimension ``n`` with analytic derivatives."""

    def __init__(self, n: int, origin: float):
        self.n = n
        self.origin = origin
        self.k = np.arange(1, (n - 1) // 2 + 1)
        self.nyquist = n % 2 == 0

    def __call__(self, xi, order: int = 0) -> np.ndarray:
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        w = TWO_PI * self.k
        arg = np.multiply.outer(xi, w)
        # d^order/dxi^order of cos and sin
        c = w ** order * np.cos(arg + 0.5 * np.pi * order)
        s = w ** order * np.sin(arg + 0.5 * np.pi * order)
        cols = [np.full((xi.size, 1), 1.0 if order == 0 else 0.0), c, s]
        if self.nyquist:
            wn = np.pi * self.n
            cols.append((wn ** order * np.cos(wn * (xi - self.origin) + 0.5 * np.pi * order))[:, None])
        return np.concatenate(cols, axis=1)


class BandTable:
    """Tabulated band energies with trigonometric interpolants.

    Parameters
    ----------
    xi_grid : array (n_xi,)
    energies : array (n_xi, n_bands)
        Energies sorted per row. An extra column beyond ``n_bands`` may be
        passed through ``upper`` to record the gap above the top band.
    upper : array (n_xi,), optional
    """

    _DENSE = 8192

    def __init__(self, xi_grid, energies, upper=None, gap_tol: float = 1e-8):
        self.xi_grid = np.asarray(xi_grid, dtype=float)
        self.energies = np.atleast_2d(np.asarray(energies, dtype=float))
        if self.energies.shape[0] != self.xi_grid.size:
            raise InvalidConfigError("energies must have one row per grid point")
        self.n_bands = self.energies.shape[1]
        self.upper = None if upper is None else np.asarray(upper, dtype=float)
        self.gap_tol = gap_tol
        full = self.energies if self.upper is None else np.column_stack([self.energies, self.upper])
        self.min_gaps = np.min(np.diff(full, axis=1), axis=0) if full.shape[1] > 1 else np.array([])
        self.flagged = bool(self.min_gaps.size and np.min(self.min_gaps) < gap_tol)
        self._basis = _TrigBasis(self.xi_grid.size, self.xi_grid[0])
        B = self._basis(self.xi_grid)
        self._coef = np.linalg.solve(B, full)
        self._dense = None

    def __repr__(self):
        return f"BandTable(n_bands={self.n_bands}, n_xi={self.xi_grid.size}, flagged={self.flagged})"

    def _check_band(self, n):
        n = np.asarray(n)
        if np.any((n < 1) | (n > self._coef.shape[1])):
            raise IndexError(f"band outside 1..{self.n_bands}")
        return n - 1

    def evaluate(self, n: int, xi, order: int = 0):
        """Exact trigonometric interpolant (or its derivative) of band ``n``."""
        j = self._check_band(n)
        xi = np.asarray(xi, dtype=float)
        out = self._basis(np.ravel(xi), order) @ self._coef[:, j]
        return out.reshape(xi.shape) if xi.ndim else float(out[0])

    def _dense_table(self):
        if self._dense is None:
            h = 1.0 / self._DENSE
            grid = np.arange(self._DENSE) * h
            tabs = np.stack([self._basis(grid, order) @ self._coef for order in range(4)])
            self._dense = (h, tabs)
        return self._dense

    def derivatives(self, n, xi):
        """``E_n, E_n', E_n''`` at ``xi`` for broadcastable band/momentum arrays.

        The interpolant is resampled once on a dense uniform grid and read
        back by cubic Hermite interpolation; the discrepancy to the exact
        interpolant is far below its own approximation error.
        """
        j = self._check_band(n)
        h, tabs = self._dense_table()
        u = np.mod(np.asarray(xi, dtype=float), 1.0) / h
        i0 = np.floor(u).astype(int)
        t = u - i0
        i0 %= self._DENSE
        i1 = (i0 + 1) % self._DENSE
        t2, t3 = t * t, t * t * t
        h00 = 2 * t3 - 3 * t2 + 1
        h10 = t3 - 2 * t2 + t
        h01 = -2 * t3 + 3 * t2
        h11 = t3 - t2
        out = []
        for order in range(3):
            f, g = tabs[order], tabs[order + 1]
            out.append(h00 * f[i0, j] + h10 * h * g[i0, j] + h01 * f[i1, j] + h11 * h * g[i1, j])
        return tuple(out)

    def band_energy_guess(self, n, xi):
        """Interpolated ``(E_{n-1}, E_n, E_{n+1})``; missing neighbours are +-inf."""
        n = np.asarray(n)
        xi = np.asarray(xi, dtype=float)
        e = self.derivatives(n, xi)[0]
        lo = np.full(np.broadcast(n, xi).shape, -np.inf)
        hi = np.full(np.broadcast(n, xi).shape, np.inf)
        has_lo = n > 1
        if np.any(has_lo):
            lo[has_lo] = self.derivatives(np.broadcast_to(n, lo.shape)[has_lo] - 1,
                                          np.broadcast_to(xi, lo.shape)[has_lo])[0]
        has_hi = n < self._coef.shape[1]
        if np.any(has_hi):
            hi[has_hi] = self.derivatives(np.broadcast_to(n, hi.shape)[has_hi] + 1,
                                          np.broadcast_to(xi, hi.shape)[has_hi])[0]
        return lo, e, hi


def solve_bands(problem: BlochProblem, n_bands: int, gap_tol: float = 1e-8) -> BandTable:
    """Diagonalise ``H_xi`` on the problem grid and build the band table."""
    size = 2 * problem.lam
    if not 1 <= n_bands <= size:
        raise InvalidConfigError(f"n_bands must be in 1..{size}")
    solver = BlochSolver(problem.potential, problem.lam)
    xi = problem.xi_grid
    H = solver.hamiltonians(xi)
    energies = np.empty((xi.size, size))
    for j, x in enumerate(xi):
        try:
            energies[j] = np.linalg.eigvalsh(H[j])
        except np.linalg.LinAlgError as exc:
            raise EigensolverError(x, str(exc)) from exc
    if not np.all(np.isfinite(energies)):
        bad = xi[~np.all(np.isfinite(energies), axis=1)]
        raise EigensolverError(bad[0], "non-finite eigenvalues")
    upper = energies[:, n_bands] if n_bands < size else None
    table = BandTable(xi, energies[:, :n_bands], upper=upper, gap_tol=gap_tol)
    if table.flagged:
        worst = int(np.argmin(table.min_gaps)) + 1
        warnings.warn(f"gap above band {worst} is {table.min_gaps[worst - 1]:.2e} < {gap_tol:g}; "
                      "band-crossing risk", BandCrossingWarning, stacklevel=2)
    logger.debug("solved %d bands on %d momenta", n_bands, xi.size)
    return table


def band_value(table: BandTable, n: int, xi):
    return table.evaluate(n, xi, 0)


def band_grad(table: BandTable, n: int, xi):
    return table.evaluate(n, xi, 1)


def band_hess(table: BandTable, n: int, xi):
    return table.evaluate(n, xi, 2)


class BlochBandSolver(BaseEstimator):
    """Estimator wrapper around :func:`solve_bands`.

    ``fit(potential)`` tabulates the bands; ``predict(xi)`` returns the
    interpolated energies with shape ``(len(xi), n_bands)``.
    """

    def __init__(self, n_bands=8, lam=16, n_xi=200, rho=None, gap_tol=1e-8):
        self.n_bands = n_bands
        self.lam = lam
        self.n_xi = n_xi
        self.rho = rho
        self.gap_tol = gap_tol

    def fit(self, potential: PeriodicPotential, y=None):
        problem = BlochProblem(potential, self.lam, self.n_xi, self.rho)
        self.problem_ = problem
        self.table_ = solve_bands(problem, self.n_bands, self.gap_tol)
        self.min_gaps_ = self.table_.min_gaps
        return self

    def predict(self, xi):
        check_is_fitted(self, "table_")
        xi = np.ravel(np.asarray(xi, dtype=float))
        return np.column_stack([self.table_.evaluate(n, xi) for n in range(1, self.n_bands + 1)])
