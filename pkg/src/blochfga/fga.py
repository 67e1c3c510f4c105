"""Windowed Bloch transform, band projection and wave-field reconstruction.

Bloch vectors enter every formula with unit Euclidean norm of their
plane-wave coefficients. With the unit-cell normalisation of
:class:`~blochfga.bloch.BandEigenpair` this is ``sqrt(2 pi)`` times the
stored coefficients; the extra factor is what makes the transform followed
by its adjoint reproduce the input with the ``(2 pi eps)**(-3/2)``
prefactor in one dimension.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bloch import BlochSolver
from .dynamics import PhaseSpaceMesh, TrajectoryState, initial_state
from .exceptions import GridMismatchError, InvalidConfigError, ResolutionError

__all__ = [
    "InitialData",
    "FgaCoefficients",
    "WaveField",
    "gaussian_eval",
    "windowed_transform",
    "project_band",
    "reconstruct",
    "effective_modes",
    "uniform_grid",
]

logger = logging.getLogger(__name__)

SUPPORT_TOL = 1e-12


def gaussian_eval(q, p, eps: float, x):
    """Semiclassical Gaussian ``exp(-(x-q)^2/(2 eps) + i p (x-q)/eps)``."""
    if eps <= 0:
        raise InvalidConfigError("eps must be positive")
    d = np.asarray(x, dtype=float) - q
    return np.exp(-0.5 * d * d / eps + 1j * p * d / eps)


def uniform_grid(lo: float, hi: float, dx: float, anchor: float = 0.0) -> np.ndarray:
    """Points ``anchor + k dx`` covering ``[lo, hi]``."""
    k0 = int(np.floor((lo - anchor) / dx))
    k1 = int(np.ceil((hi - anchor) / dx))
    return anchor + np.arange(k0, k1 + 1) * dx


@dataclass(frozen=True)
class WaveField:
    """Complex field sampled on a uniform grid."""

    grid: np.ndarray
    values: np.ndarray
    eps: float

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=complex)
        if g.ndim != 1 or v.shape != g.shape:
            raise GridMismatchError("values must match the 1-d grid")
        if g.size > 2 and not np.allclose(np.diff(g), g[1] - g[0], rtol=1e-9, atol=0):
            raise GridMismatchError("grid must be uniform")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)

    @property
    def dx(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def norm(self) -> float:
        return float(np.sqrt(self.dx * np.sum(np.abs(self.values) ** 2)))

    def __add__(self, other: "WaveField") -> "WaveField":
        if other.grid.shape != self.grid.shape or not np.array_equal(other.grid, self.grid):
            raise GridMismatchError("fields live on different grids")
        return WaveField(self.grid, self.values + other.values, self.eps)

    def to_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([self.grid, self.values.real, self.values.imag]),
                   delimiter=",", header="x,re_psi,im_psi", comments="")


@dataclass(frozen=True, eq=False)
class InitialData:
    """Initial datum ``A(x) exp(i S(x)/eps)``, optionally projected onto one band.

    Parameters
    ----------
    amplitude, phase : callable
    eps : float
    support : (float, float)
        Interval outside of which ``|A| <= 1e-12``.
    band : int, optional
        If set, the datum is the band projection of the WKB datum. Evaluating
        it requires ``solver`` and uniform sample points.
    solver : BlochSolver, optional
    theta : float, optional
        Cut-off radius for the projection; defaults to ``6 sqrt(eps)``.
    """

    amplitude: Callable
    phase: Callable
    eps: float
    support: tuple[float, float]
    band: int | None = None
    solver: BlochSolver | None = field(default=None, repr=False)
    theta: float | None = None
    name: str = "wkb"

    def __post_init__(self):
        if self.eps <= 0:
            raise InvalidConfigError("eps must be positive")
        if not self.support[0] < self.support[1]:
            raise InvalidConfigError("support must be an increasing pair")
        if self.band is not None and self.solver is None:
            raise InvalidConfigError("a band-projected datum needs a Bloch solver")
        if self.theta is None:
            object.__setattr__(self, "theta", 6.0 * np.sqrt(self.eps))

    @property
    def kind(self) -> str:
        return "wkb" if self.band is None else "band-projected"

    @property
    def base(self) -> "InitialData":
        return InitialData(self.amplitude, self.phase, self.eps, self.support, name=self.name)

    @property
    def declared_support(self) -> tuple[float, float]:
        if self.band is None:
            return self.support
        # projection output is cut off at theta around q-points within support +- theta
        pad = 2.0 * self.theta
        return self.support[0] - pad, self.support[1] + pad

    def wkb(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.asarray(self.amplitude(x), dtype=complex) * np.exp(1j * np.asarray(self.phase(x)) / self.eps)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.band is None:
            return self.wkb(x)
        lo, hi = self.declared_support
        out = np.zeros(x.shape, dtype=complex)
        inside = (x >= lo) & (x <= hi)
        if not inside.any():
            return out
        xs = x[inside]
        proj = project_band(self.base, self.band, self.solver, xs, theta=self.theta)
        out[inside] = proj.values
        return out

    def sample(self, x) -> WaveField:
        return WaveField(np.asarray(x, dtype=float), self(x), self.eps)


@dataclass(frozen=True, eq=False)
class FgaCoefficients:
    """Transform coefficients ``w[n-1, I, J]`` and the quadrature used."""

    w: np.ndarray
    mesh: PhaseSpaceMesh
    eps: float
    dy: float
    theta: float
    lam_eff: int

    @property
    def n_bands(self) -> int:
        return self.w.shape[0]

    def flat(self) -> np.ndarray:
        return self.w.reshape(-1)


def effective_modes(solver: BlochSolver, p_grid, n_bands: int, tol: float = 1e-8) -> int:
    """Largest ``|eta|`` carrying a unit-vector coefficient above ``tol``."""
    lam_eff = 1
    for p in p_grid:
        V = np.abs(solver.full(p)[1][:, :n_bands])
        live = np.any(V > tol, axis=1)
        if live.any():
            lam_eff = max(lam_eff, int(np.max(np.abs(solver.eta[live]))))
    return lam_eff


def _check_dy(dy, eps, lam_eff):
    limit = eps * np.pi / (2.0 * lam_eff)
    if not dy < limit:
        raise ResolutionError(f"dy={dy:.3e} does not resolve modes up to {lam_eff} (need dy < {limit:.3e})")


def windowed_transform(psi0: InitialData, mesh: PhaseSpaceMesh, n_bands: int, solver: BlochSolver,
                       theta: float | None = None, dy: float | None = None) -> FgaCoefficients:
    """Coefficients ``w_n(q_I, p_J)`` by Riemann summation over a uniform ``y`` grid.

    ``w = sum_K conj(G_{q,p}(y_K)) conj(u_n(p, y_K/eps)) psi0(y_K) r(|y_K - q|) dy``
    with ``r`` the indicator of ``|y - q| < theta``.
    """
    eps = mesh.eps
    theta = 6.0 * np.sqrt(eps) if theta is None else float(theta)
    if not 1 <= n_bands <= solver.size:
        raise InvalidConfigError(f"n_bands must be in 1..{solver.size}")
    lam_eff = effective_modes(solver, mesh.p_grid, n_bands)
    if dy is None:
        dy = 2.0 * np.pi * eps / (16.0 * lam_eff)
    _check_dy(dy, eps, lam_eff)
    lo, hi = psi0.declared_support
    y = uniform_grid(lo - theta, hi + theta, dy)
    f = psi0(y)
    n_q, n_p = mesh.shape
    w = np.zeros((n_bands, n_q, n_p), dtype=complex)
    if not np.any(f):
        return FgaCoefficients(w, mesh, eps, dy, theta, lam_eff)

    keep = np.abs(f) > 0
    y, f = y[keep], f[keep]
    q = mesh.q_grid
    d = y[:, None] - q[None, :]
    R = np.where(np.abs(d) < theta, np.exp(-0.5 * d * d / eps), 0.0) * dy
    plane = np.exp(1j * np.multiply.outer(solver.eta, y) / eps)  # (2 lam, n_y)
    for j, p in enumerate(mesh.p_grid):
        U = solver.full(p)[1][:, :n_bands]  # unit columns
        bloch = U.T @ plane  # (n_bands, n_y), sum_eta u(eta) e^{i eta y/eps}
        phi = np.conj(bloch) * (np.exp(-1j * p * y / eps) * f)[None, :]
        w[:, :, j] = ((phi.real @ R) + 1j * (phi.imag @ R)) * np.exp(1j * p * q / eps)[None, :]
    return FgaCoefficients(w, mesh, eps, dy, theta, lam_eff)


def reconstruct(state: TrajectoryState, bands, vectors, winding, weights, eps: float, x_grid,
                theta: float, dq: float, dp: float, n_bands: int | None = None,
                per_band: bool = False, chunk: int = 2048):
    """Frozen Gaussian sum on a uniform grid.

    Parameters
    ----------
    state : TrajectoryState
        Arrays of length ``m`` (final ``Q, P, S, b, wilson``).
    bands : int array (m,)
        1-based band of each trajectory.
    vectors : complex array (m, 2 lam)
        Unit Bloch vectors on the mode window of ``P mod 1``.
    winding : int array (m,)
        ``floor(P)``.
    weights : complex array (m,)
        Transform coefficients ``w`` of each trajectory.
    per_band : bool
        Return an array ``(n_bands, len(x_grid))`` instead of the summed field.

    Notes
    -----
    Every trajectory contributes on the points with ``|x - Q| < theta``.
    Trajectories are processed in fixed chunks and accumulated with
    ``np.bincount`` so the result does not depend on how work is split.
    """
    x = np.asarray(x_grid, dtype=float)
    if x.size < 2:
        raise GridMismatchError("need at least two grid points")
    dx = x[1] - x[0]
    if not np.allclose(np.diff(x), dx, rtol=1e-9, atol=0):
        raise GridMismatchError("reconstruction grid must be uniform")
    m = np.size(weights)
    bands = np.asarray(bands, dtype=int)
    if n_bands is None:
        n_bands = int(bands.max(initial=1))
    vectors = np.asarray(vectors)
    if vectors.shape[0] != m or bands.shape != (m,) or np.shape(state.Q) != (m,):
        raise GridMismatchError("trajectory arrays and weights disagree in length")
    n_out = n_bands if per_band else 1
    acc_re = np.zeros(n_out * x.size)
    acc_im = np.zeros(n_out * x.size)
    if m == 0:
        out = np.zeros((n_out, x.size), complex)
        return out if per_band else WaveField(x, out[0], eps)

    lam = vectors.shape[1] // 2
    winding = np.asarray(winding, dtype=int)
    pad = int(np.max(np.abs(winding)))
    eta = np.arange(-lam - pad, lam + pad) - 0.0  # extended window of j - m
    W = int(np.ceil(2.0 * theta / dx)) + 2
    D = np.exp(1j * np.multiply.outer(eta, np.arange(W) * dx) / eps)
    pref = (2.0 * np.pi * eps) ** -1.5 * dq * dp
    Q, P, S = (np.asarray(v, dtype=float) for v in (state.Q, state.P, state.S))
    amp_all = pref * np.asarray(state.b) * np.asarray(state.wilson) * np.asarray(weights) * np.exp(1j * S / eps)
    lw = np.arange(W)

    for c0 in range(0, m, chunk):
        sl = slice(c0, min(m, c0 + chunk))
        k = sl.stop - sl.start
        start = np.ceil((Q[sl] - theta - x[0]) / dx).astype(int)
        xs = x[0] + start * dx
        coeffs = np.zeros((k, eta.size), dtype=complex)
        off = pad - winding[sl]
        cols = off[:, None] + np.arange(2 * lam)[None, :]
        coeffs[np.arange(k)[:, None], cols] = vectors[sl]
        coeffs *= np.exp(1j * np.multiply.outer(xs, eta) / eps)
        bloch = coeffs @ D  # (k, W)
        xl = xs[:, None] + lw[None, :] * dx
        dist = xl - Q[sl, None]
        g = np.exp(-0.5 * dist * dist / eps + 1j * P[sl, None] * dist / eps)
        vals = amp_all[sl, None] * g * bloch
        idx = start[:, None] + lw[None, :]
        ok = (np.abs(dist) < theta) & (idx >= 0) & (idx < x.size)
        if per_band:
            idx = idx + ((bands[sl] - 1) * x.size)[:, None]
        acc_re += np.bincount(idx[ok], weights=vals.real[ok], minlength=acc_re.size)
        acc_im += np.bincount(idx[ok], weights=vals.imag[ok], minlength=acc_im.size)
    out = (acc_re + 1j * acc_im).reshape(n_out, x.size)
    return out if per_band else WaveField(x, out[0], eps)


def initial_ensemble(mesh: PhaseSpaceMesh, n_bands: int, solver: BlochSolver):
    """Trajectories at ``t = 0`` with their (cached) Bloch vectors."""
    n, q, p = mesh.points(n_bands)
    state = initial_state(q, p)
    vectors = solver.unit_vectors(np.mod(p, 1.0), n)
    return n, state, vectors, np.floor(p).astype(int)


def project_band(psi0: InitialData, n: int, solver: BlochSolver, x_grid, mesh: PhaseSpaceMesh | None = None,
                 theta: float | None = None, dy: float | None = None) -> WaveField:
    """Band-``n`` part of the transform followed by its adjoint, on ``x_grid``."""
    eps = psi0.eps
    theta = 6.0 * np.sqrt(eps) if theta is None else float(theta)
    if mesh is None:
        mesh = PhaseSpaceMesh.build(eps, psi0.declared_support, theta)
    coeffs = windowed_transform(psi0, mesh, n, solver, theta, dy)
    nb, state, vectors, wind = initial_ensemble(mesh, n, solver)
    sel = nb == n
    return reconstruct(state.select(sel), nb[sel], vectors[sel], wind[sel], coeffs.flat()[sel], eps,
                       x_grid, theta, mesh.dq, mesh.dp)
