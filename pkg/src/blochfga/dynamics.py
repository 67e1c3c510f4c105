"""Trajectory ensemble for the frozen Gaussian ansatz.

Each trajectory carries position ``Q``, unreduced crystal momentum ``P``,
action ``S``, amplitude ``b`` and the variational pair ``dzQ = d_z Q``,
``dzP = d_z P`` with ``d_z = d_q - i d_p``. The state is packed row-wise
into a complex array of shape ``(6, m)`` so that one integrator step
advances all trajectories at once.

When the external potential moves ``P``, the Berry phase is accumulated by
normalised overlaps of Bloch states at consecutive step boundaries (see
:mod:`blochfga.gauge`).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .bloch import BandTable, BlochSolver, shift_modes
from .exceptions import InvalidConfigError, SingularZError, UnderResolvedWarning
from .gauge import overlap_factors
from .potentials import ExternalPotential

__all__ = [
    "PhaseSpaceMesh",
    "TrajectoryState",
    "IntegratorConfig",
    "EnsembleResult",
    "flow_rhs",
    "initial_state",
    "evolve_ensemble",
    "SCHEMES",
]

logger = logging.getLogger(__name__)

Z_FLOOR = 1e-8
SCHEMES = ("rk4-classical", "gauss2-symplectic")

# rows of the packed state
_Q, _P, _S, _B, _DQ, _DP = range(6)


@dataclass(frozen=True)
class PhaseSpaceMesh:
    """Tensor mesh ``q_I x p_J`` for the phase-space integral.

    ``p_J = (J - 1/2) dp`` for ``J = 1..M`` with ``M`` even, which keeps the
    momenta at least ``dp/2`` away from ``0`` and ``1/2``.
    """

    q_grid: np.ndarray
    p_grid: np.ndarray
    eps: float

    def __post_init__(self):
        q = np.asarray(self.q_grid, dtype=float)
        p = np.asarray(self.p_grid, dtype=float)
        if q.ndim != 1 or p.ndim != 1 or q.size < 1 or p.size < 2:
            raise InvalidConfigError("mesh grids must be non-empty 1-d arrays")
        if q.size > 1 and not np.allclose(np.diff(q), q[1] - q[0], rtol=1e-10, atol=0):
            raise InvalidConfigError("q grid must be uniform")
        if not np.allclose(np.diff(p), p[1] - p[0], rtol=1e-10, atol=0) or p[1] <= p[0]:
            raise InvalidConfigError("p grid must be uniform and increasing")
        dp = p[1] - p[0]
        d = np.min(np.abs(np.mod(p, 0.5)[:, None] - np.array([0.0, 0.5])[None, :]))
        if d < 0.25 * dp - 1e-14:
            raise InvalidConfigError("p grid must avoid high-symmetry momenta by dp/4")
        object.__setattr__(self, "q_grid", q)
        object.__setattr__(self, "p_grid", p)

    @classmethod
    def build(cls, eps: float, support: tuple[float, float], theta: float | None = None,
              dq: float | None = None, n_p: int | None = None) -> "PhaseSpaceMesh":
        """Default mesh: ``dq = sqrt(eps)/2`` over ``support`` padded by ``theta``.

        The momentum count is the smallest even integer ``>= 2/sqrt(eps)``.
        """
        if eps <= 0:
            raise InvalidConfigError("eps must be positive")
        s = np.sqrt(eps)
        theta = 6.0 * s if theta is None else float(theta)
        dq = 0.5 * s if dq is None else float(dq)
        lo, hi = support[0] - theta, support[1] + theta
        n_q = int(np.ceil((hi - lo) / dq)) + 1
        q = 0.5 * (lo + hi) + (np.arange(n_q) - 0.5 * (n_q - 1)) * dq
        if n_p is None:
            n_p = 2 * int(np.ceil(1.0 / s))
        if n_p % 2:
            raise InvalidConfigError("momentum count must be even")
        p = (np.arange(1, n_p + 1) - 0.5) / n_p
        return cls(q, p, float(eps))

    @property
    def dq(self) -> float:
        return float(self.q_grid[1] - self.q_grid[0]) if self.q_grid.size > 1 else 1.0

    @property
    def dp(self) -> float:
        return float(self.p_grid[1] - self.p_grid[0])

    @property
    def shape(self) -> tuple[int, int]:
        return self.q_grid.size, self.p_grid.size

    def points(self, n_bands: int):
        """Flattened ``(band, q, p)`` arrays in ``(n, I, J)`` order, bands 1-based."""
        n_q, n_p = self.shape
        n = np.repeat(np.arange(1, n_bands + 1), n_q * n_p)
        q = np.tile(np.repeat(self.q_grid, n_p), n_bands)
        p = np.tile(self.p_grid, n_bands * n_q)
        return n, q, p

    def describe(self) -> dict:
        return {"n_q": self.q_grid.size, "n_p": self.p_grid.size, "dq": self.dq, "dp": self.dp,
                "q_min": float(self.q_grid[0]), "q_max": float(self.q_grid[-1])}


@dataclass
class TrajectoryState:
    """Trajectory variables; every field may be a scalar or an array."""

    Q: np.ndarray
    P: np.ndarray
    S: np.ndarray
    b: np.ndarray
    dzQ: np.ndarray
    dzP: np.ndarray
    wilson: np.ndarray = None

    def __post_init__(self):
        if self.wilson is None:
            self.wilson = np.ones_like(np.asarray(self.b, dtype=complex))

    @property
    def Z(self):
        return self.dzQ + 1j * self.dzP

    @property
    def jac(self) -> np.ndarray:
        """Flow Jacobian ``d(Q,P)/d(q,p)`` with shape ``(..., 2, 2)``."""
        dzQ, dzP = np.asarray(self.dzQ), np.asarray(self.dzP)
        return np.stack([np.stack([dzQ.real, -dzQ.imag], -1),
                         np.stack([dzP.real, -dzP.imag], -1)], -2)

    @property
    def det_jac(self):
        dzQ, dzP = np.asarray(self.dzQ), np.asarray(self.dzP)
        return dzQ.imag * dzP.real - dzQ.real * dzP.imag

    def pack(self) -> np.ndarray:
        return np.array([np.atleast_1d(np.asarray(v, dtype=complex))
                         for v in (self.Q, self.P, self.S, self.b, self.dzQ, self.dzP)])

    @classmethod
    def unpack(cls, y: np.ndarray, wilson=None) -> "TrajectoryState":
        return cls(y[_Q].real.copy(), y[_P].real.copy(), y[_S].real.copy(),
                   y[_B].copy(), y[_DQ].copy(), y[_DP].copy(), wilson)

    def select(self, mask) -> "TrajectoryState":
        return TrajectoryState(*(np.asarray(getattr(self, f))[mask]
                                 for f in ("Q", "P", "S", "b", "dzQ", "dzP", "wilson")))


def initial_state(q, p) -> TrajectoryState:
    """``Q=q, P=p, S=0, b=sqrt(2), dzQ=1, dzP=-i`` for one space dimension."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    one = np.ones(np.broadcast(q, p).shape)
    return TrajectoryState(q * one, p * one, 0.0 * one, np.sqrt(2.0) * one + 0j,
                           one + 0j, -1j * one, one + 0j)


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step integration on ``[0, T]`` with ``K`` steps."""

    T: float
    K: int = 150
    scheme: str = "rk4-classical"
    gauss_tol: float = 1e-13
    gauss_maxiter: int = 50

    def __post_init__(self):
        if not self.T >= 0 or not np.isfinite(self.T):
            raise InvalidConfigError("T must be a finite non-negative number")
        if int(self.K) != self.K or self.K < 1:
            raise InvalidConfigError("K must be a positive integer")
        if self.scheme not in SCHEMES:
            raise InvalidConfigError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")

    @property
    def dt(self) -> float:
        return self.T / self.K


def _rhs(y: np.ndarray, bands, table, U: ExternalPotential, index=None) -> np.ndarray:
    Q = y[_Q].real
    P = y[_P].real
    b, dzQ, dzP = y[_B], y[_DQ], y[_DP]
    E, dE, d2E = table.derivatives(bands, P)
    Z = dzQ + 1j * dzP
    absZ = np.abs(Z)
    if absZ.size and absZ.min() < Z_FLOOR:
        k = int(np.argmin(absZ))
        raise SingularZError(k if index is None else int(index[k]), complex(Z[k]))
    dU, d2U = U.grad(Q), U.hess(Q)
    out = np.empty_like(y)
    out[_Q] = dE
    out[_P] = -dU
    out[_S] = P * dE - E - U(Q)
    out[_B] = 0.5 * b * (dzP * d2E - 1j * dzQ * d2U) / Z
    out[_DQ] = d2E * dzP
    out[_DP] = -d2U * dzQ
    return out


def flow_rhs(state: TrajectoryState, band: BandTable, n, U: ExternalPotential) -> TrajectoryState:
    """Time derivative of the trajectory variables (wilson is not part of the flow).

    ``band`` only needs a ``derivatives(n, xi) -> (E, E', E'')`` method.
    """
    y = state.pack()
    d = _rhs(y, np.broadcast_to(np.asarray(n), y.shape[1:]), band, U)
    shape = np.shape(state.Q)
    r = [d[i].reshape(shape) for i in range(6)]
    return TrajectoryState(r[0].real, r[1].real, r[2].real, r[3], r[4], r[5], np.zeros(shape, complex))


_GL_C = np.sqrt(3.0) / 6.0
_GL_A = np.array([[0.25, 0.25 - _GL_C], [0.25 + _GL_C, 0.25]])


def _step(y, h, f, cfg: IntegratorConfig):
    if cfg.scheme == "rk4-classical":
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    # two-stage Gauss-Legendre, fixed-point iteration on the stage slopes
    k0 = f(y)
    k1, k2 = k0, k0
    scale = 1.0 + np.abs(y)
    for _ in range(cfg.gauss_maxiter):
        n1 = f(y + h * (_GL_A[0, 0] * k1 + _GL_A[0, 1] * k2))
        n2 = f(y + h * (_GL_A[1, 0] * k1 + _GL_A[1, 1] * k2))
        delta = h * max(np.max(np.abs(n1 - k1) / scale), np.max(np.abs(n2 - k2) / scale)) if y.size else 0.0
        k1, k2 = n1, n2
        if delta < cfg.gauss_tol:
            break
    return y + 0.5 * h * (k1 + k2)


@dataclass
class EnsembleResult:
    """Final trajectory states plus the Bloch vectors used in the last Wilson bra.

    ``vectors[i]`` holds unit-norm coefficients of ``u_n(P_i mod 1, .)`` on
    the mode window of the reduced momentum; ``winding[i] = floor(P_i)``.
    """

    bands: np.ndarray
    state: TrajectoryState
    vectors: np.ndarray
    winding: np.ndarray
    index: np.ndarray
    times: np.ndarray
    min_overlap: float = 1.0
    min_absZ: float = np.inf
    history: dict | None = field(default=None, repr=False)


def _rephase_start(solver: BlochSolver, P0, bands):
    xi = np.mod(P0, 1.0)
    return solver.unit_vectors(xi, bands), np.floor(P0).astype(int)


def evolve_ensemble(mesh: PhaseSpaceMesh, bands: BandTable, n_bands: int, U: ExternalPotential,
                    integ: IntegratorConfig, solver: BlochSolver | None = None, active=None,
                    overlap_floor: float = 0.5, record_history: bool = False) -> EnsembleResult:
    """Integrate every active trajectory of the ``(n, I, J)`` mesh to ``T``.

    Parameters
    ----------
    mesh : PhaseSpaceMesh
    bands : BandTable
        Must contain at least ``n_bands`` bands.
    n_bands : int
    U : ExternalPotential
    integ : IntegratorConfig
    solver : BlochSolver, optional
        Source of the Bloch vectors for the Wilson chain. Without it the
        chain is left at 1, which is exact only when ``U`` vanishes.
    active : bool array, optional
        Mask over the flattened ``(n, I, J)`` index; inactive trajectories
        are skipped entirely.
    overlap_floor : float
        Minimum admissible modulus of consecutive overlaps.
    record_history : bool
        Keep ``(t, Q, P, S, b, wilson)`` at every step boundary.
    """
    if n_bands > bands.n_bands:
        raise InvalidConfigError(f"table holds {bands.n_bands} bands, {n_bands} requested")
    n_all, q_all, p_all = mesh.points(n_bands)
    index = np.arange(n_all.size)
    if active is not None:
        index = index[np.asarray(active, dtype=bool).ravel()]
    n = n_all[index]
    state0 = initial_state(q_all[index], p_all[index])
    y = state0.pack()
    dt = integ.dt

    # with U = 0 every momentum is frozen, so band curvature cannot spoil the steps
    d2 = np.abs(bands.derivatives(np.arange(1, n_bands + 1)[:, None], np.linspace(0, 1, 257)[None, :])[2])
    if not U.is_zero and dt * float(d2.max(initial=0.0)) > 0.5:
        warnings.warn(f"dt * max|E''| = {dt * d2.max():.2f} is not small", UnderResolvedWarning, stacklevel=2)

    f = lambda z: _rhs(z, n, bands, U, index)  # noqa: E731
    wilson = np.ones(n.size, dtype=complex)
    track = solver is not None and not U.is_zero
    if solver is not None:
        vecs, wind = _rephase_start(solver, y[_P].real, n)
    else:
        vecs, wind = np.zeros((n.size, 0), complex), np.floor(y[_P].real).astype(int)
    min_ov = 1.0
    min_z = float(np.abs(state0.Z).min(initial=np.inf))
    times = np.linspace(0.0, integ.T, integ.K + 1)
    hist = None
    if record_history:
        hist = {k: [v] for k, v in (("Q", y[_Q].real.copy()), ("P", y[_P].real.copy()),
                                    ("S", y[_S].real.copy()), ("b", y[_B].copy()),
                                    ("wilson", wilson.copy()))}

    for k in range(1, integ.K + 1):
        P_prev = y[_P].real.copy()
        y = _step(y, dt, f, integ)
        min_z = min(min_z, float(np.abs(y[_DQ] + 1j * y[_DP]).min(initial=np.inf)))
        if track:
            P = y[_P].real
            moved = np.flatnonzero(P != P_prev)
            if moved.size:
                xi = np.mod(P[moved], 1.0)
                new_w = np.floor(P[moved]).astype(int)
                dm = new_w - wind[moved]
                lo, E, hi = bands.band_energy_guess(n[moved], xi)
                start = shift_modes(vecs[moved], -dm)
                v, _ = solver.track(xi, n[moved], start, E, lo, hi)
                fac, mod = overlap_factors(v, vecs[moved], dm, band=n[moved], step=k,
                                           floor=overlap_floor, index=index[moved])
                min_ov = min(min_ov, float(mod.min()))
                w = wilson[moved] * fac
                wilson[moved] = w / np.abs(w)
                vecs[moved] = v
                wind[moved] = new_w
        if hist is not None:
            for key, val in (("Q", y[_Q].real), ("P", y[_P].real), ("S", y[_S].real),
                             ("b", y[_B]), ("wilson", wilson)):
                hist[key].append(val.copy())
        logger.debug("step %d/%d done", k, integ.K)

    if hist is not None:
        hist = {key: np.array(v) for key, v in hist.items()}
    state = TrajectoryState.unpack(y, wilson)
    return EnsembleResult(n, state, vecs, wind, index, times, min_ov, min_z, hist)
