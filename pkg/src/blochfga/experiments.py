"""Experiment presets and study drivers.

A study is described by an :class:`ExperimentConfig`, which can be built
from a named preset (``ex2`` .. ``ex7``), a JSON or YAML file, or a preset
with a partial override on top.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bloch import BlochProblem, BlochSolver, solve_bands
from .dynamics import PhaseSpaceMesh
from .exceptions import BlochFGAError, InvalidConfigError
from .fga import InitialData, initial_ensemble, reconstruct, uniform_grid, windowed_transform
from .potentials import make_external, make_lattice
from .propagator import FrozenGaussianPropagator
from .spectral import SpectralConfig, convergence_order, l2_error, solve_reference

__all__ = [
    "ExperimentConfig",
    "PRESETS",
    "load_config",
    "build_initial_data",
    "run_decomposition_study",
    "run_convergence_study",
    "run_gauge_check",
    "band_table_rows",
    "config_hash",
]

logger = logging.getLogger(__name__)

SUPPORT_TOL = 1e-12


@dataclass
class ExperimentConfig:
    """Resolved parameters of one study.

    ``initial`` holds ``amplitude`` and ``phase`` sub-dictionaries:

    * amplitude ``{"kind": "gaussian", "a": 50}`` is ``exp(-a x^2)``;
      ``{"kind": "gaussian-cos", "a": 50, "shift": 0.5}`` multiplies it by
      ``cos((x - shift)/eps)``.
    * phase ``{"c0", "c1", "x1", "c2", "x2"}`` is
      ``c0 + c1 (x - x1) + c2 sin(x - x2)``.
    * ``project_band`` (optional) replaces the datum by its projection on
      that band.
    """

    name: str
    study: str = "convergence"
    eps_list: list = field(default_factory=lambda: [1 / 64, 1 / 128, 1 / 256, 1 / 512])
    n_bands: int = 8
    band_counts: list = field(default_factory=lambda: [1, 2, 4, 8])
    T: float = 0.0
    K: int = 150
    scheme: str = "rk4-classical"
    lattice: dict = field(default_factory=lambda: {"kind": "cosine", "params": {}, "lam": 16})
    external: dict = field(default_factory=lambda: {"kind": "zero", "params": {}})
    initial: dict = field(default_factory=dict)
    mesh: dict = field(default_factory=dict)
    spectral: dict = field(default_factory=dict)
    out: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.study not in ("decomposition", "convergence"):
            raise InvalidConfigError(f"unknown study {self.study!r}")
        eps = np.asarray(self.eps_list, dtype=float)
        if eps.size < 1 or np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
            raise InvalidConfigError("eps_list must be positive and strictly decreasing")
        lam = int(self.lattice.get("lam", 16))
        if not 1 <= int(self.n_bands) <= 2 * lam:
            raise InvalidConfigError(f"n_bands must lie in 1..{2 * lam}")
        if any(not 0 <= int(n) <= self.n_bands for n in self.band_counts):
            raise InvalidConfigError("band_counts must lie in 0..n_bands")
        if "amplitude" not in self.initial or "phase" not in self.initial:
            raise InvalidConfigError("initial needs 'amplitude' and 'phase'")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**copy.deepcopy(d))

    def to_dict(self) -> dict:
        return asdict(self)


def _gauss(a=50.0):
    return {"kind": "gaussian", "a": a}


_EX26_INITIAL = {"amplitude": {"kind": "gaussian-cos", "a": 50.0, "shift": 0.5},
                 "phase": {"c0": 0.0, "c1": 0.3, "x1": 0.5, "c2": 0.1, "x2": 0.5}}
_EX34_INITIAL = {"amplitude": _gauss(), "phase": {"c0": 0.3, "c1": 0.0, "x1": 0.0, "c2": 0.1, "x2": 0.5}}

PRESETS: dict[str, dict] = {
    "ex2": dict(name="ex2", study="decomposition", T=0.0,
                lattice={"kind": "cosine", "params": {}, "lam": 16}, initial=_EX26_INITIAL),
    "ex3": dict(name="ex3", study="decomposition", T=0.0,
                lattice={"kind": "gaussian-bump", "params": {"alpha": 25.0}, "lam": 16}, initial=_EX34_INITIAL),
    "ex4": dict(name="ex4", study="convergence", T=0.35, eps_list=[1 / 8, 1 / 16, 1 / 32, 1 / 64],
                lattice={"kind": "cosine", "params": {}, "lam": 16}, initial=_EX34_INITIAL),
    "ex5": dict(name="ex5", study="convergence", T=0.35, n_bands=1, band_counts=[1],
                eps_list=[1 / 64, 1 / 128, 1 / 256],
                lattice={"kind": "gaussian-bump", "params": {"alpha": 20.0}, "lam": 16},
                initial={"amplitude": _gauss(), "phase": {"c0": 0.0, "c1": 0.3, "x1": 0.0, "c2": 0.1, "x2": 0.5},
                         "project_band": 1}),
    "ex6": dict(name="ex6", study="convergence", T=0.2,
                lattice={"kind": "gaussian-bump", "params": {"alpha": 25.0}, "lam": 16},
                external={"kind": "harmonic", "params": {"k": 1.0}}, initial=_EX26_INITIAL),
    "ex7": dict(name="ex7", study="convergence", T=0.2,
                lattice={"kind": "gaussian-bump", "params": {"alpha": 25.0}, "lam": 16},
                external={"kind": "cosine", "params": {"amplitude": 1.0}}, initial=_EX26_INITIAL),
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _read(path) -> dict:
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise InvalidConfigError(f"{path} does not hold a mapping")
    return data


def load_config(preset: str | None = None, path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Preset, then file, then explicit overrides, merged in that order."""
    d: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise InvalidConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        d = copy.deepcopy(PRESETS[preset])
    if path is not None:
        d = _merge(d, _read(path))
    if overrides:
        d = _merge(d, overrides)
    if "name" not in d:
        d["name"] = Path(path).stem if path is not None else "custom"
    return ExperimentConfig.from_dict(d)


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, default=float).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# builders


def _lattice(cfg: ExperimentConfig):
    L = cfg.lattice
    return make_lattice(L.get("kind", "cosine"), L.get("params", {}), int(L.get("lam", 16)))


def _external(cfg: ExperimentConfig):
    E = cfg.external
    return make_external(E.get("kind", "zero"), E.get("params", {}))


def build_initial_data(cfg: ExperimentConfig, eps: float, solver: BlochSolver | None = None) -> InitialData:
    amp, ph = cfg.initial["amplitude"], cfg.initial["phase"]
    a = float(amp.get("a", 50.0))
    center = float(amp.get("center", 0.0))
    if amp.get("kind") == "gaussian":
        A = lambda x: np.exp(-a * (x - center) ** 2)  # noqa: E731
    elif amp.get("kind") == "gaussian-cos":
        shift = float(amp.get("shift", 0.5))
        A = lambda x: np.exp(-a * (x - center) ** 2) * np.cos((x - shift) / eps)  # noqa: E731
    else:
        raise InvalidConfigError(f"unknown amplitude kind {amp.get('kind')!r}")
    c0, c1, x1, c2, x2 = (float(ph.get(k, 0.0)) for k in ("c0", "c1", "x1", "c2", "x2"))
    S = lambda x: c0 + c1 * (x - x1) + c2 * np.sin(x - x2)  # noqa: E731
    r = np.sqrt(np.log(1.0 / SUPPORT_TOL) / a)
    theta = cfg.mesh.get("theta")
    theta = None if theta is None else float(theta)
    band = cfg.initial.get("project_band")
    if band is not None and solver is None:
        solver = BlochSolver(_lattice(cfg))
    return InitialData(A, S, eps, (center - r, center + r), band=band,
                       solver=solver if band is not None else None, theta=theta, name=cfg.name)


def band_table_rows(cfg: ExperimentConfig, n_bands: int | None = None):
    """``(header, rows)`` of the band table on its momentum grid."""
    n_bands = int(n_bands or cfg.n_bands)
    problem = BlochProblem(_lattice(cfg), int(cfg.lattice.get("lam", 16)),
                           int(cfg.mesh.get("n_xi", 200)), cfg.mesh.get("rho"))
    table = solve_bands(problem, n_bands)
    header = ["xi"] + [f"E_{n}" for n in range(1, n_bands + 1)]
    return header, np.column_stack([table.xi_grid, table.energies]), table


def _propagator(cfg: ExperimentConfig, rephase_seed=None) -> FrozenGaussianPropagator:
    m = cfg.mesh
    return FrozenGaussianPropagator(
        _lattice(cfg), _external(cfg), int(cfg.n_bands), float(cfg.T), int(cfg.K), cfg.scheme,
        int(cfg.lattice.get("lam", 16)), int(m.get("n_xi", 200)), m.get("rho"), m.get("theta"),
        m.get("dy"), float(m.get("prune_tol", 1e-8)), rephase_seed)


def _spectral_config(cfg: ExperimentConfig, psi0: InitialData, eps: float, workers: int = 1) -> SpectralConfig:
    s = cfg.spectral
    return SpectralConfig.auto(eps, psi0.declared_support, float(cfg.T), float(s.get("speed", 4.0)),
                               int(s.get("points_per_period", 64)), s.get("dt"), workers)


# ---------------------------------------------------------------------------
# studies


def run_decomposition_study(cfg: ExperimentConfig, per_band_fields: bool = False) -> dict:
    """Initial decomposition error ``||psi0 - sum_{n<=N} Pi_n psi0||`` for every ``(eps, N)``.

    Returns a dict with ``rows`` (``eps, N, error``), per-eps ``manifest``
    entries and ``failures`` for cells that raised.
    """
    lattice = _lattice(cfg)
    lam = int(cfg.lattice.get("lam", 16))
    n_max = max(int(n) for n in cfg.band_counts)
    rows, manifests, failures = [], [], []
    for eps in cfg.eps_list:
        t0 = time.perf_counter()
        try:
            solver = BlochSolver(lattice, lam)
            psi0 = build_initial_data(cfg, eps)
            theta = 6.0 * np.sqrt(eps) if cfg.mesh.get("theta") is None else float(cfg.mesh["theta"])
            mesh = PhaseSpaceMesh.build(eps, psi0.declared_support, theta)
            dx = eps * np.pi / 16.0
            lo, hi = psi0.declared_support
            x = uniform_grid(lo - 2 * theta, hi + 2 * theta, dx)
            ref = psi0(x)
            fields = np.zeros((0, x.size), complex)
            coeffs = None
            if n_max > 0:
                coeffs = windowed_transform(psi0, mesh, n_max, solver, theta, cfg.mesh.get("dy"))
                n, state, vecs, wind = initial_ensemble(mesh, n_max, solver)
                w = coeffs.flat()
                keep = np.abs(w) > float(cfg.mesh.get("prune_tol", 1e-8)) * np.abs(w).max(initial=0.0)
                fields = reconstruct(state.select(keep), n[keep], vecs[keep], wind[keep], w[keep], eps, x,
                                     theta, mesh.dq, mesh.dp, n_max, per_band=True)
            for N in cfg.band_counts:
                approx = fields[: int(N)].sum(axis=0) if int(N) > 0 else np.zeros_like(ref)
                err = float(np.sqrt(dx * np.sum(np.abs(ref - approx) ** 2)))
                rows.append({"eps": eps, "N": int(N), "error": err})
            manifests.append({"eps": eps, "dx": dx, "theta": theta, "mesh": mesh.describe(),
                              "dy": None if coeffs is None else coeffs.dy,
                              "lam_eff": None if coeffs is None else coeffs.lam_eff,
                              "wall_time": time.perf_counter() - t0})
        except BlochFGAError as exc:
            logger.error("decomposition eps=%g failed: %s", eps, exc)
            failures.append({"eps": eps, "error": repr(exc)})
    return {"name": cfg.name, "rows": rows, "manifest": manifests, "failures": failures,
            "config_hash": config_hash(cfg)}


def run_convergence_study(cfg: ExperimentConfig, workers: int = 1, self_check: bool = True,
                          keep_fields: bool = False) -> dict:
    """FGA versus Strang reference at ``T`` for every ``eps``.

    Rows carry ``eps, error, pairwise_rate`` (rate of the pair ending at the
    row) and, for band-projected data, the relative ``t = 0`` reconstruction
    error ``initial_error``. The summary holds the pairwise rates, their mean
    and the least-squares slope.
    """
    lattice = _lattice(cfg)
    U = _external(cfg)
    rows, manifests, failures, fields = [], [], [], {}
    for eps in cfg.eps_list:
        t0 = time.perf_counter()
        try:
            psi0 = build_initial_data(cfg, eps)
            prop = _propagator(cfg).fit(psi0)
            scfg = _spectral_config(cfg, psi0, eps, workers)
            fga = prop.field(scfg.grid)
            vtot = lambda x, e=eps: lattice(x / e) + U(x)  # noqa: E731
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                ref = solve_reference(psi0, float(cfg.T), scfg, vtot, self_check=self_check)
            for w in caught:
                logger.warning("eps=%g: %s", eps, w.message)
            err = l2_error(fga, ref.field)
            row = {"eps": eps, "error": err}
            if psi0.band is not None:
                row["initial_error"] = _projected_initial_error(prop, psi0, scfg)
            rows.append(row)
            manifests.append({"eps": eps, "fga": prop.manifest(), "spectral": scfg.describe(),
                              "reference_steps": ref.steps, "self_convergence": ref.self_convergence,
                              "boundary_mass": ref.boundary_mass, "wall_time": time.perf_counter() - t0})
            if keep_fields:
                fields[eps] = (fga, ref.field)
        except BlochFGAError as exc:
            logger.error("convergence eps=%g failed: %s", eps, exc)
            failures.append({"eps": eps, "error": repr(exc)})
    summary = None
    if len(rows) >= 2 and not failures:
        summary = convergence_order([r["error"] for r in rows], [r["eps"] for r in rows])
        for r, rate in zip(rows[1:], summary["rates"]):
            r["pairwise_rate"] = float(rate)
        summary = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in summary.items()}
    out = {"name": cfg.name, "rows": rows, "summary": summary, "manifest": manifests,
           "failures": failures, "config_hash": config_hash(cfg)}
    if keep_fields:
        out["fields"] = fields
    return out


def _projected_initial_error(prop: FrozenGaussianPropagator, psi0: InitialData, scfg: SpectralConfig) -> float:
    """Relative error of the single-band reconstruction of the projected datum at ``t = 0``."""
    n, state, vecs, wind = initial_ensemble(prop.mesh_, int(prop.n_bands), prop.solver_)
    w = prop.coeffs_.flat()
    sel = (n == psi0.band) & prop.active_
    rec = reconstruct(state.select(sel), n[sel], vecs[sel], wind[sel], w[sel], psi0.eps, scfg.grid,
                      prop.theta_, prop.mesh_.dq, prop.mesh_.dp)
    ref = psi0.sample(scfg.grid)
    return l2_error(rec, ref) / ref.norm()


def run_gauge_check(cfg: ExperimentConfig, seed: int = 0, workers: int = 1) -> dict:
    """Propagate with and without random rephasing of every Bloch vector.

    Rows carry the relative L2 discrepancy of the two reconstructed fields.
    """
    rows, failures = [], []
    for eps in cfg.eps_list:
        t0 = time.perf_counter()
        try:
            psi0 = build_initial_data(cfg, eps)
            scfg = _spectral_config(cfg, psi0, eps, workers)
            a = _propagator(cfg).fit(psi0).field(scfg.grid)
            b = _propagator(cfg, rephase_seed=seed).fit(psi0).field(scfg.grid)
            rel = l2_error(a, b) / a.norm()
            rows.append({"eps": eps, "relative_discrepancy": rel, "wall_time": time.perf_counter() - t0})
        except BlochFGAError as exc:
            failures.append({"eps": eps, "error": repr(exc)})
    return {"name": cfg.name, "seed": seed, "rows": rows, "failures": failures, "config_hash": config_hash(cfg)}
