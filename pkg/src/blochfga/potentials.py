"""Lattice and external potentials.

The lattice potential lives on the unit cell ``[-pi, pi)`` and is stored
through its Fourier coefficients on the modes ``-(2*lam-1) .. 2*lam-1``,
which is exactly the set of differences needed to assemble the truncated
Bloch Hamiltonian. External potentials are smooth functions of the
macroscopic variable together with their first two derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import InvalidConfigError, InvalidPotentialError

__all__ = [
    "LatticeSpec",
    "PeriodicPotential",
    "ExternalPotential",
    "fourier_coefficients",
    "make_lattice",
    "make_external",
    "LATTICE_KINDS",
    "EXTERNAL_KINDS",
]

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class LatticeSpec:
    """Unit cell ``[-pi, pi)`` and Brillouin zone ``[0, 1)`` in one dimension."""

    cell: tuple[float, float] = (-np.pi, np.pi)
    brillouin: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if not np.isclose(self.cell[1] - self.cell[0], TWO_PI, rtol=0, atol=1e-14):
            raise InvalidConfigError("unit cell must have length 2*pi")
        if not np.isclose(self.brillouin[1] - self.brillouin[0], 1.0, rtol=0, atol=1e-14):
            raise InvalidConfigError("Brillouin zone must have length 1")

    def wrap_cell(self, x):
        """Reduce positions into the unit cell."""
        lo = self.cell[0]
        return np.mod(np.asarray(x, dtype=float) - lo, TWO_PI) + lo

    def wrap_momentum(self, xi):
        return np.mod(np.asarray(xi, dtype=float), 1.0)


LATTICE = LatticeSpec()


def fourier_coefficients(potential: Callable, lam: int, n_samples: int | None = None) -> np.ndarray:
    """Fourier coefficients of a cell-periodic function.

    Returns ``c[k + 2*lam - 1]`` approximating
    ``(1/2pi) * int_{-pi}^{pi} V(x) exp(-i k x) dx`` for
    ``k = -(2*lam-1) .. 2*lam-1``. The result satisfies
    ``c(-k) == conj(c(k))`` exactly.
    """
    lam = int(lam)
    if lam < 1:
        raise InvalidConfigError(f"Fourier truncation lam must be >= 1, got {lam}")
    n_modes = 2 * lam - 1
    if n_samples is None:
        n_samples = max(8 * lam, 256)
    n_samples = int(2 ** int(np.ceil(np.log2(n_samples))))
    x = -np.pi + TWO_PI * np.arange(n_samples) / n_samples
    values = np.asarray(potential(x), dtype=complex)
    if values.shape != x.shape or not np.all(np.isfinite(values)):
        raise InvalidPotentialError("potential produced non-finite or mis-shaped samples")
    spectrum = np.fft.fft(values) / n_samples
    k = np.arange(-n_modes, n_modes + 1)
    # the grid starts at -pi, hence the (-1)**k phase
    c = spectrum[k % n_samples] * np.where(k % 2 == 0, 1.0, -1.0)
    return 0.5 * (c + np.conj(c[::-1]))


@dataclass(frozen=True, eq=False)
class PeriodicPotential:
    """Lattice potential with its truncated Fourier representation.

    Parameters
    ----------
    name : str
        Registry name, used in manifests.
    evaluator : callable
        Real-valued function on the unit cell; it is evaluated after reducing
        its argument into ``[-pi, pi)``.
    lam : int
        Fourier truncation; coefficients are kept for ``|k| <= 2*lam - 1``.
    params : dict
        Parameters the evaluator was built from.
    """

    name: str
    evaluator: Callable
    lam: int = 16
    params: dict = field(default_factory=dict)
    fourier_coeffs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        coeffs = fourier_coefficients(self._periodic, self.lam)
        scale = np.max(np.abs(coeffs), initial=0.0)
        if np.max(np.abs(coeffs.imag), initial=0.0) <= 1e-14 * scale:
            # even potential: drop FFT round-off so Bloch Hamiltonians are real
            coeffs = coeffs.real.astype(complex)
        coeffs.setflags(write=False)
        object.__setattr__(self, "fourier_coeffs", coeffs)

    def _periodic(self, x):
        return self.evaluator(LATTICE.wrap_cell(x))

    def __call__(self, x):
        return np.asarray(self._periodic(x), dtype=float)

    @property
    def modes(self) -> np.ndarray:
        n = 2 * self.lam - 1
        return np.arange(-n, n + 1)

    def coeff(self, k):
        k = np.asarray(k)
        n = 2 * self.lam - 1
        if np.any(np.abs(k) > n):
            raise IndexError(f"mode outside the stored range |k| <= {n}")
        return self.fourier_coeffs[k + n]

    @property
    def is_even(self) -> bool:
        """True when all coefficients are real, so Bloch Hamiltonians are real symmetric."""
        return bool(np.all(self.fourier_coeffs.imag == 0.0))

    def with_lam(self, lam: int) -> "PeriodicPotential":
        return PeriodicPotential(self.name, self.evaluator, lam, dict(self.params))

    def reconstruct(self, x):
        """Evaluate the truncated Fourier series at ``x``."""
        x = np.asarray(x, dtype=float)
        series = np.exp(1j * np.multiply.outer(x, self.modes)) @ self.fourier_coeffs
        return series.real


@dataclass(frozen=True, eq=False)
class ExternalPotential:
    """Smooth external potential with gradient and Hessian."""

    name: str
    value: Callable
    grad: Callable
    hess: Callable
    params: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.value(np.asarray(x, dtype=float))

    @property
    def is_zero(self) -> bool:
        return self.name == "zero"


# ---------------------------------------------------------------------------
# registries

def _zero(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def _lattice_cosine(amplitude=1.0):
    a = float(amplitude)
    return lambda x: a * np.cos(x)


def _lattice_gaussian_bump(alpha=25.0, amplitude=1.0):
    alpha, a = float(alpha), float(amplitude)
    return lambda x: a * np.exp(-alpha * np.asarray(x) ** 2)


LATTICE_KINDS = {
    "cosine": _lattice_cosine,
    "gaussian-bump": _lattice_gaussian_bump,
    "zero": lambda: _zero,
}


def make_lattice(kind: str, params: dict | None = None, lam: int = 16) -> PeriodicPotential:
    """Build a lattice potential from the registry (``cosine``, ``gaussian-bump``, ``zero``)."""
    params = dict(params or {})
    try:
        factory = LATTICE_KINDS[kind]
    except KeyError:
        raise InvalidConfigError(f"unknown lattice kind {kind!r}; choose from {sorted(LATTICE_KINDS)}") from None
    try:
        evaluator = factory(**params)
    except TypeError as exc:
        raise InvalidConfigError(f"bad parameters for lattice {kind!r}: {exc}") from None
    return PeriodicPotential(kind, evaluator, int(lam), params)


def _external_harmonic(k=1.0):
    k = float(k)
    return (
        lambda x: 0.5 * k * np.asarray(x) ** 2,
        lambda x: k * np.asarray(x, dtype=float),
        lambda x: np.full_like(np.asarray(x, dtype=float), k),
    )


def _external_cosine(amplitude=1.0):
    a = float(amplitude)
    return (
        lambda x: a * np.cos(x),
        lambda x: -a * np.sin(x),
        lambda x: -a * np.cos(x),
    )


EXTERNAL_KINDS = {
    "zero": lambda: (_zero, _zero, _zero),
    "harmonic": _external_harmonic,
    "cosine": _external_cosine,
}


def make_external(kind: str, params: dict | None = None) -> ExternalPotential:
    """Build an external potential from the registry (``zero``, ``harmonic``, ``cosine``)."""
    params = dict(params or {})
    try:
        factory = EXTERNAL_KINDS[kind]
    except KeyError:
        raise InvalidConfigError(f"unknown external kind {kind!r}; choose from {sorted(EXTERNAL_KINDS)}") from None
    try:
        value, grad, hess = factory(**params)
    except TypeError as exc:
        raise InvalidConfigError(f"bad parameters for external potential {kind!r}: {exc}") from None
    return ExternalPotential(kind, value, grad, hess, params)
