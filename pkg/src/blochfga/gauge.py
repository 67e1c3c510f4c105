"""Gauge-invariant Berry-phase accumulation.

The Berry phase along a trajectory is never evaluated from the (gauge
dependent) connection. Instead consecutive Bloch states are overlapped,

    F_k = <u(P_k), u(P_{k-1})> / |<u(P_k), u(P_{k-1})>|,

and the running product is kept on the unit circle. Any phase attached to
an intermediate state enters once as a bra and once as a ket and cancels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bloch import BandEigenpair, overlap, shift_modes
from .exceptions import InvalidConfigError, OverlapTooSmallError

__all__ = ["WilsonChain", "wilson_factor", "accumulate", "overlap_factors", "OVERLAP_FLOOR"]

OVERLAP_FLOOR = 0.5


@dataclass(frozen=True)
class WilsonChain:
    """Running product of normalised overlaps."""

    value: complex = 1.0 + 0.0j
    last_overlap_modulus: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "value", complex(self.value))


def wilson_factor(prev: BandEigenpair, curr: BandEigenpair, floor: float = OVERLAP_FLOOR,
                  step: int | None = None) -> tuple[complex, float]:
    """Normalised overlap with ``curr`` in the bra.

    Returns
    -------
    factor : complex
        Unit-modulus factor; exactly 1 when both arguments are the same object.
    modulus : float
        Modulus of the raw overlap.
    """
    if prev.band != curr.band:
        raise InvalidConfigError("Wilson factor needs the same band on both sides")
    if prev is curr:
        return 1.0 + 0.0j, 1.0
    ov = overlap(curr, prev)
    mod = abs(ov)
    if mod < floor:
        raise OverlapTooSmallError(curr.band, step, mod)
    return ov / mod, mod


def accumulate(chain: WilsonChain, factor: complex, modulus: float | None = None) -> WilsonChain:
    """Multiply ``factor`` into the chain and renormalise to unit modulus."""
    if abs(abs(factor) - 1.0) > 1e-12:
        raise InvalidConfigError(f"factor modulus {abs(factor)!r} is not 1")
    v = chain.value * factor
    v = v / abs(v)
    return WilsonChain(v, chain.last_overlap_modulus if modulus is None else float(modulus))


def overlap_factors(curr, prev, shift, band=None, step=None, floor: float = OVERLAP_FLOOR, index=None):
    """Vectorised Wilson factors for stacks of unit coefficient vectors.

    Parameters
    ----------
    curr, prev : complex arrays (m, 2 lam)
        Coefficients on the mode windows of the respective reduced momenta.
    shift : int array (m,)
        Winding difference ``floor(P_k) - floor(P_{k-1})``; ``prev`` is moved
        onto the window of ``curr`` before the inner product.

    Returns
    -------
    factors : complex array (m,)
    moduli : float array (m,)
    """
    prev = shift_modes(prev, -np.asarray(shift))
    ov = np.einsum("mi,mi->m", curr.conj(), prev)
    mod = np.abs(ov)
    if mod.size and mod.min() < floor:
        k = int(np.argmin(mod))
        b = None if band is None else int(np.broadcast_to(band, mod.shape)[k])
        i = None if index is None else int(index[k])
        raise OverlapTooSmallError(b, step, float(mod[k]), i)
    return ov / mod, mod
