import numpy as np
import pytest

from blochfga.bloch import BlochSolver
from blochfga.exceptions import InvalidConfigError, OverlapTooSmallError
from blochfga.gauge import WilsonChain, accumulate, overlap_factors, wilson_factor


@pytest.fixture(scope="module")
def solver():
    from blochfga.potentials import make_lattice

    return BlochSolver(make_lattice("gaussian-bump", {"alpha": 25.0}))


def test_self_factor_is_exactly_one(solver):
    e = solver.eigenpair_at(0.3, 2)
    assert wilson_factor(e, e) == (1.0, 1.0)


def test_factor_is_unimodular(solver):
    f, mod = wilson_factor(solver.eigenpair_at(0.3, 2), solver.eigenpair_at(0.305, 2))
    assert abs(abs(f) - 1) < 1e-15
    assert 0.99 < mod <= 1 + 1e-12


def test_band_mismatch(solver):
    with pytest.raises(InvalidConfigError):
        wilson_factor(solver.eigenpair_at(0.3, 1), solver.eigenpair_at(0.3, 2))


def test_small_overlap_raises(solver):
    with pytest.raises(OverlapTooSmallError) as info:
        wilson_factor(solver.eigenpair_at(0.1, 3), solver.eigenpair_at(0.6, 3), step=4)
    assert info.value.step == 4


def test_accumulate_rules(rng):
    chain = WilsonChain()
    for _ in range(10):
        chain = accumulate(chain, 1.0)
    assert chain.value == 1.0
    chain = accumulate(accumulate(WilsonChain(), np.exp(1j * np.pi / 4)), np.exp(-1j * np.pi / 4))
    assert abs(chain.value - 1) <= 1e-15
    chain = WilsonChain()
    for a in rng.uniform(0, 2 * np.pi, 1000):
        chain = accumulate(chain, np.exp(1j * a))
    assert abs(abs(chain.value) - 1) <= 1e-15
    with pytest.raises(InvalidConfigError):
        accumulate(chain, 1.1)


def _closed_chain(solver, path, band, phases=None):
    """Bra at the end, ket at the start, Wilson product in between."""
    nodes = [solver.eigenpair_at(x, band) for x in path]
    if phases is not None:
        nodes = [type(e)(e.xi, e.band, e.energy, e.coeffs * ph) for e, ph in zip(nodes, phases)]
    chain = WilsonChain()
    for prev, curr in zip(nodes[:-1], nodes[1:]):
        chain = accumulate(chain, *wilson_factor(prev, curr))
    # nodes[-1] appears as a ket in the reconstruction, nodes[0] as a bra in the transform
    return chain.value * nodes[-1].coeffs[16] * np.conj(nodes[0].coeffs[17])


def test_closed_chain_gauge_invariant(solver, rng):
    path = np.linspace(0.2, 0.35, 31)
    a = _closed_chain(solver, path, 2)
    b = _closed_chain(solver, path, 2, np.exp(2j * np.pi * rng.uniform(size=path.size)))
    assert abs(a - b) <= 1e-12 * abs(a)


def test_vectorised_factors_match_scalar(solver):
    xi0, xi1 = np.array([0.2, 0.6]), np.array([0.21, 0.59])
    prev = solver.unit_vectors(xi0, [1, 3])
    curr = solver.unit_vectors(xi1, [1, 3])
    f, mod = overlap_factors(curr, prev, np.zeros(2, int))
    for i, (x0, x1, n) in enumerate(zip(xi0, xi1, [1, 3])):
        g, m = wilson_factor(solver.eigenpair_at(x0, n), solver.eigenpair_at(x1, n))
        assert f[i] == pytest.approx(g, abs=1e-13)
        assert mod[i] == pytest.approx(m, abs=1e-13)


def test_vectorised_floor(solver):
    prev = solver.unit_vectors([0.1], [3])
    curr = solver.unit_vectors([0.6], [3])
    with pytest.raises(OverlapTooSmallError):
        overlap_factors(curr, prev, np.zeros(1, int), band=np.array([3]), index=np.array([11]))


def test_chain_converges_with_step_refinement():
    # a lattice without inversion symmetry carries a non-trivial Berry phase
    from blochfga.potentials import PeriodicPotential

    lattice = PeriodicPotential("asym", lambda x: np.cos(x) + 0.6 * np.sin(2 * x))
    solver = BlochSolver(lattice)

    def invariant(m):
        path = np.linspace(0.1, 0.4, m + 1)
        return _closed_chain(solver, path, 1)

    ref = invariant(2048)
    errs = np.array([abs(invariant(m) - ref) / abs(ref) for m in (8, 16, 32)])
    assert errs[0] > 1e-8
    orders = np.log2(errs[:-1] / errs[1:])
    assert np.all(orders >= 0.9)
