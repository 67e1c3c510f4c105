import warnings

import numpy as np
import pytest
from sklearn.base import clone

from blochfga.bloch import (
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
    shift_modes,
    solve_bands,
)
from blochfga.exceptions import InvalidConfigError, NearDegeneracyWarning
from blochfga.potentials import make_lattice


def test_free_hamiltonian_small():
    H = assemble_hamiltonian(0.0, 1, make_lattice("zero", lam=1))
    np.testing.assert_array_equal(H, np.diag([0.5, 0.0]))


def test_cos_hamiltonian_two_by_two():
    H = assemble_hamiltonian(0.5, 1, make_lattice("cosine", lam=1))
    np.testing.assert_allclose(H, [[0.125, 0.5], [0.5, 0.125]], atol=1e-15)
    np.testing.assert_allclose(np.linalg.eigvalsh(H), [-0.375, 0.625], atol=1e-14)


@pytest.mark.parametrize("xi", [0.0, 0.137, 0.5, 0.93])
def test_hamiltonian_hermitian(bump_lattice, xi):
    odd = make_lattice("cosine")
    for V in (bump_lattice, odd):
        H = assemble_hamiltonian(xi, 16, V)
        assert np.array_equal(H, H.conj().T)


def test_eigenpair_two_by_two_oracle():
    solver = BlochSolver(make_lattice("cosine", lam=1), 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NearDegeneracyWarning)
        e = solver.eigenpair_at(0.5, 1)
    assert e.energy == pytest.approx(-0.375, abs=1e-14)


def test_free_bands_exact(free_lattice):
    problem = BlochProblem(free_lattice, 16, 200)
    table = solve_bands(problem, 4)
    xi = problem.xi_grid
    expected = np.where(xi <= 0.5, xi ** 2 / 2, (xi - 1) ** 2 / 2)
    assert np.max(np.abs(table.energies[:, 0] - expected)) <= 1e-12


def test_grid_eigen_residuals(bump_lattice):
    solver = BlochSolver(bump_lattice, 16)
    for xi in BlochProblem(bump_lattice, 16, 50).xi_grid:
        H = solver.hamiltonians(xi)
        E, V = solver.full(xi)
        assert np.max(np.linalg.norm(H @ V - V * E, axis=0)) <= 1e-10


def test_bump_gaps_open_at_high_symmetry_points(bump_lattice):
    table = BlochBandSolver(n_bands=4, n_xi=200).fit(bump_lattice).table_
    free = BlochBandSolver(n_bands=4, n_xi=200).fit(make_lattice("zero")).table_
    assert np.all(table.min_gaps > 1e-3)
    assert np.all(free.min_gaps < 1e-2)


def test_problem_grid_and_validation(cos_lattice):
    p = BlochProblem(cos_lattice, 16, 200)
    assert p.xi_grid[0] == pytest.approx(1 / 400)
    np.testing.assert_allclose(np.diff(p.xi_grid), p.dxi)
    assert p.xi_grid[-1] == pytest.approx(1 - 1 / 400)
    with pytest.raises(InvalidConfigError):
        BlochProblem(cos_lattice, 16, 200, rho=0.0)
    with pytest.raises(InvalidConfigError):
        BlochProblem(cos_lattice, 0, 200)


def test_cache_is_deterministic(bump_lattice):
    solver = BlochSolver(bump_lattice)
    a = solver.eigenpair_at(0.3141, 2)
    b = solver.eigenpair_at(0.3141, 2)
    assert np.array_equal(a.coeffs, b.coeffs)
    assert solver.full(0.3141)[1] is solver.full(1.3141 - 1.0)[1]


def test_orthonormality(bump_lattice):
    solver = BlochSolver(bump_lattice)
    pairs = [solver.eigenpair_at(0.21, n) for n in range(1, 9)]
    G = np.array([[overlap(a, b) for b in pairs] for a in pairs])
    assert np.max(np.abs(G - np.eye(8))) <= 1e-10


def test_overlap_self_and_symmetry(cos_lattice):
    solver = BlochSolver(cos_lattice)
    e = solver.eigenpair_at(0.4, 3)
    assert overlap(e, e) == pytest.approx(1.0, abs=1e-12)
    f = solver.eigenpair_at(0.41, 3)
    assert overlap(e, f) == pytest.approx(np.conj(overlap(f, e)), abs=1e-15)


def test_overlap_perturbative_decay(cos_lattice):
    solver = BlochSolver(cos_lattice)
    deltas = np.array([1e-2, 5e-3, 2.5e-3, 1.25e-3])
    e0 = solver.eigenpair_at(0.3, 2)
    defect = np.array([1 - abs(overlap(e0, solver.eigenpair_at(0.3 + d, 2))) for d in deltas])
    C = np.max(defect / deltas ** 2)
    slope = np.polyfit(np.log(deltas), np.log(defect), 1)[0]
    assert abs(slope - 2) < 0.05
    assert np.all(1 - defect >= 1 - C * deltas ** 2)


def test_winding_shift_consistent(cos_lattice):
    solver = BlochSolver(cos_lattice)
    e = solver.eigenpair_at(0.999, 1)
    f = solver.eigenpair_at(0.001, 1).wound(1)
    # u at 0.999 and at 1.001 = 0.001 + 1 are neighbours on the same band
    assert abs(overlap(e, f)) > 0.99
    assert abs(overlap(e, solver.eigenpair_at(0.001, 1))) < 0.9


def test_shift_modes():
    c = np.arange(6.0)
    np.testing.assert_array_equal(shift_modes(c, 2), [2, 3, 4, 5, 0, 0])
    np.testing.assert_array_equal(shift_modes(c, -1), [0, 0, 1, 2, 3, 4])
    np.testing.assert_array_equal(shift_modes(c, 7), np.zeros(6))
    stack = np.vstack([c, c])
    np.testing.assert_array_equal(shift_modes(stack, np.array([1, -1])), [[1, 2, 3, 4, 5, 0], [0, 0, 1, 2, 3, 4]])


def test_evaluate_u_free_plane_wave(free_lattice):
    e = BlochSolver(free_lattice).eigenpair_at(0.3, 1)
    x = np.linspace(-np.pi, np.pi, 17)
    np.testing.assert_allclose(np.abs(evaluate_u(e, x)), 1 / np.sqrt(2 * np.pi), atol=1e-14)


def test_evaluate_u_periodic_and_normalised(bump_lattice):
    e = BlochSolver(bump_lattice).eigenpair_at(0.37, 3)
    x = np.linspace(-np.pi, np.pi, 33)
    assert np.max(np.abs(evaluate_u(e, x) - evaluate_u(e, x + 2 * np.pi))) <= 1e-12
    xq = -np.pi + 2 * np.pi * np.arange(805) / 805
    mass = 2 * np.pi / 805 * np.sum(np.abs(evaluate_u(e, xq)) ** 2)
    assert mass == pytest.approx(1.0, abs=1e-8)


def test_band_grad_free():
    table = solve_bands(BlochProblem(make_lattice("zero"), 16, 200), 2)
    assert band_grad(table, 1, 0.25) == pytest.approx(0.25, abs=1e-6)
    assert band_value(table, 1, 0.25) == pytest.approx(0.03125, abs=1e-6)


def test_band_symmetry_cos(cos_lattice):
    table = solve_bands(BlochProblem(cos_lattice, 16, 200), 6)
    for n in range(1, 7):
        assert abs(band_grad(table, n, 0.5)) <= 1e-6
        xi = np.linspace(0.05, 0.45, 9)
        np.testing.assert_allclose(band_value(table, n, xi), band_value(table, n, 1 - xi), atol=1e-9)


def test_band_grad_matches_finite_differences(bump_lattice, rng):
    table = solve_bands(BlochProblem(bump_lattice, 16, 200), 8)
    xi = rng.uniform(0, 1, 100)
    h = 1e-5
    for n in (1, 4, 8):
        fd = (band_value(table, n, xi + h) - band_value(table, n, xi - h)) / (2 * h)
        assert np.max(np.abs(band_grad(table, n, xi) - fd)) <= 1e-6
        fd2 = (band_grad(table, n, xi + h) - band_grad(table, n, xi - h)) / (2 * h)
        hess = band_hess(table, n, xi)
        assert np.max(np.abs(hess - fd2) / np.maximum(1.0, np.abs(hess))) <= 1e-5


def test_dense_derivatives_match_interpolant(bump_lattice, rng):
    table = solve_bands(BlochProblem(bump_lattice, 16, 200), 8)
    xi = rng.uniform(0, 1, 50)
    for n in (1, 5, 8):
        E, dE, d2E = table.derivatives(n, xi)
        np.testing.assert_allclose(E, table.evaluate(n, xi), atol=1e-10)
        np.testing.assert_allclose(dE, table.evaluate(n, xi, 1), atol=1e-8)
        np.testing.assert_allclose(d2E, table.evaluate(n, xi, 2), atol=1e-5 * max(1, np.abs(d2E).max()))


def test_interpolant_matches_direct_diagonalisation(bump_lattice, rng):
    table = solve_bands(BlochProblem(bump_lattice, 16, 200), 8)
    solver = BlochSolver(bump_lattice)
    for xi in rng.uniform(0, 1, 10):
        E = solver.full(xi)[0][:8]
        approx = np.array([table.evaluate(n, xi) for n in range(1, 9)])
        np.testing.assert_allclose(approx[:4], E[:4], rtol=0, atol=1e-8)
        np.testing.assert_allclose(approx[4:], E[4:], rtol=0, atol=1e-5)


def test_band_table_bounds(cos_lattice):
    table = solve_bands(BlochProblem(cos_lattice, 16, 40), 3)
    with pytest.raises(IndexError):
        table.evaluate(0, 0.2)
    with pytest.raises(InvalidConfigError):
        BandTable(np.linspace(0, 1, 5), np.zeros((4, 2)))
    lo, E, hi = table.band_energy_guess(np.array([1, 3]), np.array([0.2, 0.2]))
    assert lo[0] == -np.inf and np.isfinite(hi[1])


def test_rephasing_changes_only_phases(bump_lattice):
    a = BlochSolver(bump_lattice)
    b = BlochSolver(bump_lattice, rephase_seed=7)
    Ea, Va = a.full(0.23)
    Eb, Vb = b.full(0.23)
    np.testing.assert_array_equal(Ea, Eb)
    ratio = np.sum(np.conj(Va) * Vb, axis=0)
    np.testing.assert_allclose(np.abs(ratio), 1.0, atol=1e-12)
    assert np.max(np.abs(ratio - 1)) > 1e-3


def test_track_matches_eigh(bump_lattice, rng):
    solver = BlochSolver(bump_lattice)
    table = solve_bands(BlochProblem(bump_lattice, 16, 200), 9)
    xi0 = rng.uniform(0.05, 0.95, 20)
    bands = rng.integers(1, 9, 20)
    start = solver.unit_vectors(xi0, bands)
    xi = xi0 + 1e-3
    lo, E, hi = table.band_energy_guess(bands, xi)
    v, rho = solver.track(xi, bands, start, E, lo, hi)
    ref = solver.unit_vectors(xi, bands)
    np.testing.assert_allclose(np.abs(np.sum(np.conj(ref) * v, axis=1)), 1.0, atol=1e-10)
    np.testing.assert_allclose(rho, [solver.full(x)[0][n - 1] for x, n in zip(xi, bands)], atol=1e-10)


def test_estimator_api(cos_lattice):
    est = BlochBandSolver(n_bands=3, n_xi=64)
    assert est.get_params()["n_bands"] == 3
    assert clone(est).set_params(n_bands=2).n_bands == 2
    pred = est.fit(cos_lattice).predict([0.1, 0.2])
    assert pred.shape == (2, 3)
    assert np.all(np.diff(pred, axis=1) > 0)


def test_eigenpair_band_range(cos_lattice):
    with pytest.raises(InvalidConfigError):
        BlochSolver(cos_lattice).eigenpair_at(0.1, 0)
    assert isinstance(BlochSolver(cos_lattice).eigenpair_at(0.1, 1), BandEigenpair)
