import numpy as np
import pytest

from preforge.algebra import build_basis, pure_radius_sq
from preforge.constraints import (
    Ensemble,
    build_full,
    build_subspace_reduced,
    build_wigner_reduced,
    heuristic_min_k,
    transition_edges,
    verify,
)
from preforge.errors import EnsembleError, PermutationError
from preforge.solver import analytic_k2, solve_wigner_family
from preforge.symmetry import WignerSymmetry, find_wigner_symmetries, lie_element, subspace_from_span


def test_constraint_counts_qubit_cyclic(rf_bm):
    cs = build_full(rf_bm, 2, "cyclic")
    assert cs.n_constraints == 8
    assert cs.n_params == 8


def test_constraint_counts_sweep(rf_bm):
    # K(D^2 - 1) + K rows; K(D^2 - 1) + |edges| unknowns.
    for d in (2, 3, 4):
        n = d * d - 1
        for k in range(2, 7):
            for graph, n_edges in (("cyclic", k), ("full", k * (k - 1))):
                edges = transition_edges(graph, k)
                assert len(edges) == n_edges
    cs = build_full(rf_bm, 5, "full")
    assert cs.n_constraints == 5 * 3 + 5
    assert cs.n_params == 5 * 3 + 20


def test_constraint_count_matches_qutrit_expectation():
    # For D = 3, K = 5 the full system carries 5 * 9 = 45 + 5 rows.
    k, d = 5, 3
    n = d * d - 1
    assert k * n + k == 45  # Bloch rows plus normalization rows
    assert heuristic_min_k(3) == 5


def test_full_residual_vanishes_on_analytic_solutions(rf_bm):
    cs = build_full(rf_bm, 2, "cyclic")
    for ens in analytic_k2(rf_bm).ensembles:
        theta = np.concatenate(
            [ens.states.ravel(), [ens.kappa[1, 0], ens.kappa[0, 1]]]
        )
        assert np.max(np.abs(cs.residual(theta))) < 1e-12


def test_full_jacobian_matches_finite_differences(rf_bm, rng):
    cs = build_full(rf_bm, 3, "cyclic")
    theta = cs.sample_start(rng)
    jac = cs.jacobian(theta)
    eps = 1e-7
    for i in range(theta.size):
        bump = theta.copy()
        bump[i] += eps
        col = (cs.residual(bump) - cs.residual(theta)) / eps
        assert np.max(np.abs(col - jac[:, i])) < 1e-5


def test_subspace_counts_and_equivalence(rf_bm, rng):
    disc = subspace_from_span(rf_bm, np.array([[0, 1.0, 0], [0, 0, 1.0]]).T)
    cs = build_subspace_reduced(rf_bm, disc, 3, "cyclic")
    assert cs.n_constraints == 9  # K(N+1) against 12 in the full space
    full = build_full(rf_bm, 3, "cyclic")
    for _ in range(20):
        theta = cs.sample_start(rng)
        states, kappa = cs.unpack(theta)
        theta_full = np.concatenate(
            [states.ravel(), [kappa[1, 0], kappa[2, 1], kappa[0, 2]]]
        )
        r_sub = np.linalg.norm(cs.residual(theta))
        r_full = np.linalg.norm(full.residual(theta_full))
        assert abs(r_sub - r_full) < 1e-12 * max(1.0, r_full)


def test_qutrit_system_counts_from_built_systems():
    # A three-level loop with distinct rates: unique full-rank steady state.
    from preforge.model import MasterEquation, vectorize
    from preforge.symmetry import find_invariant_subspaces

    def ladder(i, j):
        m = np.zeros((3, 3), complex)
        m[i, j] = 1.0
        return m

    me = MasterEquation(
        3, np.zeros((3, 3)), [1.0 * ladder(1, 0), 0.7 * ladder(2, 1), 0.4 * ladder(0, 2)]
    )
    bm = vectorize(me)
    for k in range(2, 7):
        cs = build_full(bm, k, "cyclic")
        assert cs.n_constraints == k * 8 + k
        assert cs.n_params == k * 8 + k
    subs = find_invariant_subspaces(bm)
    assert subs and all(s.n >= 2 for s in subs)  # at least D-1 dimensional
    five_dim = [s for s in subs if s.n == 5]
    assert five_dim  # same size class as real-valued density matrices
    cs = build_subspace_reduced(bm, five_dim[0], 4, "cyclic")
    assert cs.n_constraints == 24 and cs.n_params == 24  # square, down from 36
    for sub in subs[:6]:
        for k in (2, 4):
            cs = build_subspace_reduced(bm, sub, k, "cyclic")
            assert cs.n_constraints == k * (sub.n + 1)
            assert cs.n_params == k * sub.n + k


def test_redit_subspace_system_size_for_qutrits():
    # Real density matrices of a qutrit: N = (D^2 + D)/2 - 1 = 5, so a K = 4
    # cyclic search is a 24-equation square system.
    n_sub = (9 + 3) // 2 - 1
    k = 4
    assert k * (n_sub + 1) == 24
    assert k * n_sub + k == 24
    assert heuristic_min_k(3, real_subspace=True) == 4


def test_verify_passes_analytic_and_flags_perturbation(rf_bm):
    ens = analytic_k2(rf_bm).ensembles[0]
    report = verify(rf_bm, ens)
    assert report.passed and report.max_residual < 1e-10
    worse = Ensemble.from_states_kappa(2, ens.states, ens.kappa * 1.1)
    report_bad = verify(rf_bm, worse)
    assert not report_bad.passed
    # residual scales with the rate perturbation
    assert report_bad.max_residual > 0.01 * np.max(ens.kappa)


def test_verify_wigner_family_rates(ae_bm):
    fam = solve_wigner_family(ae_bm, 3)
    assert len(fam.ensembles) == 1
    ens = fam.ensembles[0]
    assert np.allclose(sorted(ens.kappa[ens.kappa > 0]), [1.3 / 6] * 6, atol=1e-12)
    assert verify(ae_bm, ens, tol=1e-10).passed


def test_residual_equivalence_bloch_vs_projector(rf_bm, rng):
    # For arbitrary candidates the two evaluation routes differ only by the
    # fixed algebraic factor sqrt(2)/D per member row.
    basis = build_basis(2)
    cs = build_full(rf_bm, 2, "cyclic")
    radius = np.sqrt(pure_radius_sq(2))
    for _ in range(1000):
        states = rng.normal(size=(2, 3))
        states = radius * states / np.linalg.norm(states, axis=1, keepdims=True)
        kappa = np.zeros((2, 2))
        kappa[1, 0], kappa[0, 1] = rng.uniform(0.05, 2.0, size=2)
        ens = Ensemble.from_states_kappa(2, states, kappa)
        report = verify(rf_bm, ens)
        theta = np.concatenate([states.ravel(), [kappa[1, 0], kappa[0, 1]]])
        resid = cs.residual(theta)
        for k in range(2):
            bloch_norm = np.linalg.norm(resid[k * 3 : (k + 1) * 3])
            assert abs(report.residuals[k] - np.sqrt(2.0) / 2.0 * bloch_norm) < 1e-12


def test_heuristic_minimum_sizes():
    expected_general = {2: 2, 3: 5, 4: 10, 5: 17, 6: 26}
    expected_real = {2: 2, 3: 4, 4: 7, 5: 11, 6: 16}
    for d, want in expected_general.items():
        assert heuristic_min_k(d) == want
    for d, want in expected_real.items():
        assert heuristic_min_k(d, real_subspace=True) == want
    with pytest.raises(ValueError):
        heuristic_min_k(1)


def test_ensemble_validation_rejects_bad_input():
    good_states = np.array([[0, 0, 1.0], [0, 0, -1.0]])
    kappa = np.array([[0.0, 0.3], [1.0, 0.0]])
    Ensemble.from_states_kappa(2, good_states, kappa)
    with pytest.raises(EnsembleError):
        Ensemble.from_states_kappa(2, good_states * 1.1, kappa)
    with pytest.raises(EnsembleError):
        Ensemble.from_states_kappa(2, good_states, -kappa)
    with pytest.raises(EnsembleError):
        Ensemble.from_states_kappa(
            2, good_states, np.array([[0.0, 0.0], [1.0, 0.0]])
        )  # one-way graph


def test_ensemble_occupations_are_stationary(ae_bm):
    ens = analytic_k2(ae_bm).ensembles[0]
    gen = ens.kappa - np.diag(ens.kappa.sum(axis=0))
    assert np.max(np.abs(gen @ ens.occupations)) < 1e-12
    assert abs(ens.occupations.sum() - 1.0) < 1e-14
    assert np.max(np.abs(ens.average() - ae_bm.x_ss)) < 1e-10


def test_wigner_reduced_thermal_family_matches_linear_equations(ae_bm):
    # Full symmetry reduction: one free member, rates tied along the two
    # edge orbits of the full graph; the known equal-rate solution solves it.
    gen = next(w.generator for w in find_wigner_symmetries(ae_bm) if w.generator is not None)
    k = 3
    w = WignerSymmetry(t0=lie_element(gen, 2 * np.pi / k), antiunitary=False)
    cs = build_wigner_reduced(ae_bm, w, perm=[1, 2, 0], k=k, graph="full")
    assert cs.structure["n_orbits"] == 1
    assert cs.n_constraints == 4
    assert cs.notes["fix_dims"] == [3]  # the cubed rotation is the identity
    assert len(cs.notes["edge_orbits"]) == 2
    fam = solve_wigner_family(ae_bm, k)
    ens = fam.ensembles[0]
    # The state parameter gives coefficients in the fixed-space basis; any
    # circle point works because the system is rotation invariant.
    rate = 1.3 / 6.0
    theta = np.concatenate([ens.states[0], [rate, rate]])
    states, kappa = cs.unpack(theta)
    assert np.max(np.abs(kappa - ens.kappa)) < 1e-9
    assert np.max(np.abs(cs.residual(theta))) < 1e-10
    expanded = cs.ensemble(theta)
    assert verify(ae_bm, expanded, tol=1e-10).passed
    from preforge.solver import family_equivalent

    assert family_equivalent(expanded, ens, gen, eps=1e-8)


def test_wigner_reduced_flags_cyclic_inconsistency(rf_bm):
    w = find_wigner_symmetries(rf_bm)[0]
    cs = build_wigner_reduced(rf_bm, w, perm=[1, 0, 2], k=3, graph="cyclic")
    assert not cs.graph_consistent
    assert "forced to zero" in cs.inconsistency_reason


def test_wigner_reduced_trivial_perm_equals_subspace_reduction(rf_bm, rng):
    w = find_wigner_symmetries(rf_bm)[0]
    cs = build_wigner_reduced(rf_bm, w, perm=[0, 1, 2], k=3, graph="cyclic")
    assert cs.graph_consistent
    disc = subspace_from_span(rf_bm, np.array([[0, 1.0, 0], [0, 0, 1.0]]).T)
    cs_sub = build_subspace_reduced(rf_bm, disc, 3, "cyclic")
    # identical-fixed-point parametrization: members confined to the x = 0 disc
    assert cs.notes["fix_dims"] == [2, 2, 2]
    for _ in range(10):
        theta = cs.sample_start(rng)
        states, kappa = cs.unpack(theta)
        assert np.max(np.abs(states[:, 0])) < 1e-12
        coeffs = states - rf_bm.x_ss
        theta_sub = np.concatenate(
            [
                (disc.basis_i0.T @ coeffs.T).T.ravel(),
                [kappa[1, 0], kappa[2, 1], kappa[0, 2]],
            ]
        )
        assert abs(
            np.linalg.norm(cs.residual(theta)) - np.linalg.norm(cs_sub.residual(theta_sub))
        ) < 1e-10


def test_wigner_reduced_validates_permutation(rf_bm):
    w = find_wigner_symmetries(rf_bm)[0]
    with pytest.raises(PermutationError):
        build_wigner_reduced(rf_bm, w, perm=[1, 2, 1], k=3, graph="cyclic")
