import numpy as np
import pytest

from preforge.algebra import random_density_matrix
from preforge.errors import InvalidSettingError, SteadyStateError
from preforge.model import (
    MasterEquation,
    UnravellingSetting,
    apply_unravelling,
    lindbladian,
    no_jump_generator,
    unravelled_lindbladian,
    vectorize,
)


def test_generator_annihilates_steady_state(rf_me, rf_bm):
    liou = lindbladian(rf_me)
    assert np.linalg.norm(liou.apply(rf_bm.steady_rho())) < 1e-10


def test_zero_model_gives_zero_map(rng):
    me = MasterEquation(2, np.zeros((2, 2)), [])
    liou = lindbladian(me)
    for _ in range(5):
        rho = random_density_matrix(2, rng)
        assert np.linalg.norm(liou.apply(rho)) < 1e-15


def test_trace_preservation_on_random_matrices(ae_me, rng):
    liou = lindbladian(ae_me)
    for _ in range(1000):
        rho = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        assert abs(np.trace(liou.apply(rho))) < 1e-12 * max(1.0, np.linalg.norm(rho))


def test_vectorize_driven_qubit_matches_closed_form(rf_bm):
    gamma, omega = 1.0, 0.18
    l0 = np.array([[-gamma / 2, 0, 0], [0, -gamma / 2, -omega], [0, omega, -gamma]])
    b = np.array([0.0, 0.0, -gamma])
    assert np.max(np.abs(rf_bm.l0 - l0)) < 1e-12
    assert np.max(np.abs(rf_bm.b - b)) < 1e-12


def test_vectorize_thermal_qubit_matches_closed_form(ae_bm):
    gs, gd = 1.3, 0.3 - 1.0
    assert np.max(np.abs(ae_bm.l0 + gs * np.diag([0.5, 0.5, 1.0]))) < 1e-12
    assert np.max(np.abs(ae_bm.b - np.array([0, 0, gd]))) < 1e-12
    assert np.max(np.abs(ae_bm.x_ss - np.array([0, 0, gd / gs]))) < 1e-12


def test_vectorize_consistency_on_random_states(rf_me, rf_bm, rng):
    liou = lindbladian(rf_me)
    basis = rf_bm.basis
    from preforge.algebra import rho_to_bloch

    for _ in range(100):
        rho = random_density_matrix(2, rng)
        x = rho_to_bloch(rho, basis)
        img = liou.apply(rho)
        lhs = 0.5 * 2 * np.einsum("kij,ji->k", basis.traceless, img).real
        assert np.max(np.abs(lhs - (rf_bm.l0 @ x + rf_bm.b))) < 1e-10


def test_vectorize_rejects_pure_dephasing():
    me = MasterEquation(2, np.zeros((2, 2)), [np.diag([1.0, -1.0])])
    with pytest.raises(SteadyStateError):
        vectorize(me)


def test_traceless_enforcement_keeps_generator(rng):
    c_traceful = np.array([[0.3, 0.0], [1.0, 0.3]], dtype=complex)
    with pytest.warns(UserWarning):
        me = MasterEquation(2, np.zeros((2, 2)), [c_traceful])
    liou = lindbladian(me)
    for _ in range(20):
        rho = random_density_matrix(2, rng)
        h_eff = -0.5j * c_traceful.conj().T @ c_traceful
        expected = (
            -1j * (h_eff @ rho - rho @ h_eff.conj().T)
            + c_traceful @ rho @ c_traceful.conj().T
        )
        assert np.max(np.abs(liou.apply(rho) - expected)) < 1e-12
    assert abs(np.trace(me.lindblads[0])) < 1e-12


def test_identity_setting_returns_originals(rf_me):
    setting = UnravellingSetting.identity(1)
    jumps, h = apply_unravelling(rf_me, setting)
    assert np.allclose(jumps[0], rf_me.lindblads[0])
    assert np.allclose(h, rf_me.hamiltonian)


def test_imaginary_amplitude_setting_preserves_generator(rf_me, rf_bm):
    setting = UnravellingSetting(np.eye(1), [0.5j])
    basis = rf_bm.basis
    ref = lindbladian(rf_me).matrix_rep(basis)
    rep = unravelled_lindbladian(rf_me, setting).matrix_rep(basis)
    assert np.linalg.norm(rep - ref, 2) < 1e-10 * np.linalg.norm(ref, 2)


def test_random_settings_preserve_generator(ae_me, ae_bm, rng):
    basis = ae_bm.basis
    ref = lindbladian(ae_me).matrix_rep(basis)
    for _ in range(10):
        raw = rng.normal(size=(3, 2)) + 1j * rng.normal(size=(3, 2))
        q, _ = np.linalg.qr(raw)
        setting = UnravellingSetting(q, rng.normal(size=3) + 1j * rng.normal(size=3))
        rep = unravelled_lindbladian(ae_me, setting).matrix_rep(basis)
        assert np.linalg.norm(rep - ref, 2) < 1e-10 * np.linalg.norm(ref, 2)


def test_generator_invariance_pointwise_cases(rf_me, ae_me, rng):
    # 1000 randomized (setting, state) evaluations across both models.
    cases = 0
    for me in (rf_me, ae_me):
        liou = lindbladian(me)
        n_l = me.n_channels
        for _ in range(50):
            raw = rng.normal(size=(n_l, n_l)) + 1j * rng.normal(size=(n_l, n_l))
            q, _ = np.linalg.qr(raw)
            setting = UnravellingSetting(q, rng.normal(size=n_l) + 1j * rng.normal(size=n_l))
            other = unravelled_lindbladian(me, setting)
            for _ in range(10):
                rho = random_density_matrix(2, rng)
                assert np.max(np.abs(liou.apply(rho) - other.apply(rho))) < 1e-10
                cases += 1
    assert cases == 1000


def test_no_jump_generator_with_zero_amplitude(rf_me):
    setting = UnravellingSetting.identity(1)
    assert np.allclose(no_jump_generator(rf_me, setting), rf_me.effective_hamiltonian())


def test_no_jump_generator_pins_a_pure_state(rf_me, rf_bm):
    # With the imaginary half-unit amplitude, one eigenvector of the no-jump
    # operator is a pure state on the axis decoupled from the drive.
    from preforge.solver import analytic_k2

    members = None
    for ens, tag in zip(analytic_k2(rf_bm).ensembles, analytic_k2(rf_bm).family_tags):
        if abs(tag["eigenvalue"] + 0.5) < 1e-12:
            members = ens.kets()
    assert members is not None
    for beta in (0.5j, -0.5j):
        h_eff = no_jump_generator(rf_me, UnravellingSetting(np.eye(1), [beta]))
        vals, vecs = np.linalg.eig(h_eff)
        overlaps = [
            max(abs(np.vdot(vecs[:, i], members[0])), abs(np.vdot(vecs[:, i], members[1])))
            for i in range(2)
        ]
        assert max(overlaps) > 1 - 1e-10


def test_no_jump_generator_thermal_poles(ae_me):
    setting = UnravellingSetting.identity(2)
    h_eff = no_jump_generator(ae_me, setting)
    assert np.max(np.abs(h_eff - np.diag(np.diag(h_eff)))) < 1e-14  # diagonal
    for ket in (np.array([1.0, 0]), np.array([0, 1.0])):
        v = h_eff @ ket
        assert np.linalg.norm(v - (ket.conj() @ v) * ket) < 1e-14


def test_setting_validation():
    with pytest.raises(InvalidSettingError):
        UnravellingSetting(np.array([[1.0, 0.0], [0.0, 0.5]]), [0.0, 0.0])
    with pytest.raises(InvalidSettingError):
        UnravellingSetting(np.zeros((1, 2)), [0.0])  # fewer detectors than channels
