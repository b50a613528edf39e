import numpy as np
import pytest
from conftest import I2, SIGMA_MINUS, SIGMA_X, desk_models, random_matrix

from qsde.errors import DimensionError, ModelError
from qsde.germ import (
    Germ,
    StructuralModel,
    apply_lambda,
    build_germ,
    check_ccp,
    constrained_form_min_eig,
    dissipation_matrix,
    flat_symmetry_residual,
    hudson_evans_model,
    kolmogorov_factor,
    normalization_defect,
)
from qsde.utils.linalg_utils import dag, spanning_test_ops

MODELS = desk_models()


def test_damped_qubit_germ_components(damped_germ):
    B = np.array([[1, 2j], [3, 4]], dtype=complex)
    K = 0.5 * SIGMA_MINUS.conj().T @ SIGMA_MINUS
    expected = SIGMA_MINUS.conj().T @ B @ SIGMA_MINUS - K @ B - B @ K
    np.testing.assert_allclose(damped_germ.gamma(B), expected, atol=1e-14)
    np.testing.assert_allclose(damped_germ.gamma_blk(1, 1, B), B, atol=1e-14)
    np.testing.assert_allclose(damped_germ.gamma_up(1, B), B @ SIGMA_MINUS - SIGMA_MINUS @ B, atol=1e-14)
    np.testing.assert_allclose(damped_germ.gamma_dn(1, B), dag(damped_germ.gamma_up(1, dag(B))), atol=1e-14)


def test_component_indexing(damped_germ):
    B = np.eye(2)
    np.testing.assert_allclose(damped_germ.component("-", "+", B), damped_germ.gamma(B))
    np.testing.assert_allclose(damped_germ.component(1, "+", B), damped_germ.gamma_up(1, B))
    np.testing.assert_allclose(damped_germ.component("-", 1, B), damped_germ.gamma_dn(1, B))
    with pytest.raises(DimensionError):
        damped_germ.component(2, "+", B)
    with pytest.raises(DimensionError):
        damped_germ.component("+", "-", B)


def test_lambda_subtracts_identity_on_diagonal(damped_germ):
    B = np.array([[0, 1], [2, 0]], dtype=complex)
    np.testing.assert_allclose(apply_lambda(damped_germ, 1, 1, B), np.zeros((2, 2)), atol=1e-14)
    np.testing.assert_allclose(apply_lambda(damped_germ, "-", "+", B), damped_germ.gamma(B))


def test_martingale_germ_preserves_identity(damped_germ):
    np.testing.assert_allclose(damped_germ.gamma(np.eye(2)), np.zeros((2, 2)), atol=1e-14)


def test_full_block_shape():
    model = MODELS[3]
    germ = build_germ(model)
    full = germ.full(np.eye(model.n))
    assert full.shape == ((1 + model.d) * model.n,) * 2


@pytest.mark.parametrize("model", MODELS[:6])
def test_flat_symmetry(model, rng):
    germ = build_germ(model)
    B = random_matrix(rng, model.n)
    assert flat_symmetry_residual(germ, B) <= 1e-10 * np.linalg.norm(B)


@pytest.mark.slow
def test_ccp_soundness_on_desk_models():
    for model in MODELS:
        germ = build_germ(model)
        verdict = check_ccp(germ)
        delta = dissipation_matrix(germ).matrix
        scale = np.abs(np.linalg.eigvalsh(0.5 * (delta + dag(delta)))).max()
        assert verdict.is_ccp
        assert verdict.min_eig >= -1e-10 * scale
        C = kolmogorov_factor(model)
        assert np.linalg.norm(delta - dag(C) @ C) <= 1e-10 * np.linalg.norm(delta)


@pytest.mark.slow
def test_tampered_germs_fail():
    for model in MODELS:
        verdict = check_ccp(build_germ(model).negate_channel_block())
        assert not verdict.is_ccp
        assert verdict.min_eig <= -1e-3 * verdict.scale


@pytest.mark.slow
def test_constrained_form_agrees():
    for model in MODELS:
        germ = build_germ(model)
        assert check_ccp(germ).verdicts_agree
        assert check_ccp(germ.negate_channel_block()).verdicts_agree


def test_zero_germ_is_ccp():
    verdict = check_ccp(Germ.zero(2, 1))
    assert verdict.is_ccp
    assert verdict.min_eig >= -1e-14


def test_non_ccp_lindblad_sign():
    # γ(B) = −L†BL + ... is the classic non-CP generator
    model = StructuralModel(H=np.zeros((2, 2)), L=[SIGMA_X], Ln=np.zeros((0, 1, 2, 2)))
    good = build_germ(model)
    bad = Germ(2, 0, lambda B: -good.gamma(B), good.up_fn, good.dn_fn, good.blk_fn)
    assert check_ccp(good).is_ccp
    assert not check_ccp(bad).is_ccp


def test_constrained_form_sees_through_identity(damped_germ):
    min_eig, scale = constrained_form_min_eig(damped_germ)
    assert min_eig >= -1e-10 * scale


def test_dissipation_matrix_layout(damped_germ):
    ops = spanning_test_ops(2)
    delta = dissipation_matrix(damped_germ, ops)
    assert delta.size == len(ops) * 2 * 2
    assert delta.index(1, 1, 0) == (1 * 2 + 1) * 2
    # block (m, n) at X = Z = I is γ_1^1(I) = I
    k = len(ops) - 1
    np.testing.assert_allclose(delta.block(k, 1, k, 1), I2, atol=1e-14)


def test_hudson_evans_identity_preserving(rng):
    theta = 0.4
    S = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]], dtype=complex)
    H = np.array([[1.0, 0.2], [0.2, -1.0]], dtype=complex)
    model = hudson_evans_model(S, H, random_matrix(rng, 2, 0.5))
    germ = build_germ(model)
    defect = normalization_defect(germ)
    assert np.abs(defect).max() <= 1e-12
    assert check_ccp(germ).is_ccp


def test_hudson_evans_rejects_non_isometry():
    with pytest.raises(ModelError):
        hudson_evans_model(2 * np.eye(2), np.zeros((2, 2)), np.eye(2))


def test_model_validation():
    with pytest.raises(ModelError):
        StructuralModel(H=np.array([[0, 1], [0, 0]]), L=[], Ln=[])
    with pytest.raises(ModelError):
        StructuralModel(H=np.zeros((2, 2)), L=[SIGMA_MINUS], Ln=[[I2]], D=np.eye(2))
    with pytest.raises(DimensionError):
        StructuralModel(H=np.zeros((2, 2)), L=[SIGMA_MINUS], Ln=[[np.eye(3)]])


def test_default_kn_makes_martingale(rng):
    model = MODELS[1]
    assert model.is_martingale
    germ = build_germ(model)
    n = model.n
    for m in range(1, model.d + 1):
        # γ_m(I) = Σ L^i† L_m^i − K_m vanishes with the default K_m
        np.testing.assert_allclose(germ.gamma_dn(m, np.eye(n)), np.zeros((n, n)), atol=1e-12)


def test_disagreeing_verdicts_raise(damped_germ, monkeypatch):
    monkeypatch.setattr("qsde.germ.constrained_form_min_eig", lambda germ, ops: (-1.0, 1.0))
    with pytest.raises(ModelError, match="disagree"):
        check_ccp(damped_germ)
