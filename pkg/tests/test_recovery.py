import math

import numpy as np
import pytest
from scipy.optimize import minimize

from promptcs.christoffel import (christoffel_exact_subspace, christoffel_linear,
                                  compatibility_factor, sampling_law, uniform_law)
from promptcs.errors import DivergenceError, InvalidInputError, UnknownConditionError
from promptcs.generators import (LinearGenerator, ReluGenerator, enumerate_cones,
                                 linear_tightness_family, random_relu)
from promptcs.measurement import (IID, WOR_DC, Measurements, apply, draw_plan, full_plan)
from promptcs.recovery import (RecoveryConfig, approximation_error, ball_lstsq, fit_latent,
                               omega_exact_linear, recover, recovery_bound, residual_norm)
from promptcs.signals import Signal, relative_error
from promptcs.verification import check_nondegeneracy, check_srec

FAST = RecoveryConfig(max_steps=100, patience=20, restarts=2)


def test_full_sampling_linear_exact():
    G = linear_tightness_family(32, 3, ["a", "b"], seed=1)
    rng = np.random.default_rng(0)
    for trial in range(3):
        z = rng.uniform(-1, 1, 3)
        f = G.generate(z, "a")
        plan = full_plan(32)
        res = recover(G, "a", plan, apply(plan, f), FAST)
        assert relative_error(f, res.f_hat) < 1e-6


def test_zero_measurements_give_zero():
    G = linear_tightness_family(16, 2, ["a"])
    plan = draw_plan(uniform_law(16), 8, WOR_DC)
    res = recover(G, "a", plan, Measurements(np.zeros(8), 1), FAST)
    assert not np.any(res.f_hat.data) and res.residual_norm == 0.0


@pytest.mark.parametrize("seed", range(3))
def test_relu_planted_certificate(seed):
    G = random_relu(2, (3,), 16, seed=seed)
    decomp = enumerate_cones(G, "c")
    law = sampling_law(christoffel_exact_subspace(decomp, decomp, lower_samples=8))
    # grow m until the exact nondegeneracy check certifies the plan
    for m in (8, 12, 16, 24, 32, 48):
        plan = draw_plan(law, m, IID, seed=seed)
        if check_nondegeneracy(decomp, plan, 0.9).passed:
            break
    else:
        pytest.fail("no certified plan found")
    z_star = np.array([0.8, -0.5])
    y = apply(plan, G.generate(z_star, "c"))
    res = recover(G, "c", plan, y, RecoveryConfig(restarts=4, seed=seed), planted=z_star)
    assert res.planted_gap <= 1e-8
    assert res.residual_norm <= residual_norm(G, "c", plan, y, z_star) + 1e-8


def test_unknown_condition_and_shapes():
    G = linear_tightness_family(16, 2, ["a"])
    plan = draw_plan(uniform_law(16), 4)
    y = apply(plan, G.generate(np.zeros(2), "a"))
    with pytest.raises(UnknownConditionError):
        recover(G, "zzz", plan, y, FAST)
    with pytest.raises(InvalidInputError):
        recover(G, "a", draw_plan(uniform_law(8), 4), y, FAST)
    with pytest.raises(InvalidInputError):
        recover(G, "a", plan, Measurements(np.zeros(3), 1), FAST)


def test_divergence_reported_with_diagnostics():
    G = ReluGenerator({"c": [np.full((2, 2), 1e200), np.full((8, 2), 1e200)]})
    plan = full_plan(8)
    y = Measurements(np.ones(8, dtype=complex), 1)
    cfg = RecoveryConfig(init="provided", restarts=1, max_steps=5, patience=5, polish_steps=0)
    with np.errstate(all="ignore"), pytest.raises(DivergenceError) as info:
        recover(G, "c", plan, y, cfg, z_init=np.array([1.0, 1.0]))
    assert "step" in info.value.diagnostics


def test_config_validation():
    with pytest.raises(InvalidInputError):
        RecoveryConfig(restarts=0)
    with pytest.raises(InvalidInputError):
        RecoveryConfig(lr_schedule="step")
    with pytest.raises(InvalidInputError):
        RecoveryConfig.from_dict({"max_step": 3})
    assert RecoveryConfig.from_dict({"restarts": 2}).restarts == 2


def test_provided_init_needs_latent():
    G = linear_tightness_family(16, 2, ["a"])
    plan = full_plan(16)
    y = apply(plan, G.generate(np.ones(2), "a"))
    with pytest.raises(InvalidInputError):
        recover(G, "a", plan, y, RecoveryConfig(init="provided"))
    res = recover(G, "a", plan, y, RecoveryConfig(init="provided", restarts=1),
                  z_init=np.ones(2))
    assert res.residual_norm < 1e-12


def test_recovery_is_seeded():
    G = random_relu(2, (3,), 16, seed=1)
    plan = draw_plan(uniform_law(16), 10, seed=1)
    y = apply(plan, G.generate(np.array([0.5, 0.5]), "c"))
    a = recover(G, "c", plan, y, FAST)
    b = recover(G, "c", plan, y, FAST)
    assert np.array_equal(a.z_hat, b.z_hat)


def test_ball_lstsq_against_constrained_solver():
    rng = np.random.default_rng(2)
    for trial in range(10):
        M = rng.standard_normal((12, 3)) + 1j * rng.standard_normal((12, 3))
        b = rng.standard_normal(12) * 5 + 1j * rng.standard_normal(12)
        R = 0.3 if trial % 2 else 50.0
        z = ball_lstsq(M, b, R)
        Mr = np.vstack([M.real, M.imag])
        br = np.concatenate([b.real, b.imag])
        ref = minimize(lambda v: np.sum((Mr @ v - br) ** 2), np.zeros(3),
                       constraints=[{"type": "ineq", "fun": lambda v: R ** 2 - v @ v}],
                       method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
        assert np.linalg.norm(z) <= R * (1 + 1e-12)
        assert np.sum((Mr @ z - br) ** 2) <= ref.fun * (1 + 1e-7) + 1e-12


def test_omega_exact_linear_zero_at_optimum():
    G = linear_tightness_family(16, 2, ["a"])
    plan = draw_plan(uniform_law(16), 6, seed=3)
    y = apply(plan, Signal(np.random.default_rng(3).standard_normal(16)))
    res = recover(G, "a", plan, y, FAST)
    assert omega_exact_linear(G, "a", plan, y, res.z_hat) <= 1e-10
    assert omega_exact_linear(G, "a", plan, y, np.zeros(2)) >= 0.0


def test_approximation_error_in_class():
    G = random_relu(2, (3,), 8, seed=4)
    f = G.generate(np.array([0.7, 0.2]), "c")
    assert approximation_error(G, "c", f) < 1e-8


def test_approximation_error_orthogonal_target():
    B = np.zeros((6, 2))
    B[0, 0] = B[1, 1] = 1.0
    f = np.zeros(6)
    f[3:] = [1.0, 2.0, 2.0]
    assert approximation_error(LinearGenerator({"c": B}), "c", Signal(f)) == pytest.approx(3.0)


def test_approximation_error_normal_equations():
    rng = np.random.default_rng(5)
    B = rng.standard_normal((20, 3))
    G = LinearGenerator({"c": B})
    f = 0.05 * rng.standard_normal(20)
    z = np.linalg.solve(B.T @ B, B.T @ f)
    assert np.linalg.norm(z) < G.radius
    expected = np.linalg.norm(f - B @ z)
    assert abs(approximation_error(G, "c", Signal(f)) - expected) < 1e-9
    assert np.allclose(fit_latent(G, "c", f)[0], z, atol=1e-9)


def test_bound_vanishes_in_class():
    assert recovery_bound(7.0, 0.5, 0.0, 0.0, 0.0, 0.0) == 0.0


def test_bound_direct_formula():
    assert recovery_bound(4.0, 1.0, 0.0, 0.5, 0.0, 0.0) == pytest.approx(2.5)
    assert recovery_bound(1.0, 0.5, 0.1, 0.0, 0.2, 0.3) == pytest.approx((0.4 + 0.3 + 0.1) / 0.5)


def test_bound_rejects_bad_inputs():
    with pytest.raises(InvalidInputError):
        recovery_bound(1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    with pytest.raises(InvalidInputError):
        recovery_bound(1.0, 0.5, 0.0, -1.0, 0.0, 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_mismatched_linear_error_within_bound(seed):
    G = linear_tightness_family(32, 2, ["r", "s"], theta=0.5, seed=seed)
    G = LinearGenerator({"r": G.basis("r"), "star": G.basis("s") + 0.3 * G.basis("r")})
    law = sampling_law(christoffel_linear(G, "r", "r"))
    plan = draw_plan(law, 24, IID, seed=seed)
    cert = check_srec(check_nondegeneracy(enumerate_cones(G, "r"), plan, 0.99))
    f_star = G.generate(np.array([0.6, -0.4]), "star")
    res = recover(G, "r", plan, apply(plan, f_star), FAST)
    lam = compatibility_factor(christoffel_linear(G, "star", "r"), law)
    bound = recovery_bound(lam, cert.gamma, cert.q, approximation_error(G, "r", f_star), 0.0,
                           omega_exact_linear(G, "r", plan, apply(plan, f_star), res.z_hat))
    assert np.linalg.norm(res.f_hat.data - f_star.data) <= bound
    assert math.isfinite(bound)
