import math

import numpy as np
import pytest

from promptcs.christoffel import (SamplingLaw, christoffel_exact_subspace, christoffel_linear,
                                  sampling_law, uniform_law)
from promptcs.errors import InvalidInputError, ModeConflictError, NoCertificateError
from promptcs.generators import (LinearGenerator, enumerate_cones, linear_tightness_family,
                                 lipschitz_bound, random_relu)
from promptcs.measurement import WOR_DC, apply_array, draw_plan, full_plan
from promptcs.verification import (NondegeneracyReport, SecantClass, build_secant_net,
                                   calibrate_constant, check_nondegeneracy, check_srec,
                                   complexity_lipschitz, complexity_net, complexity_piecewise,
                                   complexity_relu, concentration_experiment,
                                   lipschitz_net_bound, net_distortion, net_extension_check,
                                   nondegeneracy_pass_rate, piecewise_net_bound,
                                   secant_rayleigh, srec_pair_check)


def relu_setup(seed=0, m=40):
    G = random_relu(2, (3,), 16, seed=seed)
    d = enumerate_cones(G, "c")
    law = sampling_law(christoffel_exact_subspace(d, d, lower_samples=8))
    return G, d, law, draw_plan(law, m, seed=seed)


def test_full_unitary_plan_has_zero_distortion():
    G = linear_tightness_family(16, 3, ["a"])
    rep = check_nondegeneracy(enumerate_cones(G, "a"), full_plan(16, law=uniform_law(16)), 0.1)
    assert rep.tau_hat < 1e-10 and rep.passed


def test_one_dim_class_distortion_matches_direct_ratio():
    b = np.zeros((16, 1))
    b[:, 0] = np.cos(2 * np.pi * 3 * np.arange(16) / 16) + 0.1 * np.cos(2 * np.pi * np.arange(16) / 16)
    G = LinearGenerator({"c": b})
    law = sampling_law(christoffel_linear(G, "c", "c"))
    plan = draw_plan(law, 2, seed=1)
    direct = np.sum(np.abs(apply_array(plan, b[:, 0])) ** 2) / np.sum(b ** 2)
    rep = check_nondegeneracy(enumerate_cones(G, "c"), plan, 0.05)
    assert rep.tau_hat == pytest.approx(abs(direct - 1), abs=1e-12)
    # the matched law makes every single draw an isometry on a line
    assert rep.tau_hat < 0.05 and rep.passed


@pytest.mark.parametrize("seed", range(3))
def test_sampled_never_exceeds_exact(seed):
    _, d, _, plan = relu_setup(seed, m=12)
    exact = check_nondegeneracy(d, plan, 0.5)
    sampled = check_nondegeneracy(d, plan, 0.5, method="sampled", probes=3000, seed=seed)
    assert sampled.tau_hat <= exact.tau_hat + 1e-12


def test_unweighted_plan_is_a_mode_error():
    G = linear_tightness_family(16, 2, ["a"])
    plan = draw_plan(uniform_law(16), 4, WOR_DC)
    with pytest.raises(ModeConflictError):
        check_nondegeneracy(enumerate_cones(G, "a"), plan, 0.5)


def test_srec_from_report():
    assert check_srec(NondegeneracyReport(0.0, "exact_spectral", 0.5, True)).gamma == 1.0
    assert check_srec(NondegeneracyReport(0.19, "exact_spectral", 0.5, True)).gamma == \
        pytest.approx(0.9)
    with pytest.raises(NoCertificateError):
        check_srec(NondegeneracyReport(1.0, "exact_spectral", 0.5, False))


@pytest.mark.parametrize("seed", range(3))
def test_srec_holds_on_sampled_pairs(seed):
    G, d, _, plan = relu_setup(seed, m=48)
    rep = check_nondegeneracy(d, plan, 0.95)
    assert rep.passed
    srec = check_srec(rep)
    violations, worst = srec_pair_check(G, "c", plan, srec.gamma, srec.q, 10_000, seed)
    assert violations == 0 and worst >= -1e-12


def test_secant_rayleigh_matches_norms():
    G, _, _, plan = relu_setup(0)
    H = np.random.default_rng(0).standard_normal((5, 16))
    direct = [np.linalg.norm(apply_array(plan, h)) ** 2 / np.linalg.norm(h) ** 2 for h in H]
    np.testing.assert_allclose(secant_rayleigh(plan, H), direct, rtol=1e-12)


def test_relu_complexity_hand_computed():
    b = complexity_relu(2, 3, [4, 4], 0.5, 0.1, 0.01, 3.0)
    bracket = 2 * 2 * (1 + math.log(2)) + 2 * (1 + math.log(1 / (0.5 * 0.1))) + math.log(10)
    assert b.rhs == pytest.approx(3.0 * bracket / 0.25, rel=1e-14)
    assert b.m_required == math.ceil(b.rhs)


def test_relu_complexity_equal_widths_drop_log():
    b = complexity_relu(3, 2, [3], 0.5, 0.1, 0.25, 1.0)
    bracket = 3 * 1 * 1 + 3 * (1 + math.log(1 / (0.5 * 0.5))) + math.log(10)
    assert b.rhs == pytest.approx(bracket / 0.25, rel=1e-14)


def test_complexity_linear_in_lambda():
    a = complexity_relu(2, 3, [3, 5], 0.3, 0.05, 0.02, 2.0, constant=0.7)
    b = complexity_relu(2, 3, [3, 5], 0.3, 0.05, 0.02, 4.0, constant=0.7)
    assert b.rhs == 2 * a.rhs
    assert abs(b.m_required - 2 * a.m_required) <= 1


def test_complexity_range_errors():
    with pytest.raises(InvalidInputError):
        complexity_relu(2, 3, [1, 3], 0.5, 0.1, 0.1, 1.0)
    with pytest.raises(InvalidInputError):
        complexity_relu(2, 3, [3, 3], 1.5, 0.1, 0.1, 1.0)
    with pytest.raises(InvalidInputError):
        complexity_piecewise(0, 2, 0.5, 0.1, 0.1, 1.0)
    with pytest.raises(InvalidInputError):
        complexity_net(3, 0.5, 0.0, 1.0)


def test_lipschitz_large_xi_limit():
    b = complexity_lipschitz(2, 1.0, 1.0, 1e15, 0.5, 0.1, 0.1, 1.0)
    assert b.rhs == pytest.approx(math.log(10) / 0.25, rel=1e-9)


def test_lipschitz_log_two_piece():
    # L R / (xi tau sqrt(mu)) = 1 makes the first bracket piece k log 2
    b = complexity_lipschitz(3, 1.0, 1.0, 2.0, 0.5, 0.1, 1.0, 1.0)
    assert b.rhs == pytest.approx((3 * math.log(2) + math.log(10)) / 0.25, rel=1e-14)
    assert b.q == pytest.approx(math.sqrt(0.5) * 2.0)


def test_lipschitz_monotone_in_xi():
    ms = [complexity_lipschitz(2, 3.0, 2.0, xi, 0.4, 0.1, 0.05, 2.0).m_required
          for xi in (0.01, 0.1, 1.0, 10.0)]
    assert ms == sorted(ms, reverse=True)


def test_piecewise_and_net_hand_computed():
    b = complexity_piecewise(7, 2, 0.25, 0.1, 0.04, 2.0)
    bracket = math.log(7) + 2 * math.log(1 + 1 / (0.25 * 0.2)) + math.log(10)
    assert b.rhs == pytest.approx(2.0 * bracket / 0.0625, rel=1e-14)
    n = complexity_net(50, 0.5, 0.1, 3.0, constant=2.0)
    assert n.rhs == pytest.approx(3.0 * math.log(1000) / 0.25)
    assert n.m_required == math.ceil(2.0 * n.rhs)


def test_net_bounds():
    assert piecewise_net_bound(2, 1, 1.0, 1.0) == pytest.approx(4 * 9)
    assert lipschitz_net_bound(1.0, 1.0, 1.0, 1.0, 1.0, 1) == pytest.approx(81)


def test_one_dim_class_net_has_at_most_two_points():
    b = np.random.default_rng(0).standard_normal((8, 1))
    G = LinearGenerator({"c": b})
    net = build_secant_net(SecantClass(G, "c"), 0.1, uniform_law(8), pool=500, probes=2000)
    assert net.size <= 2 and net.certified


def test_large_eta_gives_single_point():
    G = linear_tightness_family(16, 2, ["a"])
    law = uniform_law(16)
    net = build_secant_net(SecantClass(G, "a"), 1e6, law, pool=200, probes=500)
    assert net.size == 1 and net.certified


def test_lipschitz_net_within_formula():
    G = linear_tightness_family(16, 1, ["a"], shared_width=1)
    law = sampling_law(christoffel_linear(G, "a", "a"))
    xi, eta = 0.5, 2.0
    net = build_secant_net(SecantClass(G, "a", xi=xi), eta, law, pool=1000, probes=2000)
    L = lipschitz_bound(G, "a")
    assert net.size <= lipschitz_net_bound(L, G.radius, xi, eta, law.min_prob, 1)


def test_net_extension_statuses():
    G = linear_tightness_family(16, 2, ["a"])
    law = sampling_law(christoffel_linear(G, "a", "a"))
    secants = SecantClass(G, "a")
    net = build_secant_net(secants, 0.5, law, pool=500, probes=1000)
    full = full_plan(16, law=uniform_law(16))
    assert net_distortion(net, full) < 1e-10
    res = net_extension_check(net, full, 0.1, secants, probes=2000)
    assert res.ok and res.status == "checked"
    tiny = draw_plan(law, 1, seed=0)
    eps = 1e-6
    if net_distortion(net, tiny) > eps:
        bad = net_extension_check(net, tiny, eps)
        assert bad.status == "prerequisite_failed" and not bad.ok


def test_concentration_unbiased_and_monotone():
    G = linear_tightness_family(32, 2, ["a"])
    law = sampling_law(christoffel_linear(G, "a", "a"))
    H = SecantClass(G, "a").sample(np.random.default_rng(1), 3)
    table = concentration_experiment(H, law, [4, 16, 64], 0.5, 10_000, seed=2)
    assert table.unbiased and table.monotone
    assert len(table.rows) == 9


def test_concentration_flat_spectrum_never_fails():
    h = np.zeros(16)
    h[0] = 1.0
    table = concentration_experiment([h], uniform_law(16), [1, 4, 16], 0.01, 500)
    assert all(r["failure_rate"] == 0.0 for r in table.rows)


def test_pass_rate_and_calibration():
    G = linear_tightness_family(32, 2, ["a"])
    d = enumerate_cones(G, "a")
    law = sampling_law(christoffel_linear(G, "a", "a"))
    assert nondegeneracy_pass_rate(d, law, 32, 0.5, draws=20) >= \
        nondegeneracy_pass_rate(d, law, 4, 0.5, draws=20)

    def budget(c):
        return complexity_piecewise(1, 2, 0.5, 0.1, law.min_prob, 1.0, constant=c)

    const, b, rate, history = calibrate_constant(d, law, budget, 0.5, 0.1, draws=30)
    assert const is not None and rate >= 0.9
    assert history[-1][0] == const


def test_laws_must_have_full_support():
    with pytest.raises(InvalidInputError):
        SamplingLaw(np.array([1.0, 0.0]))
