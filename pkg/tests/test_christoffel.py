import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from promptcs.christoffel import (ChristoffelEstimate, SamplingLaw, christoffel_exact_subspace,
                                  christoffel_linear, christoffel_monte_carlo,
                                  compatibility_factor, lambda_grid, read_grid_csv,
                                  read_values_csv, sampling_law, sampling_seminorm,
                                  subspace_christoffel, uniform_law, write_grid_csv,
                                  write_values_csv)
from promptcs.errors import DegenerateClassError, InvalidInputError
from promptcs.generators import (LinearGenerator, ReluGenerator, enumerate_cones,
                                 linear_tightness_family, random_relu)
from promptcs.signals import Signal


def energy_loop(h, channels=1):
    """Per-frequency block energy via an explicit DFT sum."""
    n = h.size // channels
    out = np.zeros(n)
    for ch in range(channels):
        x = h[ch * n:(ch + 1) * n]
        for i in range(n):
            coef = sum(x[j] * np.exp(-2j * np.pi * i * j / n) for j in range(n)) / math.sqrt(n)
            out[i] += abs(coef) ** 2
    return out


def test_single_vector_class_after_one_trial():
    b = np.random.default_rng(0).standard_normal((12, 1))
    G = LinearGenerator({"c": b})
    est = christoffel_monte_carlo(G, "c", "c", trials=1, seed=3)
    np.testing.assert_allclose(est.values, energy_loop(b[:, 0]) / np.sum(b ** 2), atol=1e-12)


def test_constant_generator_is_degenerate():
    G = ReluGenerator({"c": [np.zeros((2, 2)), np.zeros((5, 2))]})
    with pytest.raises(DegenerateClassError):
        christoffel_monte_carlo(G, "c", "c", trials=50)


def test_monte_carlo_prefix_property():
    G = linear_tightness_family(16, 2, ["a"])
    short = christoffel_monte_carlo(G, "a", "a", 3000, seed=4, batch=1000)
    long = christoffel_monte_carlo(G, "a", "a", 5000, seed=4, batch=1000)
    assert np.all(long.values >= short.values)
    again = christoffel_monte_carlo(G, "a", "a", 3000, seed=4, batch=1000)
    assert np.array_equal(short.values, again.values)


def test_monte_carlo_below_exact_and_close_for_one_piece():
    G = linear_tightness_family(32, 2, ["a"], seed=2)
    exact = christoffel_linear(G, "a", "a")
    mc = christoffel_monte_carlo(G, "a", "a", 100_000, seed=1)
    assert np.all(mc.values <= exact.values * (1 + 1e-10))
    i = int(np.argmax(exact.values))
    assert mc.values[i] >= 0.95 * exact.values[i]


@pytest.mark.parametrize("seed", range(3))
def test_monte_carlo_below_relu_upper(seed):
    G = random_relu(2, (3,), 16, seed=seed)
    d = enumerate_cones(G, "c")
    interval = christoffel_exact_subspace(d, d, lower_samples=64, seed=seed)
    mc = christoffel_monte_carlo(G, "c", "c", 100_000, seed=seed)
    assert np.all(mc.values <= interval.upper * (1 + 1e-10))
    assert np.all(interval.lower <= interval.upper)


def test_delta_line_has_flat_christoffel():
    Q = np.zeros((10, 1))
    Q[0, 0] = 1.0
    np.testing.assert_allclose(subspace_christoffel(Q, 1), np.full(10, 0.1), atol=1e-15)


def test_full_space_complex_field_gives_one():
    K = subspace_christoffel(np.eye(8), 1, field="complex")
    np.testing.assert_allclose(K, np.ones(8), atol=1e-12)
    assert K.sum() == pytest.approx(8.0)


def test_full_space_real_field():
    # real signals only: a single non-self-conjugate coefficient carries at most half the energy
    K = subspace_christoffel(np.eye(8), 1, field="real")
    expected = np.full(8, 0.5)
    expected[[0, 4]] = 1.0
    np.testing.assert_allclose(K, expected, atol=1e-12)


def test_two_dim_class_matches_angular_grid():
    rng = np.random.default_rng(5)
    B = rng.standard_normal((8, 2))
    G = LinearGenerator({"c": B})
    upper = christoffel_linear(G, "c", "c").values
    Q, _ = np.linalg.qr(B)
    theta = np.linspace(0, np.pi, 10_000, endpoint=False)
    H = np.outer(np.cos(theta), Q[:, 0]) + np.outer(np.sin(theta), Q[:, 1])
    F = np.fft.fft(H, axis=1, norm="ortho")
    grid_max = np.max(np.abs(F) ** 2, axis=0)
    np.testing.assert_allclose(upper, grid_max, atol=1e-6)
    assert np.all(grid_max <= upper + 1e-12)


def test_exact_subspace_rejects_empty():
    d = enumerate_cones(linear_tightness_family(8, 1, ["a"], shared_width=1), "a")
    d.pieces = []
    with pytest.raises(InvalidInputError):
        christoffel_exact_subspace(d, d)


def test_cross_class_estimate_uses_both_ranges():
    G = linear_tightness_family(32, 2, ["a", "b"], theta=1.0)
    cross = christoffel_linear(G, "a", "b")
    selfa = christoffel_linear(G, "a", "a")
    assert np.all(cross.values >= selfa.values - 1e-12)


def test_estimate_validation():
    with pytest.raises(InvalidInputError):
        ChristoffelEstimate(np.zeros(4), 1, "monte_carlo")
    with pytest.raises(InvalidInputError):
        ChristoffelEstimate(np.ones(4), 1, "interval")
    with pytest.raises(InvalidInputError):
        ChristoffelEstimate(np.ones(4), 1, "interval", lower=np.full(4, 2.0), upper=np.ones(4))


def test_flat_k_gives_uniform_law():
    law = sampling_law(np.full(6, 0.3))
    np.testing.assert_allclose(law.probs, np.full(6, 1 / 6))
    assert law.min_prob == pytest.approx(1 / 6)


def test_floor_restores_full_support():
    law = sampling_law(np.array([1.0, 0.0, 0.0, 0.0]), floor=1e-12)
    Z = 1 + 3e-12
    np.testing.assert_allclose(law.probs, np.array([1, 1e-12, 1e-12, 1e-12]) / Z, rtol=1e-12)
    assert law.floor_applied and np.all(law.probs > 0)
    assert abs(law.probs.sum() - 1) <= 1e-12


def test_law_deterministic_for_fixed_seed():
    G = linear_tightness_family(16, 2, ["a"])
    a = sampling_law(christoffel_monte_carlo(G, "a", "a", 2000, seed=9))
    b = sampling_law(christoffel_monte_carlo(G, "a", "a", 2000, seed=9))
    assert np.array_equal(a.probs, b.probs)


def test_all_zero_k_is_degenerate():
    with pytest.raises(DegenerateClassError):
        sampling_law(np.zeros(5))


def test_law_validation():
    with pytest.raises(InvalidInputError):
        SamplingLaw(np.array([0.5, 0.5, 0.0]))
    with pytest.raises(InvalidInputError):
        SamplingLaw(np.array([0.5, 0.6]))


def test_seminorm_uniform_law():
    rng = np.random.default_rng(0)
    g = Signal(rng.standard_normal(16))
    expected = 16 * np.max(energy_loop(g.data))
    assert sampling_seminorm(g, uniform_law(16)) ** 2 == pytest.approx(expected, rel=1e-12)
    assert sampling_seminorm(Signal(np.zeros(16)), uniform_law(16)) == 0.0


def test_seminorm_matches_loop():
    rng = np.random.default_rng(1)
    g = Signal(rng.standard_normal(2 * 6), channels=2)
    p = rng.uniform(0.1, 1, 6)
    law = SamplingLaw(p / p.sum())
    E = energy_loop(g.data, 2)
    best = 0.0
    for i in range(6):
        best = max(best, E[i] / law.probs[i])
    assert sampling_seminorm(g, law) == pytest.approx(math.sqrt(best), rel=1e-12)


def test_remark_reduction_without_floor():
    G = LinearGenerator({"a": np.random.default_rng(3).standard_normal((32, 3))})
    K = christoffel_linear(G, "a", "a")
    assert K.values.min() > 1e-6
    lam = compatibility_factor(K, sampling_law(K, floor=0.0))
    assert lam.value == pytest.approx(K.kappa, rel=1e-12)


def test_uniform_k_and_law():
    rep = compatibility_factor(np.full(4, 0.25), uniform_law(4))
    assert rep.value == pytest.approx(1.0) and rep.argmax_index == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2 ** 32 - 1))
def test_lambda_at_least_kappa_for_any_law(n, seed):
    rng = np.random.default_rng(seed)
    K = rng.uniform(0, 1, n)
    p = rng.uniform(1e-3, 1, n)
    lam = compatibility_factor(K, SamplingLaw(p / p.sum()))
    assert lam.value >= K.sum() * (1 - 1e-12)


def test_lambda_grid_diagonal_minimal():
    G = linear_tightness_family(32, 2, ["a", "b", "c"], theta=0.7, seed=1)
    est = {c: christoffel_linear(G, c, c) for c in "abc"}
    laws = {c: sampling_law(est[c]) for c in "abc"}
    rep = lambda_grid(est, laws)
    for r in range(3):
        assert np.argmin(rep.table[:, r]) == r
        assert rep.table[r, r] == pytest.approx(est["abc"[r]].kappa, rel=1e-9)


def test_identical_prompts_give_identical_rows():
    G = linear_tightness_family(32, 2, ["a", "b"], seed=1)
    twin = LinearGenerator({"a": G.basis("a"), "b": G.basis("b"), "a2": G.basis("a")})
    est = {c: christoffel_linear(twin, c, c) for c in twin.conditions}
    laws = {c: sampling_law(est[c]) for c in twin.conditions}
    t = lambda_grid(est, laws, ["a", "b", "a2"]).table
    np.testing.assert_array_equal(t[0], t[2])
    np.testing.assert_array_equal(t[:, 0], t[:, 2])


def test_single_prompt_grid_is_kappa():
    G = linear_tightness_family(16, 2, ["a"])
    est = {"a": christoffel_linear(G, "a", "a")}
    rep = lambda_grid(est, {"a": sampling_law(est["a"], floor=0.0)})
    assert rep.table.shape == (1, 1)
    assert rep.table[0, 0] == pytest.approx(est["a"].kappa, rel=1e-12)


def test_csv_round_trips_reproduce_grid(tmp_path):
    G = linear_tightness_family(32, 2, ["a", "b"], seed=4)
    est = {c: christoffel_monte_carlo(G, c, c, 500, seed=1) for c in "ab"}
    laws = {c: sampling_law(est[c]) for c in "ab"}
    rep = lambda_grid(est, laws)
    for c in "ab":
        write_values_csv(tmp_path / f"K_{c}.csv", est[c].values, "K")
        write_values_csv(tmp_path / f"mu_{c}.csv", laws[c].probs, "mu")
    write_grid_csv(tmp_path / "lambda.csv", rep)
    labels, table = read_grid_csv(tmp_path / "lambda.csv")
    assert labels == ["a", "b"]
    K = {c: read_values_csv(tmp_path / f"K_{c}.csv") for c in "ab"}
    mu = {c: SamplingLaw(read_values_csv(tmp_path / f"mu_{c}.csv")) for c in "ab"}
    again = np.array([[compatibility_factor(K[r], mu[s]).value for r in "ab"] for s in "ab"])
    assert np.array_equal(again, table)
    assert np.array_equal(table, rep.table)


def test_estimate_json_round_trip():
    est = ChristoffelEstimate(np.array([0.2, 0.5]), 3, "interval", lower=np.array([0.1, 0.5]),
                              upper=np.array([0.2, 0.5]))
    back = ChristoffelEstimate.from_json(est.to_json())
    assert np.array_equal(back.values, est.values) and np.array_equal(back.lower, est.lower)
