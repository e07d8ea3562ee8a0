"""
How many samples does the bound ask for?
========================================

The piecewise-linear bound hides an absolute constant.  Here it is calibrated
on a linear (single-cone) class: find the smallest constant whose budget gets
at least 90% of random plans certified, then compare with the tau^-2 growth
of the budget.
"""

import numpy as np

from promptcs.christoffel import christoffel_linear, compatibility_factor, sampling_law
from promptcs.generators import LinearGenerator, enumerate_cones
from promptcs.verification import SecantClass, calibrate_constant, complexity_piecewise, concentration_experiment

G = LinearGenerator({"c": np.random.default_rng(0).standard_normal((32, 2))})
K = christoffel_linear(G, "c", "c")
law = sampling_law(K)
lam = compatibility_factor(K, law).value
decomp = enumerate_cones(G, "c")

for tau in (0.5, 0.25):
    const, budget, rate, history = calibrate_constant(
        decomp, law, lambda c: complexity_piecewise(1, 2, tau, 0.1, law.min_prob, lam, c),
        tau, delta=0.1, draws=200)
    print(f"tau={tau}: constant {const} gives m={budget.m_required} with pass rate {rate:.2f}")
    print("   tried (constant, m, rate):", history)

# one fixed secant: ||A h||^2 is unbiased and concentrates as m grows
h = SecantClass(G, "c").sample(np.random.default_rng(1), 1)
for row in concentration_experiment(h, law, [4, 16, 64], eps=0.5, trials=5000).rows:
    print(f"m={row['m']:2d} mean/||h||^2={row['mean'] / row['norm2']:.3f} "
          f"P(|dev| > 0.5)={row['failure_rate']:.4f}")
