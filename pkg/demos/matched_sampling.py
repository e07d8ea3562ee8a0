"""
Sampling for the prompt you will reconstruct with
=================================================

Draw a few Fourier coefficients either uniformly or from the prompt's
Christoffel law, then recover by latent least squares.  The zero-filled
inverse transform is printed alongside as the classical baseline.
"""

import numpy as np

from promptcs.christoffel import christoffel_linear, sampling_law, uniform_law
from promptcs.generators import linear_tightness_family
from promptcs.measurement import WOR_DC, apply, draw_plan, zero_filled
from promptcs.recovery import RecoveryConfig, recover
from promptcs.signals import relative_error

G = linear_tightness_family(n=64, k=3, prompts=["a", "b"], theta=0.7, seed=2)
law = sampling_law(christoffel_linear(G, "a", "a"))
cfg = RecoveryConfig(restarts=2, seed=0)
f = G.generate(np.array([0.4, -0.2, 0.3]), "a")

for m in (4, 8, 16):
    for name, mu in (("matched", law), ("uniform", uniform_law(64))):
        errs, base = [], []
        for trial in range(10):
            plan = draw_plan(mu, m, WOR_DC, seed=trial)
            y = apply(plan, f)
            errs.append(relative_error(f, recover(G, "a", plan, y, cfg).f_hat))
            base.append(relative_error(f, zero_filled(plan, y)))
        print(f"m={m:2d} {name:8s} latent fit {np.mean(errs):.3f}   zero-filled {np.mean(base):.3f}")
