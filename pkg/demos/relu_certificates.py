"""
Certifying a tiny ReLU generator
================================

A bias-free ReLU network is linear on each activation cone.  Enumerating the
cones turns the secant class into a finite union of subspaces, which makes the
nondegeneracy check exact: an eigenvalue problem per pair of cones.  A passing
check yields S-REC with gamma = sqrt(1 - tau_hat), which we then probe on
random pairs.
"""

import math

from promptcs.christoffel import christoffel_exact_subspace, sampling_law
from promptcs.generators import cone_count_bound, enumerate_cones, random_relu
from promptcs.measurement import draw_plan
from promptcs.verification import check_nondegeneracy, check_srec, srec_pair_check

G = random_relu(k=2, hidden=(3, 3), ambient=32, seed=4)
decomp = enumerate_cones(G, "c")
print(f"{decomp.count} cones out of {decomp.total_patterns} sign patterns; "
      f"log N = {math.log(decomp.count):.2f} <= {cone_count_bound(2, (3, 3)):.2f}")

# the exact-subspace interval bounds K above; its upper end is a safe law
interval = christoffel_exact_subspace(decomp, decomp, lower_samples=32)
law = sampling_law(interval)

for m in (8, 16, 32, 64):
    plan = draw_plan(law, m, seed=1)
    rep = check_nondegeneracy(decomp, plan, tau=0.8)
    print(f"m={m:2d} tau_hat={rep.tau_hat:.3f} certified={rep.passed}")
    if rep.passed:
        srec = check_srec(rep)
        bad, worst = srec_pair_check(G, "c", plan, srec.gamma, pairs=5000)
        print(f"  gamma={srec.gamma:.3f}, violations on 5000 random pairs: {bad}")
