"""Christoffel functions, sampling laws and the prompt compatibility factor.

For a set of secants ``S`` the Christoffel function at frequency ``i`` is the
largest fraction of a secant's energy that can sit in the ``i``-th Fourier
block.  Estimates come in three modes:

``monte_carlo``
    max over random generator secants; always a lower bound.
``exact_subspace``
    exact values on classes that are unions of subspaces.
``interval``
    subspace-relaxation upper bound together with a sampled lower bound.
"""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as rng_mod
from .errors import DegenerateClassError, InvalidInputError
from .signals import block_energy, fft_blocks

MODES = ("monte_carlo", "exact_subspace", "interval")
MC_BATCH = 2048


@dataclass
class ChristoffelEstimate:
    values: np.ndarray
    trials: int
    mode: str
    lower: np.ndarray = None
    upper: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.mode not in MODES:
            raise InvalidInputError(f"unknown mode {self.mode!r}")
        if np.any(self.values < 0) or not np.any(self.values > 0):
            raise InvalidInputError("Christoffel values must be >= 0 with one positive entry")
        if self.mode == "interval":
            if self.lower is None or self.upper is None:
                raise InvalidInputError("interval mode needs lower and upper")
            if np.any(self.lower > self.upper):
                raise InvalidInputError("lower bound exceeds upper bound")

    @property
    def n(self):
        return self.values.size

    @property
    def kappa(self):
        return float(self.values.sum())

    def to_json(self):
        out = {"mode": self.mode, "trials": self.trials, "values": self.values.tolist()}
        if self.mode == "interval":
            out["lower"] = np.asarray(self.lower).tolist()
            out["upper"] = np.asarray(self.upper).tolist()
        return out

    @classmethod
    def from_json(cls, obj):
        return cls(np.array(obj["values"]), int(obj["trials"]), obj["mode"],
                   None if "lower" not in obj else np.array(obj["lower"]),
                   None if "upper" not in obj else np.array(obj["upper"]))


@dataclass
class SamplingLaw:
    probs: np.ndarray
    kappa: float = math.nan
    floor_applied: bool = False

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if np.any(~np.isfinite(self.probs)) or np.any(self.probs <= 0):
            raise InvalidInputError("sampling law must have full support")
        if abs(self.probs.sum() - 1.0) > 1e-12:
            raise InvalidInputError(f"probabilities sum to {self.probs.sum():.15g}, not 1")

    @property
    def n(self):
        return self.probs.size

    @property
    def min_prob(self):
        return float(self.probs.min())

    def to_json(self):
        return {"probs": self.probs.tolist(), "kappa": self.kappa,
                "min_prob": self.min_prob, "floor_applied": self.floor_applied}

    @classmethod
    def from_json(cls, obj):
        return cls(np.array(obj["probs"]), float(obj.get("kappa", math.nan)),
                   bool(obj.get("floor_applied", False)))


@dataclass
class CompatibilityReport:
    value: float
    argmax_index: int
    table: np.ndarray = None
    labels: list = field(default_factory=list)


def default_latent_law(rng, count, k, radius):
    """Standard normal latents, rows outside the ball redrawn until inside."""
    Z = rng.standard_normal((count, k))
    bad = np.linalg.norm(Z, axis=1) > radius
    while np.any(bad):
        Z[bad] = rng.standard_normal((int(bad.sum()), k))
        bad = np.linalg.norm(Z, axis=1) > radius
    return Z


def christoffel_monte_carlo(G, c1, c2, trials, seed=0, latent_law=None, batch=MC_BATCH):
    """Monte Carlo Christoffel estimate over the secants ``G(z1, c1) - G(z2, c2)``.

    Trials are processed in fixed-size batches, batch ``b`` drawing from its own
    stream ``(seed, b)``, so the first ``t`` trials never depend on the total.
    Zero secants are skipped.
    """
    if trials < 1:
        raise InvalidInputError("trials must be >= 1")
    law = latent_law or default_latent_law
    k, R = G.latent_dim, G.radius
    K = np.zeros(G.n)
    hits = 0
    done = 0
    b = 0
    while done < trials:
        size = min(batch, trials - done)
        rng = rng_mod.stream(seed, "christoffel", b)
        Z1 = law(rng, batch, k, R)[:size]
        Z2 = law(rng, batch, k, R)[:size]
        H = G.forward_batch(Z1, c1) - G.forward_batch(Z2, c2)
        norms2 = np.sum(H * H, axis=1)
        keep = norms2 > 0
        if np.any(keep):
            ratios = block_energy(H[keep], G.channels) / norms2[keep, None]
            np.maximum(K, ratios.max(axis=0), out=K)
            hits += int(keep.sum())
        done += size
        b += 1
    if hits == 0:
        raise DegenerateClassError(f"all {trials} sampled secants were zero")
    return ChristoffelEstimate(K, trials, "monte_carlo")


def _orthonormal_basis(M, rtol=1e-10):
    if M.shape[1] == 0:
        return M
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return U[:, :0]
    return U[:, s > rtol * s[0]]


def subspace_christoffel(Q, channels, field="real"):
    """Exact Christoffel function of the subspace spanned by orthonormal ``Q``.

    With ``field="real"`` the supremum runs over real vectors of the span
    (the object space is real); ``field="complex"`` takes complex
    combinations, which gives ``||projection of the i-th functional||^2``.
    """
    n = Q.shape[0] // channels
    r = Q.shape[1]
    if r == 0:
        return np.zeros(n)
    FQ = fft_blocks(Q.T, channels)  # (r, C, n)
    M = np.transpose(FQ, (2, 1, 0))  # (n, C, r)
    if field == "complex":
        return np.linalg.svd(M, compute_uv=False)[:, 0] ** 2
    if field != "real":
        raise InvalidInputError(f"unknown field {field!r}")
    gram = np.einsum("ncr,ncs->nrs", M.conj(), M).real
    return np.linalg.eigvalsh(gram)[:, -1]


def pair_bases(decomp1, decomp2, symmetric=None):
    """Orthonormal bases of ``span(range A_a, range A_b)`` for every cone pair."""
    if symmetric is None:
        symmetric = decomp1 is decomp2
    out = []
    for a, pa in enumerate(decomp1.pieces):
        start = a if symmetric else 0
        for b in range(start, len(decomp2.pieces)):
            pb = decomp2.pieces[b]
            out.append(((a, b), _orthonormal_basis(np.hstack([pa.matrix, pb.matrix]))))
    return out


def christoffel_exact_subspace(decomp1, decomp2, channels=1, lower_samples=256, seed=0,
                               field="real"):
    """Interval estimate for the cross-difference class of two cone decompositions.

    ``upper`` maximizes the subspace Christoffel function over all cone pairs
    (sound because each cone difference lies in the span of its two ranges).
    ``lower`` is the maximum over secants built from latents drawn strictly
    inside each cone pair.  When every piece is a full subspace the two
    coincide.
    """
    if not decomp1.pieces or not decomp2.pieces:
        raise InvalidInputError("empty cone decomposition")
    upper = None
    for _, Q in pair_bases(decomp1, decomp2):
        vals = subspace_christoffel(Q, channels, field)
        upper = vals if upper is None else np.maximum(upper, vals)
    exact = decomp1.all_full_space and decomp2.all_full_space
    if exact:
        lower = upper.copy()
    else:
        lower = np.zeros_like(upper)
        rng = rng_mod.stream(seed, "christoffel_lower")
        for a, pa in enumerate(decomp1.pieces):
            for b, pb in enumerate(decomp2.pieces):
                Z1 = decomp1.sample(a, lower_samples, rng)
                Z2 = decomp2.sample(b, lower_samples, rng)
                H = Z1 @ pa.matrix.T - Z2 @ pb.matrix.T
                norms2 = np.sum(H * H, axis=1)
                keep = norms2 > 1e-300
                if np.any(keep):
                    ratios = block_energy(H[keep], channels) / norms2[keep, None]
                    np.maximum(lower, ratios.max(axis=0), out=lower)
        # identical up to rounding when the sup is attained on the subspace
        lower = np.minimum(lower, upper)
    return ChristoffelEstimate(upper.copy(), 0, "interval", lower=lower, upper=upper)


def christoffel_linear(G, c1, c2, field="real"):
    """Exact Christoffel function of ``F_c1 - F_c2`` for a linear generator."""
    from .generators import enumerate_cones

    est = christoffel_exact_subspace(enumerate_cones(G, c1), enumerate_cones(G, c2),
                                     G.channels, field=field)
    return ChristoffelEstimate(est.values, 0, "exact_subspace")


def sampling_law(K, floor=1e-12):
    """Christoffel sampling law ``K / sum(K)`` with a relative full-support floor.

    Entries below ``floor * max(K)`` are raised to that level before
    normalizing; ``kappa`` records ``sum(K)`` before flooring.
    """
    values = np.asarray(K.values if isinstance(K, ChristoffelEstimate) else K, dtype=float)
    top = values.max() if values.size else 0.0
    if not top > 0:
        raise DegenerateClassError("Christoffel values are all zero")
    level = floor * top
    raised = values < level
    probs = np.where(raised, level, values)
    probs = probs / probs.sum()
    return SamplingLaw(probs, float(values.sum()), bool(np.any(raised)))


def uniform_law(n):
    return SamplingLaw(np.full(n, 1.0 / n), float(n), False)


def sampling_seminorm(g, law):
    """``max_i |P_i F g|^2 / mu(i)`` square-rooted, with block energy per frequency."""
    data = g.data if hasattr(g, "data") else np.asarray(g)
    channels = g.channels if hasattr(g, "channels") else 1
    energy = block_energy(data, channels)
    if energy.size != law.n:
        raise InvalidInputError(f"signal has {energy.size} frequencies, law has {law.n}")
    return float(math.sqrt(np.max(energy / law.probs)))


def compatibility_factor(K12, law3):
    """``max_i K12(i) / mu3(i)``, ties resolved to the lowest index."""
    values = np.asarray(K12.values if isinstance(K12, ChristoffelEstimate) else K12, dtype=float)
    if values.size != law3.n:
        raise InvalidInputError("Christoffel estimate and law use different index sets")
    ratios = values / law3.probs
    idx = int(np.argmax(ratios))
    return CompatibilityReport(float(ratios[idx]), idx)


def lambda_grid(estimates, laws, labels=None):
    """``table[s, r] = Lambda(c_r, c_r, c_s)``: rows sampling, columns recovery."""
    labels = list(labels if labels is not None else estimates)
    table = np.empty((len(labels), len(labels)))
    for si, s in enumerate(labels):
        for ri, r in enumerate(labels):
            table[si, ri] = compatibility_factor(estimates[r], laws[s]).value
    diag = np.diag(table)
    idx = int(np.argmin(diag))
    return CompatibilityReport(float(diag[idx]), idx, table, labels)


# ---------------------------------------------------------------------------
# serialization


def write_values_csv(path, values, header="value"):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", header])
        for i, v in enumerate(np.asarray(values, dtype=float)):
            writer.writerow([i, repr(float(v))])


def read_values_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = [(int(i), float(v)) for i, v in reader]
    rows.sort()
    if [i for i, _ in rows] != list(range(len(rows))):
        raise InvalidInputError(f"{path}: indices are not 0..n-1")
    return np.array([v for _, v in rows])


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)


def write_grid_csv(path, report):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sampling\\recovery"] + [str(l) for l in report.labels])
        for label, row in zip(report.labels, report.table):
            writer.writerow([str(label)] + [repr(float(v)) for v in row])


def read_grid_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    labels = rows[0][1:]
    table = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return labels, table
