"""Executable checks for nondegeneracy, S-REC, covering nets and sample complexity.

Exact certificates work on cone decompositions: every secant of a
piecewise-linear class lies in ``span(range A_a, range A_b)`` for some cone
pair, so the extreme eigenvalues of the measurement Gram matrix on those
spans bound the distortion over the whole class.  Sampled checks give the
complementary lower estimates.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as rng_mod
from .christoffel import default_latent_law, pair_bases
from .errors import InvalidInputError, ModeConflictError, NoCertificateError
from .measurement import apply_array, draw_plan
from .signals import fft_blocks

log = logging.getLogger(__name__)

REL_SLACK = 1e-12


@dataclass
class NondegeneracyReport:
    tau_hat: float
    method: str
    tau: float
    passed: bool
    pair_extremes: list = field(default_factory=list)

    def to_json(self):
        return {"tau_hat": self.tau_hat, "method": self.method, "tau": self.tau,
                "passed": self.passed,
                "pair_extremes": [{"pair": list(p), "min": lo, "max": hi}
                                  for p, lo, hi in self.pair_extremes]}


@dataclass
class SrecReport:
    gamma: float
    q: float
    tau_hat: float
    witnesses: tuple = None

    def to_json(self):
        return {"gamma": self.gamma, "q": self.q, "tau_hat": self.tau_hat}


@dataclass
class ComplexityBudget:
    regime: str
    inputs: dict
    constant: float
    rhs: float
    m_required: int
    q: float = 0.0

    def to_json(self):
        return {"regime": self.regime, "inputs": self.inputs, "constant": self.constant,
                "rhs": self.rhs, "m_required": self.m_required, "q": self.q}


def _measure_columns(plan, Q):
    """``A_Omega Q`` as an ``(m*C, r)`` complex matrix."""
    return apply_array(plan, Q.T).reshape(Q.shape[1], -1).T


def _require_weighted(plan):
    if plan.mode != "weighted":
        raise ModeConflictError("nondegeneracy is defined for the weighted operator")


def secant_rayleigh(plan, H):
    """``||A h||^2 / ||h||^2`` for each row of ``H``."""
    AH = apply_array(plan, H)
    num = np.sum(np.abs(AH) ** 2, axis=(-1, -2))
    return num / np.sum(H * H, axis=1)


def check_nondegeneracy(decomp, plan, tau, method="exact_spectral", probes=100_000, seed=0):
    """Distortion of ``A_Omega`` on the self-difference class of ``decomp``.

    ``exact_spectral`` takes the extreme eigenvalues of the real Gram matrix
    ``Re(Q^H A^H A Q)`` over the span of every cone pair, which certifies an
    upper bound on the true distortion.  ``sampled`` evaluates ``probes``
    random secants drawn inside the cones, a lower estimate.
    """
    _require_weighted(plan)
    if not 0 < tau:
        raise InvalidInputError("tau must be positive")
    extremes = []
    if method == "exact_spectral":
        for pair, Q in pair_bases(decomp, decomp):
            if Q.shape[1] == 0:
                continue
            AQ = _measure_columns(plan, Q)
            eig = np.linalg.eigvalsh((AQ.conj().T @ AQ).real)
            extremes.append((pair, float(eig[0]), float(eig[-1])))
    elif method == "sampled":
        rng = rng_mod.stream(seed, "nondegeneracy_probe")
        pieces = decomp.pieces
        batch = 4096
        lo, hi = math.inf, -math.inf
        done = 0
        while done < probes:
            size = min(batch, probes - done)
            a = rng.integers(len(pieces), size=size)
            b = rng.integers(len(pieces), size=size)
            H = np.empty((size, pieces[0].matrix.shape[0]))
            for j in range(size):
                z1 = decomp.sample(a[j], 1, rng)[0]
                z2 = decomp.sample(b[j], 1, rng)[0]
                H[j] = pieces[a[j]].matrix @ z1 - pieces[b[j]].matrix @ z2
            keep = np.sum(H * H, axis=1) > 0
            ratios = secant_rayleigh(plan, H[keep])
            if ratios.size:
                lo, hi = min(lo, ratios.min()), max(hi, ratios.max())
            done += size
        extremes.append(((-1, -1), float(lo), float(hi)))
    else:
        raise InvalidInputError(f"unknown method {method!r}")
    if not extremes:
        raise InvalidInputError("class has no nonzero secants")
    tau_hat = max(max(abs(1 - lo), abs(hi - 1)) for _, lo, hi in extremes)
    return NondegeneracyReport(float(tau_hat), method, float(tau),
                               bool(tau_hat <= tau and tau_hat < 1), extremes)


def check_srec(report):
    """S-REC parameters implied by a nondegeneracy report: ``sqrt(1 - tau_hat)``, ``q = 0``."""
    if not report.tau_hat < 1:
        raise NoCertificateError(f"tau_hat = {report.tau_hat:.6g} >= 1 gives no S-REC certificate")
    return SrecReport(math.sqrt(1.0 - report.tau_hat), 0.0, report.tau_hat)


def srec_pair_check(G, c, plan, gamma, q=0.0, pairs=10_000, seed=0):
    """Count pairs with ``||A(f1 - f2)|| < gamma ||f1 - f2|| - q``.

    Returns ``(violations, worst_margin)`` where the margin is
    ``||A h|| - (gamma ||h|| - q)`` minimized over the probed pairs.
    """
    rng = rng_mod.stream(seed, "srec_pairs")
    Z1 = default_latent_law(rng, pairs, G.latent_dim, G.radius)
    Z2 = default_latent_law(rng, pairs, G.latent_dim, G.radius)
    H = G.forward_batch(Z1, c) - G.forward_batch(Z2, c)
    hn = np.linalg.norm(H, axis=1)
    an = np.sqrt(np.sum(np.abs(apply_array(plan, H)) ** 2, axis=(-1, -2)))
    margin = an - (gamma * hn - q)
    violations = int(np.sum(margin < -REL_SLACK * np.maximum(hn, 1.0)))
    return violations, float(margin.min())


# ---------------------------------------------------------------------------
# sample-complexity calculators


def _check_common(tau, delta, mu_min, Lambda, constant):
    if not 0 < tau < 1:
        raise InvalidInputError("tau must lie in (0, 1)")
    if not 0 < delta < 1:
        raise InvalidInputError("delta must lie in (0, 1)")
    if not 0 < mu_min <= 1:
        raise InvalidInputError("mu_min must lie in (0, 1]")
    if not Lambda > 0:
        raise InvalidInputError("Lambda must be positive")
    if not constant > 0:
        raise InvalidInputError("constant must be positive")


def _budget(regime, inputs, constant, rhs, q=0.0):
    return ComplexityBudget(regime, inputs, constant, rhs, max(1, math.ceil(constant * rhs)), q)


def complexity_relu(k, d, widths, tau, delta, mu_min, Lambda, constant=1.0):
    """Measurements sufficient for S-REC on a depth-``d`` bias-free ReLU class.

    ``widths`` are the hidden widths ``k_1 .. k_{d-1}``.
    """
    _check_common(tau, delta, mu_min, Lambda, constant)
    widths = [int(w) for w in widths]
    if d < 2 or k < 1 or len(widths) != d - 1 or any(w < k for w in widths):
        raise InvalidInputError("need d >= 2, k >= 1 and d-1 hidden widths each >= k")
    kbar = math.exp(sum(math.log(w) for w in widths) / (d - 1))
    bracket = (k * (d - 1) * (1 + math.log(kbar / k))
               + k * (1 + math.log(1 / (tau * math.sqrt(mu_min))))
               + math.log(1 / delta))
    inputs = dict(k=k, d=d, widths=widths, kbar=kbar, tau=tau, delta=delta,
                  mu_min=mu_min, Lambda=Lambda)
    return _budget("relu", inputs, constant, Lambda * bracket / tau ** 2)


def complexity_lipschitz(k, L, R, xi, tau, delta, mu_min, Lambda, constant=1.0):
    """Measurements sufficient for S-REC with slack ``q = sqrt(1 - tau) * xi``."""
    _check_common(tau, delta, mu_min, Lambda, constant)
    if k < 1 or not (L > 0 and R > 0 and xi > 0):
        raise InvalidInputError("need k >= 1 and positive L, R, xi")
    bracket = k * math.log1p(L * R / (xi * tau * math.sqrt(mu_min))) + math.log(1 / delta)
    inputs = dict(k=k, L=L, R=R, xi=xi, tau=tau, delta=delta, mu_min=mu_min, Lambda=Lambda)
    return _budget("lipschitz", inputs, constant, Lambda * bracket / tau ** 2,
                   q=math.sqrt(1 - tau) * xi)


def complexity_piecewise(N, k, tau, delta, mu_min, Lambda, constant=1.0):
    """Measurements sufficient for S-REC on an ``(N, k)``-piecewise-linear class."""
    _check_common(tau, delta, mu_min, Lambda, constant)
    if N < 1 or k < 1:
        raise InvalidInputError("need N >= 1 and k >= 1")
    bracket = (math.log(N) + k * math.log1p(1 / (tau * math.sqrt(mu_min)))
               + math.log(1 / delta))
    inputs = dict(N=N, k=k, tau=tau, delta=delta, mu_min=mu_min, Lambda=Lambda)
    return _budget("piecewise_linear", inputs, constant, Lambda * bracket / tau ** 2)


def complexity_net(net_size, tau, delta, Lambda, constant=1.0):
    """Measurements for nondegeneracy given an explicit ``eta <= tau/8`` net."""
    _check_common(tau, delta, 1.0, Lambda, constant)
    if net_size < 1:
        raise InvalidInputError("net size must be >= 1")
    rhs = Lambda * math.log(2 * net_size / delta) / tau ** 2
    return _budget("net_based", dict(net_size=net_size, tau=tau, delta=delta, Lambda=Lambda),
                   constant, rhs)


def piecewise_net_bound(N, k, eta, mu_min):
    return N ** 2 * (1 + 2 / (eta * math.sqrt(mu_min))) ** (2 * k)


def lipschitz_net_bound(L, R, xi, eta, mu_min, k):
    return (1 + 8 * L * R / (xi * eta * math.sqrt(mu_min))) ** (2 * k)


# ---------------------------------------------------------------------------
# secant nets in the sampling seminorm


class SecantClass:
    """Normalized secants ``G(z1, c1) - G(z2, c2)`` with ``||h|| >= xi``."""

    def __init__(self, G, c1, c2=None, xi=0.0):
        self.G, self.c1 = G, c1
        self.c2 = c1 if c2 is None else c2
        self.xi = float(xi)
        self.channels = G.channels

    def sample(self, rng, count):
        out = []
        have = 0
        while have < count:
            Z1 = default_latent_law(rng, count, self.G.latent_dim, self.G.radius)
            Z2 = default_latent_law(rng, count, self.G.latent_dim, self.G.radius)
            H = self.G.forward_batch(Z1, self.c1) - self.G.forward_batch(Z2, self.c2)
            nrm = np.linalg.norm(H, axis=1)
            keep = nrm > max(self.xi, 0.0) if self.xi > 0 else nrm > 0
            out.append(H[keep] / nrm[keep, None])
            have += int(keep.sum())
        return np.vstack(out)[:count]


@dataclass
class SecantNet:
    points: np.ndarray
    eta: float
    status: str
    max_probe_distance: float
    probes: int
    channels: int
    law_probs: np.ndarray

    @property
    def size(self):
        return self.points.shape[0]

    @property
    def certified(self):
        return self.status == "certified"


def _seminorm_rows(spectra_diff, inv_mu):
    energy = np.sum(np.abs(spectra_diff) ** 2, axis=-2)
    return np.sqrt(np.max(energy * inv_mu, axis=-1))


def _min_distance(probe_spec, net_spec, inv_mu, chunk=2048):
    out = np.full(probe_spec.shape[0], np.inf)
    for start in range(0, probe_spec.shape[0], chunk):
        block = probe_spec[start:start + chunk]
        best = out[start:start + chunk]
        for v in net_spec:
            np.minimum(best, _seminorm_rows(block - v, inv_mu), out=best)
    return out


def build_secant_net(secants, eta, law, pool=4000, probes=100_000, rounds=5, seed=0):
    """Greedy farthest-point ``eta``-net of a normalized secant set, seminorm metric.

    The net is grown on a pool of sampled secants until every pool point is
    within ``eta``; fresh probes then certify coverage.  Uncovered probes are
    added and the certification repeated up to ``rounds`` times, after which
    the status is ``coverage_unverified``.
    """
    if not eta > 0:
        raise InvalidInputError("eta must be positive")
    rng = rng_mod.stream(seed, "secant_net")
    C = secants.channels
    inv_mu = 1.0 / law.probs
    cand = secants.sample(rng, pool)
    cand_spec = fft_blocks(cand, C)
    chosen = [0]
    dist = _seminorm_rows(cand_spec - cand_spec[0], inv_mu)
    while dist.max() > eta:
        j = int(np.argmax(dist))
        chosen.append(j)
        np.minimum(dist, _seminorm_rows(cand_spec - cand_spec[j], inv_mu), out=dist)
    points = cand[chosen]
    spec = cand_spec[chosen]
    status = "coverage_unverified"
    worst = math.inf
    for _ in range(rounds):
        probe = secants.sample(rng, probes)
        probe_spec = fft_blocks(probe, C)
        d = _min_distance(probe_spec, spec, inv_mu)
        worst = float(d.max())
        if worst <= eta:
            status = "certified"
            break
        bad = np.flatnonzero(d > eta)
        extra_pts, extra_spec = [], []
        dist = d[bad]
        while dist.size and dist.max() > eta:
            j = int(np.argmax(dist))
            extra_pts.append(probe[bad[j]])
            extra_spec.append(probe_spec[bad[j]])
            np.minimum(dist, _seminorm_rows(probe_spec[bad] - probe_spec[bad[j]], inv_mu), out=dist)
        points = np.vstack([points, extra_pts])
        spec = np.concatenate([spec, extra_spec])
    if status != "certified":
        log.warning("secant net coverage not certified (worst probe distance %.4g > eta %.4g)",
                    worst, eta)
    return SecantNet(points, float(eta), status, worst, probes, C, law.probs.copy())


def net_distortion(net, plan):
    """Smallest ``eps`` with ``sqrt(1-eps) <= ||A u|| <= sqrt(1+eps)`` on the net."""
    sq = secant_rayleigh(plan, net.points)
    return float(np.max(np.abs(sq - 1.0)))


@dataclass
class NetExtensionResult:
    ok: bool
    status: str
    worst_slack: float
    net_ok: bool


def net_extension_check(net, plan, eps, secants=None, probes=100_000, seed=0):
    """Check that two-sided control on the net extends to probed secants.

    Net points must satisfy ``sqrt(1-eps) <= ||A u|| <= sqrt(1+eps)``; probes
    are then tested against ``[sqrt(1-eps) - eta, sqrt(1+eps) + eta]``.
    """
    _require_weighted(plan)
    if not 0 < eps < 1:
        raise InvalidInputError("eps must lie in (0, 1)")
    lo, hi = math.sqrt(1 - eps), math.sqrt(1 + eps)
    an = np.sqrt(secant_rayleigh(plan, net.points))
    slack_tol = REL_SLACK
    if np.any(an < lo - slack_tol) or np.any(an > hi + slack_tol):
        return NetExtensionResult(False, "prerequisite_failed",
                                  float(min((an - lo).min(), (hi - an).min())), False)
    if secants is None:
        return NetExtensionResult(True, "net_only", float(min((an - lo).min(), (hi - an).min())), True)
    rng = rng_mod.stream(seed, "net_extension")
    worst = math.inf
    done = 0
    while done < probes:
        size = min(8192, probes - done)
        H = secants.sample(rng, size)
        a = np.sqrt(secant_rayleigh(plan, H))
        worst = min(worst, float(np.min(a - (lo - net.eta))), float(np.min(hi + net.eta - a)))
        done += size
    return NetExtensionResult(worst >= -slack_tol, "checked", worst, True)


# ---------------------------------------------------------------------------
# concentration and pass-rate experiments


@dataclass
class ConcentrationTable:
    rows: list
    monotone: bool
    unbiased: bool


def concentration_experiment(secants, law, m_grid, eps, trials, seed=0, channels=1):
    """Empirical ``P(| ||A h||^2 - ||h||^2 | > eps ||h||^2)`` per ``m`` for fixed ``h``.

    ``secants`` is a sequence of flat real or complex arrays.  Each row of the
    returned table also carries the empirical mean of ``||A h||^2`` and its
    standard error, used for the unbiasedness check (3 standard errors).
    """
    rng = rng_mod.stream(seed, "concentration")
    rows = []
    monotone = True
    unbiased = True
    m_grid = sorted(int(m) for m in m_grid)
    for hi, h in enumerate(secants):
        h = np.asarray(getattr(h, "data", h))
        energy = np.sum(np.abs(fft_blocks(h, channels)) ** 2, axis=0)
        norm2 = float(np.sum(np.abs(h) ** 2))
        ratio = energy / law.probs
        prev = math.inf
        for m in m_grid:
            idx = rng.choice(law.n, size=(trials, m), p=law.probs)
            X = ratio[idx].mean(axis=1)
            fail = float(np.mean(np.abs(X - norm2) > eps * norm2))
            mean = float(X.mean())
            se = float(X.std(ddof=1) / math.sqrt(trials)) if trials > 1 else math.inf
            ok_mean = abs(mean - norm2) <= 3 * se + 1e-12 * norm2
            unbiased &= ok_mean
            monotone &= fail <= prev
            prev = fail
            rows.append(dict(h_index=hi, m=m, eps=eps, failure_rate=fail, trials=trials,
                             mean=mean, stderr=se, norm2=norm2))
    return ConcentrationTable(rows, monotone, unbiased)


def nondegeneracy_pass_rate(decomp, law, m, tau, draws=200, seed=0, channels=1):
    """Fraction of i.i.d. weighted plans of size ``m`` certified at distortion ``tau``."""
    passed = 0
    for j in range(draws):
        plan = draw_plan(law, m, seed=rng_mod.derive_seed(seed, "pass_rate", j), channels=channels)
        passed += check_nondegeneracy(decomp, plan, tau).passed
    return passed / draws


def calibrate_constant(decomp, law, budget_fn, tau, delta, draws=200, seed=0,
                       grid=(0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 5.0, 7.5, 10.0),
                       channels=1):
    """Smallest constant on ``grid`` whose budget reaches pass rate ``>= 1 - delta``.

    ``budget_fn(constant)`` must return a :class:`ComplexityBudget`.  Returns
    ``(constant, budget, rate, history)``; ``constant`` is ``None`` when no grid
    value succeeds.
    """
    history = []
    for const in grid:
        budget = budget_fn(const)
        rate = nondegeneracy_pass_rate(decomp, law, budget.m_required, tau, draws, seed, channels)
        history.append((const, budget.m_required, rate))
        if rate >= 1 - delta:
            return const, budget, rate, history
    return None, None, None, history
