"""Latent-space least-squares recovery and the mismatched-recovery bound.

The estimator minimizes ``||A G(z, c_r) - y||^2 / (2 C m)`` over the latent
ball with projected gradient descent (cosine-decayed step, gradient-norm
clipping, early stopping on stagnation), from several starts.  Each run is
finished with a few projected Gauss-Newton steps, which are exact on a
single linear piece of a piecewise-linear generator.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import rng as rng_mod
from .christoffel import CompatibilityReport, default_latent_law
from .errors import DivergenceError, InvalidInputError
from .generators import LinearGenerator
from .measurement import apply_array, zero_filled
from .signals import Signal


@dataclass
class RecoveryConfig:
    max_steps: int = 500
    base_lr: float = 1e-2
    lr_schedule: str = "cosine"
    grad_clip: float = 1.0
    patience: int = 35
    restarts: int = 4
    init: str = "zero_filled"
    stagnation_tol: float = 1e-6
    optimizer: str = "pgd"
    polish_steps: int = 25
    seed: int = 0

    def __post_init__(self):
        if min(self.max_steps, self.patience, self.restarts) < 1:
            raise InvalidInputError("max_steps, patience and restarts must be >= 1")
        if self.patience > self.max_steps:
            raise InvalidInputError("patience must not exceed max_steps")
        if not (self.base_lr > 0 and self.grad_clip > 0 and self.stagnation_tol > 0):
            raise InvalidInputError("base_lr, grad_clip and stagnation_tol must be positive")
        if self.polish_steps < 0:
            raise InvalidInputError("polish_steps must be >= 0")
        if self.lr_schedule not in ("constant", "cosine"):
            raise InvalidInputError(f"unknown lr schedule {self.lr_schedule!r}")
        if self.init not in ("zero_filled", "random", "provided"):
            raise InvalidInputError(f"unknown init {self.init!r}")
        if self.optimizer not in ("pgd", "adaptive"):
            raise InvalidInputError(f"unknown optimizer {self.optimizer!r}")

    @classmethod
    def from_dict(cls, obj):
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInputError(f"unknown recovery config fields: {sorted(unknown)}")
        return cls(**obj)


@dataclass
class RecoveryResult:
    z_hat: np.ndarray
    f_hat: Signal
    residual: float
    residual_norm: float
    omega_gap: float
    steps_used: int
    restart_index: int
    restart_residuals: list
    planted_gap: float = None
    config: dict = field(default_factory=dict)

    def to_json(self):
        return {"z_hat": self.z_hat.tolist(), "f_hat_re": self.f_hat.data.real.tolist(),
                "f_hat_im": self.f_hat.data.imag.tolist(), "residual": self.residual,
                "residual_norm": self.residual_norm, "omega_gap": self.omega_gap,
                "steps_used": self.steps_used, "restart_index": self.restart_index,
                "restart_residuals": self.restart_residuals, "planted_gap": self.planted_gap,
                "config": self.config}


class _Problem:
    """Objective, gradient and Gauss-Newton system for one recovery instance."""

    def __init__(self, G, c, plan, y):
        self.G, self.c, self.plan = G, c, plan
        self.yb = y.blocks
        self.norm = 1.0 / (plan.channels * plan.m)

    def residual(self, z):
        return apply_array(self.plan, self.G.forward_batch(z[None, :], self.c)[0]) - self.yb

    def objective(self, z):
        r = self.residual(z)
        return 0.5 * self.norm * float(np.sum(np.abs(r) ** 2))

    def gradient(self, z):
        r = self.residual(z)
        J = self.G._jacobian(z, self.G._params_for(self.c))
        AJ = self._apply_columns(J)
        return self.norm * np.real(AJ.conj().T @ r.ravel())

    def _apply_columns(self, J):
        cols = apply_array(self.plan, J.T)  # (k, m, C)
        return cols.reshape(J.shape[1], -1).T

    def gauss_newton_step(self, z):
        r = self.residual(z).ravel()
        J = self.G._jacobian(z, self.G._params_for(self.c))
        AJ = self._apply_columns(J)
        M = np.vstack([AJ.real, AJ.imag])
        b = -np.concatenate([r.real, r.imag])
        step, *_ = np.linalg.lstsq(M, b, rcond=None)
        return step


def _lr(cfg, t):
    if cfg.lr_schedule == "constant":
        return cfg.base_lr
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * t / cfg.max_steps))


def _descend(problem, z0, cfg, ball):
    z = ball.project(np.array(z0, dtype=float))
    best_z, best = z.copy(), problem.objective(z)
    stagnant = 0
    v = np.zeros_like(z)
    steps = 0
    for t in range(cfg.max_steps):
        if best == 0.0:
            break
        g = problem.gradient(z)
        gn = np.linalg.norm(g)
        if not np.isfinite(gn):
            raise DivergenceError("non-finite gradient", {"step": t, "objective": best})
        if gn > cfg.grad_clip:
            g = g * (cfg.grad_clip / gn)
        lr = _lr(cfg, t)
        if cfg.optimizer == "adaptive":
            v = 0.999 * v + 0.001 * g * g
            g = g / (np.sqrt(v / (1 - 0.999 ** (t + 1))) + 1e-8)
        z = ball.project(z - lr * g)
        f = problem.objective(z)
        steps = t + 1
        if not math.isfinite(f):
            raise DivergenceError("non-finite objective", {"step": t, "objective": f})
        if f < best * (1.0 - cfg.stagnation_tol):
            stagnant = 0
        else:
            stagnant += 1
        if f < best:
            best, best_z = f, z.copy()
        if stagnant >= cfg.patience:
            break
    return best_z, best, steps


def _polish(problem, z, f, steps, ball):
    for _ in range(steps):
        if f == 0.0:
            break
        step = problem.gauss_newton_step(z)
        alpha = 1.0
        accepted = False
        for _ in range(30):
            cand = ball.project(z + alpha * step)
            fc = problem.objective(cand)
            if fc < f:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        gain = f - fc
        z, f = cand, fc
        if gain <= 1e-15 * max(f, 1e-300):
            break
    return z, f


def ball_lstsq(M, b, radius):
    """``argmin ||M z - b||`` over real ``z`` with ``||z|| <= radius``.

    Complex systems are split into real and imaginary rows.  When the
    minimum-norm unconstrained solution leaves the ball, the constrained
    solution is found on the boundary by solving the secular equation.
    """
    M = np.asarray(M)
    b = np.asarray(b)
    if np.iscomplexobj(M) or np.iscomplexobj(b):
        M = np.vstack([M.real, M.imag])
        b = np.concatenate([np.real(b), np.imag(b)])
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    keep = s > (s[0] * 1e-12 if s.size and s[0] > 0 else 0)
    U, s, Vt = U[:, keep], s[keep], Vt[keep]
    c = U.T @ b
    z = Vt.T @ (c / s)
    if np.linalg.norm(z) <= radius:
        return z

    def excess(lam):
        return np.linalg.norm(s * c / (s * s + lam)) - radius

    hi = max(1.0, float(s[0] ** 2))
    while excess(hi) > 0:
        hi *= 10.0
    lam = brentq(excess, 0.0, hi, xtol=1e-15 * hi, rtol=1e-15, maxiter=500)
    z = Vt.T @ (s * c / (s * s + lam))
    nrm = np.linalg.norm(z)
    return z if nrm <= radius else z * (radius / nrm)


def _measurement_matrix(plan, B):
    cols = apply_array(plan, B.T)
    return cols.reshape(B.shape[1], -1).T


def _initial_latent(G, c, plan, y, cfg, problem, rng):
    f_zf = zero_filled(plan, y).data.real
    if isinstance(G, LinearGenerator):
        return ball_lstsq(G.basis(c), f_zf, G.radius)
    candidates = [default_latent_law(rng, 1, G.latent_dim, G.radius)[0] for _ in range(4)]
    fit = fit_latent(G, c, f_zf, restarts=2, seed=int(rng.integers(2 ** 63)))[0]
    candidates.append(fit)
    scores = [problem.objective(G.ball.project(z)) for z in candidates]
    return candidates[int(np.argmin(scores))]


def recover(G, c_r, plan, y, cfg=None, z_init=None, planted=None):
    """Best-of-restarts latent least-squares estimate of the signal behind ``y``.

    Restart 0 starts from ``cfg.init``; the remaining restarts start from
    random latents.  ``omega_gap`` reports the spread of final residual norms
    across restarts.  When a planted latent is given, ``planted_gap`` is the
    returned residual norm minus the planted latent's residual norm.
    """
    cfg = cfg or RecoveryConfig()
    if y.channels != plan.channels or y.y.size != plan.m * plan.channels:
        raise InvalidInputError("measurements do not match the plan")
    if (G.channels, G.n) != (plan.channels, plan.n):
        raise InvalidInputError("generator output does not match the plan")
    G._params_for(c_r)
    problem = _Problem(G, c_r, plan, y)
    ball = G.ball
    results = []
    for r in range(cfg.restarts):
        rng = rng_mod.stream(cfg.seed, "restart", r)
        if r == 0 and cfg.init == "provided":
            if z_init is None:
                raise InvalidInputError("init='provided' needs z_init")
            z0 = np.asarray(z_init, dtype=float)
        elif r == 0 and cfg.init == "zero_filled":
            z0 = _initial_latent(G, c_r, plan, y, cfg, problem, rng)
        else:
            z0 = default_latent_law(rng, 1, G.latent_dim, G.radius)[0]
        z, f, steps = _descend(problem, z0, cfg, ball)
        z, f = _polish(problem, z, f, cfg.polish_steps, ball)
        results.append((f, r, z, steps))
    f, r, z, steps = min(results, key=lambda t: (t[0], t[1]))
    norms = [math.sqrt(2.0 * fr / problem.norm) for fr, *_ in results]
    res_norm = math.sqrt(2.0 * f / problem.norm)
    planted_gap = None
    if planted is not None:
        planted_gap = res_norm - math.sqrt(2.0 * problem.objective(np.asarray(planted, float)) / problem.norm)
    f_hat = Signal(G.forward_batch(z[None, :], c_r)[0], G.channels, G.n)
    return RecoveryResult(z, f_hat, f, res_norm, max(norms) - min(norms), steps, r, norms,
                          planted_gap, asdict(cfg))


def residual_norm(G, c, plan, y, z):
    return float(np.linalg.norm(apply_array(plan, G.forward_batch(np.atleast_2d(z), c)[0]) - y.blocks))


def omega_exact_linear(G, c, plan, y, z_hat):
    """Exact optimality gap ``omega`` of ``z_hat`` for a linear generator."""
    if not isinstance(G, LinearGenerator):
        raise InvalidInputError("exact omega needs a linear generator")
    M = _measurement_matrix(plan, G.basis(c))
    z_best = ball_lstsq(M, y.y, G.radius)
    best = float(np.linalg.norm(M @ z_best - y.y))
    return max(0.0, residual_norm(G, c, plan, y, z_hat) - best)


def fit_latent(G, c, target, restarts=4, seed=0, steps=200):
    """Latent minimizing ``||G(z, c) - target||`` from several random starts.

    Returns ``(z, distance)``.  Exact (ball-constrained projection) for linear
    generators; otherwise a local search whose distance upper-bounds the true
    infimum.
    """
    target = np.asarray(target.data.real if isinstance(target, Signal) else target, dtype=float)
    if isinstance(G, LinearGenerator):
        z = ball_lstsq(G.basis(c), target, G.radius)
        return z, float(np.linalg.norm(G.basis(c) @ z - target))
    ball = G.ball
    params = G._params_for(c)
    best = (math.inf, None)
    for r in range(restarts):
        rng = rng_mod.stream(seed, "fit", r)
        z = default_latent_law(rng, 1, G.latent_dim, G.radius)[0]
        lr = 0.5 / max(1.0, np.linalg.norm(G._jacobian(z, params), 2) ** 2)
        for _ in range(steps):
            res = G._forward_batch(z[None, :], params)[0] - target
            z = ball.project(z - lr * (G._jacobian(z, params).T @ res))
        d = np.linalg.norm(G._forward_batch(z[None, :], params)[0] - target)
        for _ in range(50):
            J = G._jacobian(z, params)
            res = G._forward_batch(z[None, :], params)[0] - target
            step, *_ = np.linalg.lstsq(J, -res, rcond=None)
            alpha, moved = 1.0, False
            for _ in range(30):
                cand = ball.project(z + alpha * step)
                dc = np.linalg.norm(G._forward_batch(cand[None, :], params)[0] - target)
                if dc < d:
                    z, d, moved = cand, dc, True
                    break
                alpha *= 0.5
            if not moved:
                break
        if d < best[0]:
            best = (float(d), z)
    return best[1], best[0]


def approximation_error(G, c_r, f_star, budget=8, seed=0):
    """``inf ||f* - f||`` over the recovery class (an upper estimate for ReLU classes)."""
    return fit_latent(G, c_r, f_star, restarts=budget, seed=seed)[1]


def recovery_bound(Lambda_star, gamma, q, approx_error, noise_norm, omega):
    """Mismatched-recovery error bound.

    ``(1 + 2 sqrt(Lambda)/gamma) * approx_error + (2 ||e|| + omega + q) / gamma``
    """
    lam = Lambda_star.value if isinstance(Lambda_star, CompatibilityReport) else float(Lambda_star)
    if not gamma > 0:
        raise InvalidInputError("gamma must be positive")
    if min(lam, q, approx_error, noise_norm, omega) < 0:
        raise InvalidInputError("all bound inputs must be nonnegative")
    return (1.0 + 2.0 * math.sqrt(lam) / gamma) * approx_error + (2.0 * noise_norm + omega + q) / gamma
