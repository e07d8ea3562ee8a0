"""Conditional generators ``G(z, c)`` and their cone decompositions.

Two families are provided:

* :class:`LinearGenerator` -- ``G(z, c) = B_c z``, the exactly analyzable
  one-piece class.
* :class:`ReluGenerator` -- bias-free feed-forward ReLU networks whose weights
  depend on the condition.

Both map latents in the ball ``||z|| <= R`` to real signals of length
``channels * n`` (channel-major layout, see :mod:`promptcs.signals`).
"""

import json
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from . import rng as rng_mod
from .errors import (CapacityError, InvalidInputError, OutOfBallError,
                     UnknownConditionError)
from .signals import Signal

log = logging.getLogger(__name__)

BALL_TOL = 1e-12
MARGIN_TOL = 1e-9


def default_radius(k):
    """Latent radius used when none is given: ``3 * sqrt(k)``."""
    return 3.0 * math.sqrt(k)


@dataclass(frozen=True)
class LatentBall:
    dim: int
    radius: float

    def __post_init__(self):
        if self.dim < 1 or not self.radius > 0:
            raise InvalidInputError("latent ball needs dim >= 1 and radius > 0")

    def contains(self, z):
        return np.linalg.norm(z) <= self.radius * (1 + BALL_TOL)

    def project(self, z):
        nrm = np.linalg.norm(z)
        return z if nrm <= self.radius else z * (self.radius / nrm)


class ConditionalGenerator:
    """Shared plumbing; subclasses implement ``_forward_batch`` and ``_jacobian``."""

    kind = None

    def __init__(self, latent_dim, ambient_dim, channels, radius):
        if ambient_dim % channels:
            raise InvalidInputError(
                f"ambient dimension {ambient_dim} not divisible by channels={channels}")
        self.ball = LatentBall(int(latent_dim), float(radius))
        self.latent_dim = int(latent_dim)
        self.ambient_dim = int(ambient_dim)
        self.channels = int(channels)
        self.n = self.ambient_dim // self.channels

    @property
    def radius(self):
        return self.ball.radius

    @property
    def conditions(self):
        return tuple(self._params)

    def _params_for(self, c):
        try:
            return self._params[c]
        except KeyError:
            raise UnknownConditionError(f"unknown condition {c!r}") from None

    def _check_latent(self, z):
        z = np.asarray(z, dtype=float)
        if z.shape != (self.latent_dim,):
            raise InvalidInputError(f"latent must have shape ({self.latent_dim},), got {z.shape}")
        if not np.all(np.isfinite(z)):
            raise InvalidInputError("latent contains non-finite entries")
        if not self.ball.contains(z):
            raise OutOfBallError(
                f"||z|| = {np.linalg.norm(z):.6g} exceeds radius {self.radius:.6g}")
        return z

    def forward(self, z, c):
        """Real output vector of length ``ambient_dim``."""
        z = self._check_latent(z)
        return self._forward_batch(z[None, :], self._params_for(c))[0]

    def forward_batch(self, Z, c):
        """Evaluate rows of ``Z`` (no ball check; callers draw inside the ball)."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        return self._forward_batch(Z, self._params_for(c))

    def generate(self, z, c):
        return Signal(self.forward(z, c), self.channels, self.n)

    def jacobian(self, z, c):
        """Exact Jacobian ``dG/dz`` of shape ``(ambient_dim, latent_dim)``."""
        z = self._check_latent(z)
        return self._jacobian(z, self._params_for(c))

    def vjp(self, z, c, cotangent):
        """Vector-Jacobian product ``J(z)^T v`` for a real cotangent ``v``."""
        return self.jacobian(z, c).T @ np.asarray(cotangent, dtype=float)


class LinearGenerator(ConditionalGenerator):
    """``G(z, c) = B_c z`` with one basis matrix per condition."""

    kind = "linear"

    def __init__(self, bases, channels=1, radius=None):
        bases = {c: np.array(B, dtype=float) for c, B in bases.items()}
        if not bases:
            raise InvalidInputError("at least one condition is required")
        shapes = {B.shape for B in bases.values()}
        if len(shapes) != 1 or len(next(iter(shapes))) != 2:
            raise InvalidInputError(f"all bases must share one 2-D shape, got {shapes}")
        ambient, k = next(iter(shapes))
        for c, B in bases.items():
            if not np.all(np.isfinite(B)):
                raise InvalidInputError(f"basis for {c!r} has non-finite entries")
            if np.linalg.matrix_rank(B) < k:
                raise InvalidInputError(f"basis for {c!r} has dependent columns")
            B.setflags(write=False)
        super().__init__(k, ambient, channels, radius or default_radius(k))
        self._params = bases

    def basis(self, c):
        return self._params_for(c)

    def _forward_batch(self, Z, B):
        return Z @ B.T

    def _jacobian(self, z, B):
        return B.copy()

    @property
    def widths(self):
        return (self.latent_dim, self.ambient_dim)


class ReluGenerator(ConditionalGenerator):
    """Bias-free depth-``d`` ReLU network with per-condition weights.

    ``weights[c]`` is the sequence ``(W_1, ..., W_d)`` with ``W_l`` of shape
    ``(k_l, k_{l-1})``.  The output layer has no activation.
    """

    kind = "relu"

    def __init__(self, weights, channels=1, radius=None):
        if not weights:
            raise InvalidInputError("at least one condition is required")
        params = {}
        chain = None
        for c, ws in weights.items():
            ws = tuple(np.array(W, dtype=float) for W in ws)
            if len(ws) < 2:
                raise InvalidInputError("depth must be at least 2")
            this = [ws[0].shape[1]] + [W.shape[0] for W in ws]
            for prev, W in zip(this[:-1], ws):
                if W.ndim != 2 or W.shape[1] != prev:
                    raise InvalidInputError(f"inconsistent layer shapes for {c!r}")
                if not np.all(np.isfinite(W)):
                    raise InvalidInputError(f"non-finite weights for {c!r}")
                W.setflags(write=False)
            if chain is None:
                chain = this
            elif this != chain:
                raise InvalidInputError("all conditions must share layer widths")
            params[c] = ws
        k = chain[0]
        if any(w < k for w in chain[1:-1]):
            raise InvalidInputError(f"hidden widths must be >= latent dim k={k}: {chain}")
        super().__init__(k, chain[-1], channels, radius or default_radius(k))
        self._params = params
        self.widths = tuple(chain)

    @property
    def depth(self):
        return len(self.widths) - 1

    @property
    def hidden_widths(self):
        return self.widths[1:-1]

    def layer_weights(self, c):
        return self._params_for(c)

    def _forward_batch(self, Z, ws):
        h = Z
        for W in ws[:-1]:
            h = np.maximum(h @ W.T, 0.0)
        return h @ ws[-1].T

    def _jacobian(self, z, ws):
        J = np.eye(self.latent_dim)
        h = z
        for W in ws[:-1]:
            pre = W @ h
            active = pre > 0
            J = (W @ J) * active[:, None]
            h = np.where(active, pre, 0.0)
        return ws[-1] @ J

    def vjp(self, z, c, cotangent):
        z = self._check_latent(z)
        ws = self._params_for(c)
        masks = []
        h = z
        for W in ws[:-1]:
            pre = W @ h
            masks.append(pre > 0)
            h = np.where(masks[-1], pre, 0.0)
        g = ws[-1].T @ np.asarray(cotangent, dtype=float)
        for W, mask in zip(reversed(ws[:-1]), reversed(masks)):
            g = W.T @ (g * mask)
        return g

    def activation_pattern(self, z, c):
        ws = self._params_for(c)
        pattern = []
        h = np.asarray(z, dtype=float)
        for W in ws[:-1]:
            pre = W @ h
            pattern.append(tuple(bool(v) for v in pre > 0))
            h = np.maximum(pre, 0.0)
        return tuple(pattern)


def generate(spec, z, c):
    """Forward pass ``G(z, c)`` as a :class:`Signal`."""
    return spec.generate(z, c)


def generate_gradient(spec, z, c, cotangent=None):
    """Jacobian of ``G(., c)`` at ``z``, or ``J^T v`` when a cotangent is given.

    The ReLU derivative at 0 is taken to be 0.
    """
    if cotangent is None:
        return spec.jacobian(z, c)
    return spec.vjp(z, c, cotangent)


def lipschitz_bound(spec, c):
    """Product of layer spectral norms, an upper bound on the Lipschitz constant."""
    if isinstance(spec, LinearGenerator):
        return float(np.linalg.norm(spec.basis(c), 2))
    return float(np.prod([np.linalg.norm(W, 2) for W in spec.layer_weights(c)]))


# ---------------------------------------------------------------------------
# cone decomposition


@dataclass
class ConePiece:
    """One linear piece: ``G(z) = matrix @ z`` on ``{z : cone_rows @ z >= 0}``."""

    pattern: tuple
    matrix: np.ndarray
    cone_rows: np.ndarray
    witness: np.ndarray
    margin: float

    @property
    def full_space(self):
        return self.cone_rows.shape[0] == 0

    def contains(self, z, tol=0.0):
        return bool(np.all(self.cone_rows @ z >= -tol))


@dataclass
class ConeDecomposition:
    condition: object
    pieces: list
    latent_dim: int
    radius: float
    excluded: int = 0
    total_patterns: int = 1
    hidden_widths: tuple = ()

    @property
    def count(self):
        return len(self.pieces)

    @property
    def all_full_space(self):
        return all(p.full_space for p in self.pieces)

    def sample(self, index, count, rng):
        """Draw ``count`` latents strictly inside piece ``index`` and the ball."""
        return sample_cone(self.pieces[index], count, rng, self.radius)


def cone_count_bound(k, hidden_widths):
    """Right-hand side ``k(d-1) log(2e kbar / k)`` of the cone-count lemma."""
    hidden_widths = tuple(hidden_widths)
    if not hidden_widths:
        return 0.0
    dm1 = len(hidden_widths)
    kbar = math.exp(sum(math.log(w) for w in hidden_widths) / dm1)
    return k * dm1 * math.log(2 * math.e * kbar / k)


def _max_margin(rows):
    """Maximize ``t`` subject to ``rows @ z >= t`` (unit rows), ``|z|_inf <= 1``."""
    r, k = rows.shape
    if r == 0:
        z = np.zeros(k)
        z[0] = 1.0
        return 1.0, z
    cost = np.zeros(k + 1)
    cost[-1] = -1.0
    A_ub = np.hstack([-rows, np.ones((r, 1))])
    bounds = [(-1.0, 1.0)] * k + [(None, 1.0)]
    res = linprog(cost, A_ub=A_ub, b_ub=np.zeros(r), bounds=bounds, method="highs")
    if res.status != 0:
        return -math.inf, None
    return float(res.x[-1]), res.x[:-1]


def _unit_rows(rows):
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    return rows / norms


def enumerate_cones(spec, c, max_units=20):
    """Enumerate every realizable activation cone of ``G(., c)``.

    Units are branched one at a time (layer by layer) and every partial sign
    pattern is checked for a strictly interior point with a small linear
    program, so only realizable patterns survive.  Pieces whose closure is
    lower dimensional are dropped; by continuity of ``G`` the closures of the
    full-dimensional cones still cover latent space.
    """
    if isinstance(spec, LinearGenerator):
        B = spec.basis(c)
        w = np.zeros(spec.latent_dim)
        w[0] = 0.5 * spec.radius
        piece = ConePiece((), B.copy(), np.zeros((0, spec.latent_dim)), w, math.inf)
        return ConeDecomposition(c, [piece], spec.latent_dim, spec.radius)

    ws = spec.layer_weights(c)
    hidden = spec.hidden_widths
    units = sum(hidden)
    if units > max_units:
        raise CapacityError(f"{units} hidden units exceed the enumeration cap of {max_units}")
    k = spec.latent_dim
    scale = max(np.abs(W).max() for W in ws)

    # Each stack entry: (layer index, pattern so far, current-layer pattern,
    # prefix map M (maps z to the previous layer's post-activation), rows).
    pieces = []
    stack = [(0, (), (), np.eye(k), np.zeros((0, k)))]
    while stack:
        layer, done, current, M, rows = stack.pop()
        if layer == len(hidden):
            A = ws[-1] @ M
            t, z = _max_margin(_unit_rows(rows)) if rows.shape[0] else (1.0, None)
            if z is None:
                z = np.zeros(k)
                z[0] = 1.0
            z = z / np.linalg.norm(z)
            pieces.append(ConePiece(done, A, rows, 0.5 * spec.radius * z,
                                    float(np.min(_unit_rows(rows) @ z)) if rows.shape[0] else math.inf))
            continue
        W = ws[layer]
        u = len(current)
        row = W[u] @ M
        children = []
        if np.linalg.norm(row) <= 1e-14 * scale * max(1.0, np.linalg.norm(M)):
            children.append((False, rows))
        else:
            for active in (True, False):
                signed = row if active else -row
                new_rows = np.vstack([rows, signed])
                t, _ = _max_margin(_unit_rows(new_rows))
                if t > MARGIN_TOL:
                    children.append((active, new_rows))
        for active, new_rows in reversed(children):
            cur = current + (active,)
            if len(cur) == hidden[layer]:
                D = np.array(cur, dtype=float)
                stack.append((layer + 1, done + (cur,), (), (W @ M) * D[:, None], new_rows))
            else:
                stack.append((layer, done, cur, M, new_rows))
    total = 2 ** units
    decomp = ConeDecomposition(c, pieces, k, spec.radius, excluded=total - len(pieces),
                               total_patterns=total, hidden_widths=tuple(hidden))
    if decomp.excluded:
        log.info("condition %r: %d of %d activation patterns are not realizable",
                 c, decomp.excluded, total)
    return decomp


def sample_cone(piece, count, rng, radius):
    """Latents strictly inside ``piece``'s cone with norm at most ``radius``."""
    k = piece.witness.size
    if piece.full_space:
        g = rng.standard_normal((count, k))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = radius * rng.uniform(0.05, 1.0, size=(count, 1)) ** (1.0 / k)
        return g * r
    rows = _unit_rows(piece.cone_rows)
    # rejection from uniform directions first, so the whole cone is explored
    g = rng.standard_normal((4 * count, k))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    inside = g[np.all(g @ rows.T > MARGIN_TOL, axis=1)][:count]
    missing = count - inside.shape[0]
    if missing:
        u = piece.witness / np.linalg.norm(piece.witness)
        margin = float(np.min(rows @ u))
        e = rng.standard_normal((missing, k))
        e /= np.linalg.norm(e, axis=1, keepdims=True)
        step = 0.9 * margin * rng.uniform(0.0, 1.0, size=(missing, 1)) ** (1.0 / k)
        extra = u[None, :] + e * step
        extra /= np.linalg.norm(extra, axis=1, keepdims=True)
        inside = np.vstack([inside, extra])
    return inside * (radius * rng.uniform(0.05, 1.0, size=(count, 1)))


# ---------------------------------------------------------------------------
# synthetic families with a class-tightness knob


def band_limited(n, channels, freqs, count, rng):
    """Random real columns whose spectrum lives on ``freqs`` (and mirrors)."""
    freqs = sorted({int(f) % n for f in freqs})
    out = np.zeros((channels, n, count), dtype=complex)
    for f in freqs:
        mirror = (-f) % n
        coef = rng.standard_normal((channels, count)) + 1j * rng.standard_normal((channels, count))
        if f == mirror:
            out[:, f, :] += coef.real
        else:
            out[:, f, :] += coef
            out[:, mirror, :] += np.conj(coef)
    cols = np.fft.ifft(out, axis=1, norm="ortho").real
    return cols.reshape(channels * n, count)


def _normalize_columns(M, target):
    return M * (target / np.linalg.norm(M, axis=0, keepdims=True))


def prompt_bands(n, prompts, shared_width=2, band_width=None):
    """Disjoint frequency bands, one per prompt, above a shared low band."""
    half = n // 2
    count = max(len(prompts), 1)
    width = band_width or max(1, (half - shared_width) // count)
    bands = {}
    start = shared_width + 1
    for p in prompts:
        stop = min(start + width, half + 1)
        if stop <= start:
            raise InvalidInputError(f"n={n} too small for {len(prompts)} prompt bands")
        bands[p] = list(range(start, stop))
        start = stop
    return list(range(0, shared_width + 1)), bands


def linear_tightness_family(n, k, prompts, theta=0.8, channels=1, seed=0,
                            unconditioned=None, shared_width=2, band_width=None):
    """Linear classes sharing a low-frequency component, mixed by ``theta``.

    Each basis is ``(1 - theta) * shared + theta * specific_c`` with ``specific_c``
    band-limited to a prompt-specific band.  ``theta = 0`` makes all classes
    identical; ``theta = 1`` makes their spectra disjoint apart from DC.  An
    ``unconditioned`` member, when named, uses a broadband specific part.
    """
    if not 0.0 <= theta <= 1.0:
        raise InvalidInputError("theta must lie in [0, 1]")
    rng = rng_mod.stream(seed, "linear_family")
    shared_band, bands = prompt_bands(n, list(prompts), shared_width, band_width)
    shared = band_limited(n, channels, shared_band, k, rng)
    shared = _normalize_columns(shared, 1.0)
    bases = {}
    for p in prompts:
        spec = _normalize_columns(band_limited(n, channels, bands[p], k, rng), 1.0)
        bases[p] = _normalize_columns((1 - theta) * shared + theta * spec,
                                      math.sqrt(channels * n))
    if unconditioned is not None:
        spec = _normalize_columns(band_limited(n, channels, range(1, n // 2 + 1), k, rng), 1.0)
        bases[unconditioned] = _normalize_columns((1 - theta) * shared + theta * spec,
                                                  math.sqrt(channels * n))
    return LinearGenerator(bases, channels=channels)


def relu_tightness_family(n, k, hidden, prompts, theta=0.8, channels=1, seed=0,
                          unconditioned=None, shared_width=2, band_width=None):
    """ReLU analogue of :func:`linear_tightness_family`.

    Hidden layers are a shared random draw plus a ``theta``-scaled per-prompt
    perturbation; the output layer mixes a shared low band with a
    prompt-specific band exactly as in the linear family.
    """
    rng = rng_mod.stream(seed, "relu_family")
    chain = [k] + list(hidden)
    base = [rng.standard_normal((b, a)) * math.sqrt(2.0 / a) for a, b in zip(chain[:-1], chain[1:])]
    shared_band, bands = prompt_bands(n, list(prompts), shared_width, band_width)
    shared_out = _normalize_columns(band_limited(n, channels, shared_band, chain[-1], rng), 1.0)
    names = list(prompts) + ([unconditioned] if unconditioned is not None else [])
    weights = {}
    for p in names:
        freq = bands[p] if p in bands else range(1, n // 2 + 1)
        hid = [W + theta * rng.standard_normal(W.shape) * math.sqrt(2.0 / W.shape[1]) for W in base]
        spec = _normalize_columns(band_limited(n, channels, freq, chain[-1], rng), 1.0)
        out = _normalize_columns((1 - theta) * shared_out + theta * spec, 1.0)
        weights[p] = hid + [out * math.sqrt(channels * n / chain[-1])]
    return ReluGenerator(weights, channels=channels)


def random_relu(k, hidden, ambient, conditions=("c",), channels=1, seed=0, radius=None):
    """Gaussian bias-free ReLU generator; used for tests and calibration."""
    rng = rng_mod.stream(seed, "random_relu")
    chain = [k] + list(hidden) + [ambient]
    weights = {c: [rng.standard_normal((b, a)) / math.sqrt(a) for a, b in zip(chain[:-1], chain[1:])]
               for c in conditions}
    return ReluGenerator(weights, channels=channels, radius=radius)


def derive_condition(spec, base, new, theta, seed=0):
    """Return a copy of ``spec`` with ``new`` added as a ``theta``-perturbation of ``base``."""
    rng = rng_mod.stream(seed, "derive", str(new))
    if isinstance(spec, LinearGenerator):
        B = spec.basis(base)
        E = rng.standard_normal(B.shape)
        B_new = B + theta * E * (np.linalg.norm(B) / np.linalg.norm(E))
        bases = dict(spec._params)
        bases[new] = B_new
        return LinearGenerator(bases, channels=spec.channels, radius=spec.radius)
    weights = {c: list(ws) for c, ws in spec._params.items()}
    new_ws = []
    for W in spec.layer_weights(base):
        E = rng.standard_normal(W.shape)
        new_ws.append(W + theta * E * (np.linalg.norm(W) / np.linalg.norm(E)))
    weights[new] = new_ws
    return ReluGenerator(weights, channels=spec.channels, radius=spec.radius)


# ---------------------------------------------------------------------------
# JSON


def to_json(spec):
    conds = {}
    if isinstance(spec, LinearGenerator):
        for c, B in spec._params.items():
            conds[str(c)] = {"B": B.tolist()}
    else:
        for c, ws in spec._params.items():
            conds[str(c)] = {f"W{i + 1}": W.tolist() for i, W in enumerate(ws)}
    return {"kind": spec.kind, "widths": list(spec.widths), "channels": spec.channels,
            "radius": spec.radius, "conditions": conds}


def from_json(obj):
    """Build a generator from the dict produced by :func:`to_json`."""
    if isinstance(obj, str):
        obj = json.loads(obj)
    try:
        kind = obj["kind"]
        conds = obj["conditions"]
        channels = int(obj.get("channels", 1))
        radius = obj.get("radius")
    except (KeyError, TypeError) as exc:
        raise InvalidInputError(f"generator JSON missing field: {exc}") from exc
    if kind == "linear":
        return LinearGenerator({c: v["B"] for c, v in conds.items()}, channels, radius)
    if kind == "relu":
        weights = {}
        for c, v in conds.items():
            keys = sorted(v, key=lambda s: int(s[1:]))
            weights[c] = [v[key] for key in keys]
        spec = ReluGenerator(weights, channels, radius)
        if "widths" in obj and list(obj["widths"]) != list(spec.widths):
            raise InvalidInputError(f"declared widths {obj['widths']} != weights {spec.widths}")
        return spec
    raise InvalidInputError(f"unknown generator kind {kind!r}")
