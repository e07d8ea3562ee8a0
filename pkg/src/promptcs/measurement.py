"""Subsampled Fourier measurement plans and operators.

A plan holds the drawn frequency indices ``I_1..I_m`` and the weights
``1 / mu(I_j)``.  The measurement operator is

    y_j = m**-0.5 * w_j**0.5 * (F f)[:, I_j]

per channel block, with ``w_j = 1`` for unweighted plans.  Measurements are
stored flat in ``(j, channel)`` order.

Two pairings are supported: i.i.d. draws with weights (the setting of the
recovery theory) and DC-first draws without replacement, unweighted (the
imaging pipeline).  Mixing them raises :class:`ModeConflictError`.
"""

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from . import rng as rng_mod
from .errors import InvalidInputError, ModeConflictError
from .signals import Signal, fft_blocks

IID = "iid_with_replacement"
WOR_DC = "without_replacement_dc"
_PAIRING = {IID: "weighted", WOR_DC: "unweighted"}


@dataclass(frozen=True, eq=False)
class MeasurementPlan:
    indices: np.ndarray
    weights: np.ndarray
    mode: str
    draw_mode: str
    n: int
    channels: int = 1
    seed: int = 0

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        w = np.asarray(self.weights, dtype=float)
        if idx.ndim != 1 or idx.size < 1 or idx.shape != w.shape:
            raise InvalidInputError("indices and weights must be equal-length 1-D arrays")
        if np.any(idx < 0) or np.any(idx >= self.n):
            raise InvalidInputError(f"indices must lie in [0, {self.n})")
        if self.mode not in ("weighted", "unweighted"):
            raise InvalidInputError(f"unknown mode {self.mode!r}")
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise InvalidInputError("weights must be finite and positive")
        if self.draw_mode == WOR_DC and (idx[0] != 0 or np.unique(idx).size != idx.size):
            raise InvalidInputError("without-replacement plans need distinct indices, DC first")
        idx.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "weights", w)

    @property
    def m(self):
        return self.indices.size

    @property
    def scale(self):
        """Per-measurement factor ``sqrt(w_j / m)``."""
        return np.sqrt(self.weights / self.m)

    def to_json(self):
        return {"indices": self.indices.tolist(), "weights": self.weights.tolist(),
                "mode": self.mode, "draw_mode": self.draw_mode, "n": self.n,
                "channels": self.channels, "seed": self.seed}

    @classmethod
    def from_json(cls, obj):
        return cls(np.array(obj["indices"]), np.array(obj["weights"]), obj["mode"],
                   obj["draw_mode"], int(obj["n"]), int(obj.get("channels", 1)),
                   int(obj.get("seed", 0)))


@dataclass(frozen=True, eq=False)
class Measurements:
    y: np.ndarray
    channels: int
    noise_norm: float = 0.0
    noise: np.ndarray = None

    @property
    def m(self):
        return self.y.size // self.channels

    @property
    def blocks(self):
        """``(m, channels)`` view."""
        return self.y.reshape(self.m, self.channels)


def draw_plan(law, m, draw_mode=IID, mode=None, seed=0, channels=1):
    """Draw ``m`` frequency indices from ``law``.

    ``iid_with_replacement`` draws ``m`` independent indices with weights
    ``1/mu(I_j)``; ``without_replacement_dc`` takes index 0 first and then
    ``m - 1`` distinct indices by repeatedly renormalizing the remaining mass.
    """
    m = int(m)
    n = law.n
    if draw_mode not in _PAIRING:
        raise InvalidInputError(f"unknown draw mode {draw_mode!r}")
    if mode is None:
        mode = _PAIRING[draw_mode]
    if mode != _PAIRING[draw_mode]:
        raise ModeConflictError(f"{mode} measurements are not paired with {draw_mode} draws")
    if m < 1:
        raise InvalidInputError("m must be >= 1")
    rng = rng_mod.stream(seed, "plan")
    if draw_mode == IID:
        idx = rng.choice(n, size=m, p=law.probs)
        return MeasurementPlan(idx, 1.0 / law.probs[idx], mode, draw_mode, n, channels, seed)
    if m > n:
        raise InvalidInputError(f"cannot draw {m} distinct indices out of {n}")
    remaining = law.probs.copy()
    remaining[0] = 0.0
    idx = [0]
    for _ in range(m - 1):
        p = remaining / remaining.sum()
        pick = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
        pick = min(pick, n - 1)
        while remaining[pick] == 0.0:  # guard against cumsum rounding at the edge
            pick -= 1
        idx.append(pick)
        remaining[pick] = 0.0
    return MeasurementPlan(np.array(idx), np.ones(m), mode, draw_mode, n, channels, seed)


def full_plan(n, channels=1, law=None):
    """Each index exactly once; weighted by ``law`` if given, else unweighted."""
    if law is None:
        return MeasurementPlan(np.arange(n), np.ones(n), "unweighted", WOR_DC, n, channels)
    return MeasurementPlan(np.arange(n), 1.0 / law.probs, "weighted", IID, n, channels)


def _check_signal(plan, f):
    if (f.channels, f.n) != (plan.channels, plan.n):
        raise InvalidInputError(
            f"signal ({f.channels}x{f.n}) does not match plan ({plan.channels}x{plan.n})")


def apply_array(plan, x):
    """Measurements of flat array(s) ``x``; returns shape ``(..., m, C)``."""
    coeffs = fft_blocks(x, plan.channels)  # (..., C, n)
    sel = coeffs[..., plan.indices]  # (..., C, m)
    return np.swapaxes(sel, -1, -2) * plan.scale[:, None]


def adjoint_array(plan, yb):
    """Hermitian adjoint for ``(m, C)`` measurement blocks; returns a flat array."""
    spec = np.zeros((plan.channels, plan.n), dtype=complex)
    np.add.at(spec.T, plan.indices, yb * plan.scale[:, None])
    return np.fft.ifft(spec, axis=1, norm="ortho").ravel()


def apply(plan, f):
    """``A_Omega f``."""
    _check_signal(plan, f)
    return Measurements(apply_array(plan, f.data).ravel(), plan.channels)


def adjoint(plan, y):
    """``A_Omega^H y``."""
    if y.channels != plan.channels or y.y.size != plan.m * plan.channels:
        raise InvalidInputError("measurement length does not match plan")
    return Signal(adjoint_array(plan, y.blocks), plan.channels, plan.n)


def operator_matrix(plan):
    """Dense ``(m*C, C*n)`` matrix of ``A_Omega`` in the flat layouts."""
    n, C = plan.n, plan.channels
    F_rows = np.exp(-2j * np.pi * np.outer(plan.indices, np.arange(n)) / n) / math.sqrt(n)
    F_rows *= plan.scale[:, None]
    A = np.zeros((plan.m, C, C, n), dtype=complex)
    for ch in range(C):
        A[:, ch, ch, :] = F_rows
    return A.reshape(plan.m * C, C * n)


def add_noise(plan, y, u=None, scale=0.0, weighted=None, seed=0):
    """Add ``e = m**-0.5 W**0.5 u`` (or ``m**-0.5 u`` unweighted) to ``y``.

    ``u`` defaults to circular complex Gaussian noise with per-entry standard
    deviation ``scale``.
    """
    size = plan.m * plan.channels
    if u is None:
        rng = rng_mod.stream(seed, "noise")
        u = scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / math.sqrt(2)
    u = np.asarray(u, dtype=complex).ravel()
    if u.size != size or y.y.size != size:
        raise InvalidInputError(f"noise and measurements must have length {size}")
    if weighted is None:
        weighted = plan.mode == "weighted"
    w = plan.weights if weighted else np.ones(plan.m)
    e = (u.reshape(plan.m, plan.channels) * np.sqrt(w / plan.m)[:, None]).ravel()
    return Measurements(y.y + e, y.channels, float(np.linalg.norm(e)), e)


def zero_filled(plan, y):
    """Zero-filled inverse DFT of the measured coefficients.

    The measurement scaling is undone per index (repeated i.i.d. indices are
    averaged), the coefficients are placed in an otherwise zero spectrum and
    inverted.  For an unweighted plan with distinct indices this equals
    ``m * A^H y``, i.e. ``(m/n) A^H y`` under the unnormalized DFT.
    """
    if y.channels != plan.channels or y.y.size != plan.m * plan.channels:
        raise InvalidInputError("measurement length does not match plan")
    raw = y.blocks / plan.scale[:, None]
    spec = np.zeros((plan.channels, plan.n), dtype=complex)
    counts = np.zeros(plan.n)
    np.add.at(spec.T, plan.indices, raw)
    np.add.at(counts, plan.indices, 1.0)
    hit = counts > 0
    spec[:, hit] /= counts[hit]
    return Signal(np.fft.ifft(spec, axis=1, norm="ortho").ravel(), plan.channels, plan.n)


def write_plan_json(path, plan):
    with open(path, "w") as fh:
        json.dump(plan.to_json(), fh, indent=2)


def read_plan_json(path):
    with open(path) as fh:
        return MeasurementPlan.from_json(json.load(fh))


def write_measurements_csv(path, y):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["j", "channel", "re", "im"])
        for j, block in enumerate(y.blocks):
            for ch, v in enumerate(block):
                writer.writerow([j, ch, repr(float(v.real)), repr(float(v.imag))])


def read_measurements_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    m = max(int(r["j"]) for r in rows) + 1
    channels = max(int(r["channel"]) for r in rows) + 1
    if len(rows) != m * channels:
        raise InvalidInputError(f"{path}: expected {m * channels} rows")
    y = np.zeros((m, channels), dtype=complex)
    for r in rows:
        y[int(r["j"]), int(r["channel"])] = complex(float(r["re"]), float(r["im"]))
    return Measurements(y.ravel(), channels)
