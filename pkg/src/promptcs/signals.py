"""Multichannel signals, the unitary DFT and reconstruction metrics.

A signal with ``C`` channels of length ``n`` is stored as a flat complex
vector of length ``C * n`` in channel-major order, so ``data.reshape(C, n)``
gives one row per channel.  Real signals are stored with zero imaginary part.

The forward transform uses the kernel ``exp(-2j*pi*j*k/n) / sqrt(n)`` per
channel, with frequency 0 (DC) first.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


def _as_finite_complex(values, name):
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise InvalidInputError(f"{name} must be one-dimensional, got shape {arr.shape}")
    arr = arr.astype(np.complex128, copy=True)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def _check_layout(length, channels, n):
    if channels < 1 or n < 1:
        raise InvalidInputError("channels and per-channel length must be positive")
    if length != channels * n:
        raise InvalidInputError(f"length {length} != channels*n = {channels}*{n}")


@dataclass(frozen=True, eq=False)
class Signal:
    """A ``channels``-channel signal of per-channel length ``n``."""

    data: np.ndarray
    channels: int
    n: int

    def __init__(self, data, channels=1, n=None):
        arr = _as_finite_complex(data, "signal data")
        channels = int(channels)
        if n is None:
            if channels < 1 or arr.size % channels:
                raise InvalidInputError(
                    f"length {arr.size} is not divisible by channels={channels}")
            n = arr.size // channels
        _check_layout(arr.size, channels, int(n))
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "n", int(n))

    @property
    def blocks(self):
        """View of the data as a ``(channels, n)`` array."""
        return self.data.reshape(self.channels, self.n)

    @property
    def real(self):
        return self.data.real.copy()

    def norm(self):
        return float(np.linalg.norm(self.data))

    def __len__(self):
        return self.data.size

    def __add__(self, other):
        _same_shape(self, other)
        return Signal(self.data + other.data, self.channels, self.n)

    def __sub__(self, other):
        _same_shape(self, other)
        return Signal(self.data - other.data, self.channels, self.n)

    def __mul__(self, scalar):
        return Signal(self.data * scalar, self.channels, self.n)

    __rmul__ = __mul__

    def __repr__(self):
        return f"Signal(channels={self.channels}, n={self.n}, norm={self.norm():.6g})"


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Per-channel Fourier coefficients, same layout as :class:`Signal`."""

    coeffs: np.ndarray
    channels: int
    n: int

    def __init__(self, coeffs, channels=1, n=None):
        arr = _as_finite_complex(coeffs, "spectrum coefficients")
        channels = int(channels)
        if n is None:
            if channels < 1 or arr.size % channels:
                raise InvalidInputError(
                    f"length {arr.size} is not divisible by channels={channels}")
            n = arr.size // channels
        _check_layout(arr.size, channels, int(n))
        object.__setattr__(self, "coeffs", arr)
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "n", int(n))

    @property
    def blocks(self):
        return self.coeffs.reshape(self.channels, self.n)

    def block_energy(self):
        """Energy per frequency summed over channels, shape ``(n,)``."""
        return np.sum(np.abs(self.blocks) ** 2, axis=0)


def _same_shape(a, b):
    if (a.channels, a.n) != (b.channels, b.n):
        raise InvalidInputError(
            f"shape mismatch: ({a.channels}, {a.n}) vs ({b.channels}, {b.n})")


def fft_blocks(x, channels):
    """Unitary DFT of a flat array (or a stack of flat arrays, last axis)."""
    x = np.asarray(x)
    shape = x.shape[:-1] + (channels, x.shape[-1] // channels)
    return np.fft.fft(x.reshape(shape), axis=-1, norm="ortho")


def block_energy(x, channels):
    """Per-frequency energy ``sum_ch |(F x)[ch, i]|**2`` for flat arrays."""
    return np.sum(np.abs(fft_blocks(x, channels)) ** 2, axis=-2)


def dft(s):
    """Per-channel unitary DFT of ``s``."""
    coeffs = np.fft.fft(s.blocks, axis=1, norm="ortho")
    return Spectrum(coeffs.ravel(), s.channels, s.n)


def idft(sp):
    """Inverse of :func:`dft`."""
    if not isinstance(sp, Spectrum):
        raise InvalidInputError("idft expects a Spectrum")
    values = np.fft.ifft(sp.blocks, axis=1, norm="ortho")
    return Signal(values.ravel(), sp.channels, sp.n)


def sample_coefficient(s, i):
    """Return the length-``C`` block of Fourier coefficients at frequency ``i``."""
    if not 0 <= int(i) < s.n or int(i) != i:
        raise InvalidInputError(f"frequency index {i} out of range [0, {s.n})")
    return dft(s).blocks[:, int(i)].copy()


def psnr(reference, estimate, peak):
    """Peak signal-to-noise ratio in dB; ``math.inf`` marks an exact match."""
    _same_shape(reference, estimate)
    if not peak > 0:
        raise InvalidInputError("peak must be positive")
    mse = float(np.mean(np.abs(reference.data - estimate.data) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak ** 2 / mse)


def relative_error(reference, estimate):
    _same_shape(reference, estimate)
    ref = np.linalg.norm(reference.data)
    diff = np.linalg.norm(reference.data - estimate.data)
    return float(diff / ref) if ref > 0 else float(diff)


def write_signal_csv(path, s):
    """Write ``s`` as rows ``channel,index,re,im``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["channel", "index", "re", "im"])
        blocks = s.blocks
        for ch in range(s.channels):
            for idx in range(s.n):
                v = blocks[ch, idx]
                writer.writerow([ch, idx, repr(float(v.real)), repr(float(v.imag))])


def read_signal_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise InvalidInputError(f"{path}: no rows")
    try:
        entries = [(int(r["channel"]), int(r["index"]), float(r["re"]), float(r["im"]))
                   for r in rows]
    except (KeyError, ValueError) as exc:
        raise InvalidInputError(f"{path}: malformed signal CSV ({exc})") from exc
    channels = max(e[0] for e in entries) + 1
    n = max(e[1] for e in entries) + 1
    if len(entries) != channels * n:
        raise InvalidInputError(f"{path}: expected {channels * n} rows, got {len(entries)}")
    data = np.zeros((channels, n), dtype=np.complex128)
    seen = np.zeros((channels, n), dtype=bool)
    for ch, idx, re, im in entries:
        data[ch, idx] = complex(re, im)
        seen[ch, idx] = True
    if not seen.all():
        raise InvalidInputError(f"{path}: duplicate or missing (channel, index) rows")
    return Signal(data.ravel(), channels, n)
