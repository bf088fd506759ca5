"""Lossless range coding of integer symbols under quantized Gaussian cdfs.

The coder is a standard 32-bit range coder with 16-bit probability
precision and byte-wise carry propagation (cache plus pending-0xFF
counter).  Streams are self-delimiting only through the caller knowing
the symbol count; the flush emits five bytes, so the total overhead per
stream is bounded by 64 bits.  See docs/bitstream.md for the byte-exact
procedure.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import erf as _erf

from .constants import (
    ALPHABET_SIZE,
    PROB_TOTAL,
    SIGMA_MAX,
    SIGMA_MIN,
    SYMBOL_MAX,
    SYMBOL_MIN,
)
from .errors import CoderError, DecodeError

_TOP = 1 << 24
_MASK32 = (1 << 32) - 1
_SQRT2 = math.sqrt(2.0)


def _std_cdf(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + _erf(x / _SQRT2))


def build_cdf_batch(mu_frac: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Quantized cumulative counts, one row of length ALPHABET_SIZE+1 per
    (mu_frac, sigma) pair.

    Bin m in [-63, 62] carries the Gaussian mass of (m - mu_frac - 0.5,
    m - mu_frac + 0.5]; the edge bins -64 and 63 absorb the full lower
    and upper tails.  Real probabilities are converted to 16-bit counts
    by largest-remainder rounding with a minimum count of 1 per symbol,
    so every row sums to exactly PROB_TOTAL.
    """
    mu_frac = np.atleast_1d(np.asarray(mu_frac, dtype=np.float64))
    sigma = np.atleast_1d(np.asarray(sigma, dtype=np.float64))
    if mu_frac.shape != sigma.shape or mu_frac.ndim != 1:
        raise CoderError("mu_frac and sigma must be equal-length 1-d arrays")
    if np.any((mu_frac < 0.0) | (mu_frac >= 1.0)):
        raise CoderError("mu_frac must lie in [0, 1)")
    if np.any((sigma < SIGMA_MIN - 1e-12) | (sigma > SIGMA_MAX + 1e-12)):
        raise CoderError(f"sigma outside [{SIGMA_MIN}, {SIGMA_MAX}]")

    n = mu_frac.shape[0]
    edges = np.arange(SYMBOL_MIN, SYMBOL_MAX + 1, dtype=np.float64) + 0.5  # 128 upper edges
    z = (edges[None, :] - mu_frac[:, None]) / sigma[:, None]
    upper = _std_cdf(z)
    upper[:, -1] = 1.0                           # fold the high tail into bin SYMBOL_MAX
    lower = np.concatenate([np.zeros((n, 1)), upper[:, :-1]], axis=1)  # low tail folded
    pmf = upper - lower

    counts = _largest_remainder(pmf * PROB_TOTAL, PROB_TOTAL)

    # Enforce a minimum count of 1.  The subsidy for empty bins is paid by
    # the other bins proportionally to their headroom, keeping the dominant
    # bin accurate; it only pays when nothing else can (very small sigma).
    zeros = counts == 0
    subsidy = zeros.sum(axis=1)
    counts[zeros] = 1
    rows = np.arange(n)
    top = np.argmax(counts, axis=1)
    caps = counts - 1
    caps[rows, top] = 0
    total_cap = caps.sum(axis=1)
    payable = np.minimum(subsidy, total_cap)
    safe_total = np.where(total_cap > 0, total_cap, 1)
    pay = _largest_remainder(payable[:, None] * caps / safe_total[:, None], payable)
    counts -= pay
    counts[rows, top] -= subsidy - payable

    if np.any(counts <= 0):
        raise CoderError("cdf construction produced a non-positive count")
    cdf = np.zeros((n, ALPHABET_SIZE + 1), dtype=np.int64)
    np.cumsum(counts, axis=1, out=cdf[:, 1:])
    return cdf


def _largest_remainder(scaled: np.ndarray, target) -> np.ndarray:
    """Round rows of nonnegative reals to integers summing to target."""
    counts = np.floor(scaled).astype(np.int64)
    frac = scaled - counts
    deficit = np.asarray(target) - counts.sum(axis=1)
    cols = np.broadcast_to(np.arange(scaled.shape[1]), scaled.shape)
    order = np.lexsort((cols, -frac), axis=1)
    take = np.arange(scaled.shape[1])[None, :] < deficit[:, None]
    bump = np.zeros_like(counts)
    np.put_along_axis(bump, order, take.astype(np.int64), axis=1)
    return counts + bump


def build_cdf(mu_frac: float, sigma: float) -> np.ndarray:
    """Single quantized cdf row (cumulative counts, length 129)."""
    return build_cdf_batch(np.array([mu_frac]), np.array([sigma]))[0]


def validate_cdf(cdf: np.ndarray) -> None:
    if cdf.ndim != 1 or cdf[0] != 0 or cdf[-1] != PROB_TOTAL:
        raise CoderError("cdf must start at 0 and end at PROB_TOTAL")
    if np.any(np.diff(cdf) < 1):
        raise CoderError("cdf must be strictly increasing (min count 1)")


class _Encoder:
    """32-bit low/range state with LZMA-style carry resolution."""

    def __init__(self):
        self.low = 0
        self.range = _MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def _shift_low(self):
        if self.low < 0xFF000000 or self.low > _MASK32:
            carry = self.low >> 32
            self.out.append((self.cache + carry) & 0xFF)
            for _ in range(self.cache_size - 1):
                self.out.append((0xFF + carry) & 0xFF)
            self.cache = (self.low >> 24) & 0xFF
            self.cache_size = 0
        self.cache_size += 1
        self.low = (self.low << 8) & _MASK32

    def encode(self, cum_lo: int, cum_hi: int):
        r = self.range >> 16
        self.low += r * cum_lo
        self.range = r * (cum_hi - cum_lo)
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()

    def flush(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        return bytes(self.out)


class _Decoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.range = _MASK32
        self.code = 0
        for _ in range(5):
            self.code = ((self.code << 8) | self._next_byte()) & _MASK32

    def _next_byte(self) -> int:
        if self.pos >= len(self.data):
            raise DecodeError("bitstream exhausted (truncated stream)")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def decode(self, cdf: np.ndarray) -> int:
        r = self.range >> 16
        value = self.code // r
        if value >= PROB_TOTAL:
            value = PROB_TOTAL - 1
        idx = int(np.searchsorted(cdf, value, side="right")) - 1
        cum_lo = int(cdf[idx])
        cum_hi = int(cdf[idx + 1])
        self.code -= r * cum_lo
        self.range = r * (cum_hi - cum_lo)
        while self.range < _TOP:
            self.code = ((self.code << 8) | self._next_byte()) & _MASK32
            self.range <<= 8
        return idx


def encode_symbols(symbols: Sequence[int], cdfs: np.ndarray) -> bytes:
    """Encode symbols (values in [SYMBOL_MIN, SYMBOL_MAX]) under per-symbol cdfs.

    cdfs has shape [n, ALPHABET_SIZE + 1]; row i is the quantized cdf of
    symbol i.  A single row may be passed for a shared model.
    """
    symbols = np.asarray(symbols, dtype=np.int64)
    cdfs = np.asarray(cdfs, dtype=np.int64)
    if cdfs.ndim == 1:
        cdfs = np.broadcast_to(cdfs, (symbols.size, cdfs.size))
    if cdfs.shape[0] != symbols.size:
        raise CoderError(f"{symbols.size} symbols but {cdfs.shape[0]} cdfs")
    if symbols.size and (symbols.min() < SYMBOL_MIN or symbols.max() > SYMBOL_MAX):
        raise CoderError("symbol outside the coder alphabet; clamp before encoding")
    enc = _Encoder()
    for i in range(symbols.size):
        row = cdfs[i]
        idx = int(symbols[i]) - SYMBOL_MIN
        enc.encode(int(row[idx]), int(row[idx + 1]))
    return enc.flush()


def decode_symbols(data: bytes, cdfs: np.ndarray) -> np.ndarray:
    """Exact inverse of encode_symbols; cdfs must match the encoder's order."""
    cdfs = np.asarray(cdfs, dtype=np.int64)
    if cdfs.ndim == 1:
        raise CoderError("decode_symbols needs one cdf row per symbol")
    n = cdfs.shape[0]
    if len(data) < 5:
        raise DecodeError(f"stream of {len(data)} bytes is shorter than the coder flush")
    dec = _Decoder(data)
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = dec.decode(cdfs[i]) + SYMBOL_MIN
    return out


def quantized_bits(symbols: Sequence[int], cdfs: np.ndarray) -> float:
    """Information content sum(-log2 count/PROB_TOTAL) under the quantized cdfs."""
    symbols = np.asarray(symbols, dtype=np.int64)
    cdfs = np.asarray(cdfs, dtype=np.int64)
    if cdfs.ndim == 1:
        cdfs = np.broadcast_to(cdfs, (symbols.size, cdfs.size))
    idx = symbols - SYMBOL_MIN
    rows = np.arange(symbols.size)
    counts = cdfs[rows, idx + 1] - cdfs[rows, idx]
    return float(np.sum(-np.log2(counts / PROB_TOTAL)))
