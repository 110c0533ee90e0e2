"""Two's-complement fixed point over the ring Z_{2^64}."""
from __future__ import annotations

import numpy as np

RING_BITS = 64
DEFAULT_SCALE_BITS = 12
_LIMIT = float(2**63)
# float accumulation of |W||x| is within this relative error of the exact sum
_BOUND_SLACK = 1e-9


class FixedPointOverflow(ArithmeticError):
    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message if layer is None else f"layer {layer}: {message}")
        self.layer = layer


def encode(x, scale_bits: int = DEFAULT_SCALE_BITS) -> np.ndarray:
    """Round reals to the nearest multiple of ``2**-scale_bits``."""
    scaled = np.rint(np.asarray(x, dtype=np.float64) * (1 << scale_bits))
    if not np.all(np.isfinite(scaled)) or np.any(np.abs(scaled) >= _LIMIT):
        raise FixedPointOverflow(f"value does not fit a 64-bit ring at scale 2^{scale_bits}")
    return scaled.astype(np.int64)


def decode(q, scale_bits: int = DEFAULT_SCALE_BITS) -> np.ndarray:
    return np.asarray(q, dtype=np.int64).astype(np.float64) / (1 << scale_bits)


def to_ring(q) -> np.ndarray:
    return np.asarray(q, dtype=np.int64).view(np.uint64)


def from_ring(u) -> np.ndarray:
    return np.asarray(u, dtype=np.uint64).view(np.int64)


def truncate(q, scale_bits: int) -> np.ndarray:
    """Arithmetic right shift: rounds toward minus infinity."""
    return np.right_shift(np.asarray(q, dtype=np.int64), scale_bits)


def ring_matmul(a, b) -> np.ndarray:
    """Product modulo 2**64 (uint64 arithmetic wraps)."""
    with np.errstate(over="ignore"):
        return np.matmul(np.asarray(a, dtype=np.uint64), np.asarray(b, dtype=np.uint64))


def check_matmul_range(a, b, layer: int | None = None) -> None:
    """Raise if ``a @ b`` on signed values could leave the int64 range."""
    bound = np.matmul(np.abs(np.asarray(a, dtype=np.float64)), np.abs(np.asarray(b, dtype=np.float64)))
    if bound.size and bound.max() >= _LIMIT * (1 - _BOUND_SLACK):
        raise FixedPointOverflow("accumulator exceeds the 64-bit ring", layer)
