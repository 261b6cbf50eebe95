"""Uniform quantization primitives and closed-form initializers.

A k-bit uniform grid has levels ``q_i = scale * (i - zero_point)`` for
``i = 0 .. 2**k - 1``.  The zero-point is kept in grid-index units and is
not required to be an integer.  Rounding is round-half-to-even everywhere
(``np.rint``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MIN_BITS = 1
MAX_BITS = 8


def check_bits(bits: int) -> int:
    if isinstance(bits, bool) or int(bits) != bits:
        raise ValueError(f"bits must be an integer, got {bits!r}")
    bits = int(bits)
    if not MIN_BITS <= bits <= MAX_BITS:
        raise ValueError(f"bits out of range: {bits} (allowed {MIN_BITS}..{MAX_BITS})")
    return bits


@dataclass(frozen=True)
class QuantParams:
    """One uniform grid: ``scale * (i - zero_point)`` for ``i < 2**bits``."""

    scale: float
    zero_point: float
    bits: int

    def __post_init__(self):
        object.__setattr__(self, "bits", check_bits(self.bits))
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "zero_point", float(self.zero_point))
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")
        if not np.isfinite(self.zero_point):
            raise ValueError(f"zero_point must be finite, got {self.zero_point}")

    @property
    def levels(self) -> int:
        return 1 << self.bits

    @property
    def qmax(self) -> int:
        return self.levels - 1

    def grid(self) -> np.ndarray:
        return self.scale * (np.arange(self.levels, dtype=np.float64) - self.zero_point)


@dataclass(frozen=True, eq=False)
class WeightedRow:
    """A parameter vector with one nonnegative importance weight per entry."""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if values.size < 1:
            raise ValueError("row must contain at least one value")
        if values.shape != weights.shape:
            raise ValueError(
                f"values and weights differ in length: {values.size} vs {weights.size}"
            )
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(weights))):
            raise ValueError("row entries must be finite")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        values.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def _trusted(cls, values: np.ndarray, weights: np.ndarray) -> "WeightedRow":
        # skips validation; inputs must already satisfy the invariants
        row = object.__new__(cls)
        object.__setattr__(row, "values", values)
        object.__setattr__(row, "weights", weights)
        return row

    @classmethod
    def unweighted(cls, values) -> "WeightedRow":
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.ones_like(values))

    def __len__(self):
        return self.values.size

    @property
    def lo(self) -> float:
        return float(self.values.min())

    @property
    def hi(self) -> float:
        return float(self.values.max())

    @property
    def is_degenerate(self) -> bool:
        return self.hi == self.lo

    def sorted_descending(self) -> "WeightedRow":
        """Same row with entries ordered by decreasing value (loss is order-free)."""
        order = np.argsort(-self.values, kind="stable")
        return WeightedRow._trusted(self.values[order], self.weights[order])

    def require_weight(self):
        if not np.any(self.weights > 0):
            raise ValueError("row has no positive weight")


@dataclass(frozen=True, eq=False)
class QuantizedRow:
    codes: np.ndarray
    params: QuantParams

    def dequantize(self) -> np.ndarray:
        return self.params.scale * (self.codes.astype(np.float64) - self.params.zero_point)


@dataclass(frozen=True)
class Quadratic:
    """``a2 * z**2 + a1 * z + a0``."""

    a2: float = 0.0
    a1: float = 0.0
    a0: float = 0.0

    def __add__(self, other: "Quadratic") -> "Quadratic":
        return Quadratic(self.a2 + other.a2, self.a1 + other.a1, self.a0 + other.a0)

    def __sub__(self, other: "Quadratic") -> "Quadratic":
        return Quadratic(self.a2 - other.a2, self.a1 - other.a1, self.a0 - other.a0)

    def __call__(self, z):
        return (self.a2 * z + self.a1) * z + self.a0

    def as_array(self) -> np.ndarray:
        return np.array([self.a2, self.a1, self.a0], dtype=np.float64)

    @classmethod
    def square(cls, weight: float, offset: float) -> "Quadratic":
        """``weight * (z + offset)**2``."""
        return cls(weight, 2.0 * weight * offset, weight * offset * offset)


def quantize_codes(x, params: QuantParams) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    q = np.rint(x / params.scale + params.zero_point)
    return np.clip(q, 0, params.qmax).astype(np.int64)


def fake_quantize(x, params: QuantParams) -> np.ndarray:
    """Quantize then dequantize, elementwise."""
    codes = quantize_codes(x, params)
    return params.scale * (codes - params.zero_point)


def quantize_scalar(x: float, params: QuantParams) -> tuple[int, float]:
    code = int(quantize_codes(x, params))
    return code, params.scale * (code - params.zero_point)


def quantize_row(row, params: QuantParams) -> QuantizedRow:
    return QuantizedRow(quantize_codes(np.asarray(row, dtype=np.float64).reshape(-1), params), params)


def quant_loss(row: WeightedRow, params: QuantParams) -> float:
    """Weighted squared quantization error ``sum(h * (Q(w) - w)**2)``."""
    err = fake_quantize(row.values, params) - row.values
    return float(np.dot(row.weights, err * err))


def degenerate_params(value: float, bits: int) -> QuantParams:
    """Parameters for a constant row: level 0 lands exactly on ``value``."""
    return QuantParams(1.0, -float(value), bits)


def minmax_init(row: WeightedRow, bits: int) -> QuantParams:
    bits = check_bits(bits)
    if row.is_degenerate:
        return degenerate_params(row.lo, bits)
    scale = (row.hi - row.lo) / ((1 << bits) - 1)
    return QuantParams(scale, -np.rint(row.lo / scale), bits)


def minmax_plus_init(row: WeightedRow, bits: int) -> QuantParams:
    """Min-Max with the range mapped onto the half-step-extended grid span.

    The zero-point is still rounded to an integer.
    """
    bits = check_bits(bits)
    if row.is_degenerate:
        return degenerate_params(row.lo, bits)
    scale = (row.hi - row.lo) / (1 << bits)
    return QuantParams(scale, -np.rint(row.lo / scale + 0.5), bits)


def uniform_optimal_params(a: float, b: float, bits: int) -> tuple[QuantParams, float]:
    """MSE-optimal grid for values drawn uniformly from ``[a, b]``.

    Returns the parameters and the expected per-sample squared error
    ``scale**2 / 12``.
    """
    bits = check_bits(bits)
    if not b > a:
        raise ValueError(f"need b > a, got a={a}, b={b}")
    scale = (b - a) / (1 << bits)
    return QuantParams(scale, -(a / scale + 0.5), bits), scale * scale / 12.0
