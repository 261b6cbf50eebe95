"""Zero-point optimization over piecewise quadratic losses.

With the scale fixed and values normalized to ``x = w / s`` (weights
``h = H_ii * s**2``), the loss in ``z`` is a sum of per-sample piecewise
quadratics.  Every solver here builds a stream of transition events
``(t, delta)`` and sweeps them left to right, adding each increment to a
running quadratic and minimizing it on every interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence, Union

import numpy as np

from .core import Quadratic, QuantParams, WeightedRow, check_bits, quant_loss

_SNAP = 1e-12


@dataclass(frozen=True)
class TransitionEvent:
    t: float
    delta: Quadratic


@dataclass(frozen=True, eq=False)
class EventBatch:
    """Struct-of-arrays storage for transition events.

    ``coef`` has shape ``(3, m)``: rows hold the ``a2``, ``a1`` and ``a0``
    increments.  Iterating yields :class:`TransitionEvent` objects.
    """

    t: np.ndarray
    coef: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        coef = np.asarray(self.coef, dtype=np.float64).reshape(3, -1)
        if coef.shape[1] != t.size:
            raise ValueError("event times and increments differ in length")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "coef", coef)

    @classmethod
    def empty(cls) -> "EventBatch":
        return cls(np.empty(0), np.empty((3, 0)))

    @classmethod
    def from_events(cls, events: Sequence[TransitionEvent]) -> "EventBatch":
        if not events:
            return cls.empty()
        t = [e.t for e in events]
        coef = [[e.delta.a2 for e in events], [e.delta.a1 for e in events], [e.delta.a0 for e in events]]
        return cls(np.array(t), np.array(coef))

    def __len__(self):
        return self.t.size

    def __iter__(self) -> Iterator[TransitionEvent]:
        for t, a2, a1, a0 in zip(self.t, *self.coef):
            yield TransitionEvent(float(t), Quadratic(float(a2), float(a1), float(a0)))

    def total(self) -> Quadratic:
        return Quadratic(*self.coef.sum(axis=1))


EventsLike = Union[EventBatch, Sequence[TransitionEvent]]


class SweepResult(NamedTuple):
    z_star: float
    loss_star: float


def interval_quad_min(q: Quadratic, lo: float, hi: float) -> tuple[float, float]:
    """Minimize ``q`` on ``[lo, hi]``; ties go to the smaller ``z``."""
    if lo > hi:
        raise ValueError(f"empty interval [{lo}, {hi}]")
    z, v = _interval_min(
        np.array([q.a2]), np.array([q.a1]), np.array([q.a0]), np.array([lo]), np.array([hi])
    )
    return float(z[0]), float(v[0])


def _interval_min(a2, a1, a0, left, right):
    """Vectorized per-interval minimization.

    Convex pieces use the clamped vertex.  Linear and concave pieces take the
    lower endpoint value, preferring the left one.  Constant pieces return
    the left endpoint, or 0 clipped into the interval when that is -inf.
    """
    convex = a2 > 0
    if convex.all():
        z = np.clip(-a1 / (2.0 * a2), left, right)
        return z, (a2 * z + a1) * z + a0

    z = np.empty(a2.size)
    flat = (a2 == 0) & (a1 == 0)
    other = ~(convex | flat)

    z[convex] = np.clip(-a1[convex] / (2.0 * a2[convex]), left[convex], right[convex])
    lf, rf = left[flat], right[flat]
    z[flat] = np.where(np.isfinite(lf), lf, np.clip(0.0, lf, rf))

    if np.any(other):
        lo, hi = left[other], right[other]
        b2, b1, b0 = a2[other], a1[other], a0[other]
        unbounded = ~np.isfinite(lo) | ~np.isfinite(hi)
        if np.any(unbounded):
            # linear pieces are bounded only towards their rising side
            lin = b2 == 0
            bad = unbounded & ~lin
            bad |= lin & ~np.isfinite(lo) & (b1 > 0)
            bad |= lin & ~np.isfinite(hi) & (b1 < 0)
            if np.any(bad):
                raise ValueError("quadratic is unbounded below on the interval")
        with np.errstate(invalid="ignore", over="ignore"):
            vl = (b2 * lo + b1) * lo + b0
            vr = (b2 * hi + b1) * hi + b0
        pick_left = ~np.isfinite(hi) | (np.isfinite(lo) & (vl <= vr))
        z[other] = np.where(pick_left, lo, hi)

    return z, (a2 * z + a1) * z + a0


def _as_batch(events: EventsLike) -> EventBatch:
    return events if isinstance(events, EventBatch) else EventBatch.from_events(list(events))


def sweep_min(
    initial: Quadratic,
    events: EventsLike,
    lo: float = -math.inf,
    hi: float = math.inf,
) -> SweepResult:
    """Global minimum of a piecewise quadratic given by a start piece and increments.

    ``initial`` is the function on the leftmost interval.  Crossing an event's
    breakpoint adds its increment.  The running quadratic is a prefix sum of
    the sorted increments; breakpoints outside ``[lo, hi]`` are clamped.
    Ties resolve to the smallest ``z``.
    """
    if lo > hi:
        raise ValueError(f"empty domain [{lo}, {hi}]")
    batch = _as_batch(events)
    init = initial.as_array()
    m = batch.t.size

    order = np.argsort(batch.t, kind="stable")
    t = batch.t[order]
    if math.isfinite(lo) or math.isfinite(hi):
        t = np.clip(t, lo, hi)
    deltas = batch.coef[:, order]

    coef = np.empty((3, m + 1))
    coef[:, 0] = init
    np.cumsum(deltas, axis=1, out=coef[:, 1:])
    coef[:, 1:] += init[:, None]

    # drift from the running sum must not fake curvature or slope on flat pieces
    for c in (0, 1):
        tol = _SNAP * (abs(init[c]) + np.abs(deltas[c]).sum())
        row = coef[c]
        row[np.abs(row) <= tol] = 0.0

    left = np.empty(m + 1)
    left[0] = lo
    left[1:] = t
    right = np.empty(m + 1)
    right[:m] = t
    right[m] = hi
    z, v = _interval_min(coef[0], coef[1], coef[2], left, right)
    best = int(np.argmin(v))
    # + 0.0 folds -0.0 into 0.0
    return SweepResult(float(z[best]) + 0.0, float(v[best]))


def _positive(row: WeightedRow):
    keep = row.weights > 0
    if keep.all():
        return row.values, row.weights
    return row.values[keep], row.weights[keep]


def _start_piece(x, h, level=None) -> Quadratic:
    """``sum h * (x - level + z)**2``."""
    d = x if level is None else x - level
    return Quadratic(float(h.sum()), float(2.0 * np.dot(h, d)), float(np.dot(h, d * d)))


def exact_zero_events(row: WeightedRow, bits: int) -> tuple[Quadratic, EventBatch]:
    """Start piece and all ``n * (2**k - 1)`` rounding transitions in ``z``.

    ``row`` is in scale-normalized units.  Samples with zero weight emit
    nothing.  Crossing ``t = j + 1/2 - x`` moves a sample from level ``j``
    to ``j + 1``, adding ``h * (1 + 2j - 2x - 2z)``.
    """
    qmax = (1 << check_bits(bits)) - 1
    x, h = _positive(row)
    n = x.size

    # level-major layout: for rows sorted by decreasing value each level is an
    # ascending run, which the stable sort in the sweep merges cheaply
    j = np.arange(qmax, dtype=np.float64)[:, None]
    t = (j + 0.5) - x
    coef = np.empty((3, qmax, n))
    coef[0] = 0.0
    coef[1] = -2.0 * h
    coef[2] = h * ((1.0 + 2.0 * j) - 2.0 * x)
    return _start_piece(x, h), EventBatch(t.reshape(-1), coef.reshape(3, -1))


def smoothed_zero_events(row: WeightedRow, bits: int) -> tuple[Quadratic, EventBatch]:
    """Events for the plateau surrogate: one entry and one exit per sample.

    Inside ``[-1/2 - x, 2**k - 1/2 - x]`` a sample contributes its worst-case
    rounding loss ``h / 4``; outside it contributes its clipping loss.
    """
    qmax = (1 << check_bits(bits)) - 1
    x, h = _positive(row)
    n = x.size

    t = np.empty(2 * n)
    t[:n] = -0.5 - x
    t[n:] = (qmax + 0.5) - x
    xr = x - qmax
    coef = np.empty((3, 2 * n))
    # entering the plateau drops h * (x + z)**2 for h / 4
    coef[0, :n] = -h
    coef[1, :n] = -2.0 * h * x
    coef[2, :n] = h * (0.25 - x * x)
    # leaving it picks up the top-level clipping loss h * (x - qmax + z)**2
    coef[0, n:] = h
    coef[1, n:] = 2.0 * h * xr
    coef[2, n:] = h * (xr * xr - 0.25)
    return _start_piece(x, h), EventBatch(t, coef)


def window_zero_events(row: WeightedRow, bits: int, lo: float) -> tuple[Quadratic, EventBatch]:
    """Start piece at ``lo`` plus the (at most two per sample) transitions in ``[lo, lo + 2)``.

    The start level is the one in force just right of ``lo``, so a sample
    whose transition sits exactly on ``lo`` is counted once.
    """
    qmax = (1 << check_bits(bits)) - 1
    x, h = _positive(row)

    j1 = np.ceil(lo + x - 0.5)
    initial = _start_piece(x, h, np.clip(j1, 0, qmax))

    ts, coefs = [], []
    for j in (j1, j1 + 1.0):
        ok = (j >= 0) & (j < qmax)
        jj, xx, hh = j[ok], x[ok], h[ok]
        ts.append((jj + 0.5) - xx)
        c = np.empty((3, jj.size))
        c[0] = 0.0
        c[1] = -2.0 * hh
        c[2] = hh * ((1.0 + 2.0 * jj) - 2.0 * xx)
        coefs.append(c)
    return initial, EventBatch(np.concatenate(ts), np.concatenate(coefs, axis=1))


def exact_loss_normalized(row: WeightedRow, bits: int, z) -> np.ndarray:
    """Exact loss in normalized units at one or many ``z`` (direct evaluation)."""
    qmax = (1 << check_bits(bits)) - 1
    z = np.asarray(z, dtype=np.float64)
    u = row.values[..., None] + z.reshape(-1)[None, :] if z.ndim else row.values + z
    r = u - np.clip(np.rint(u), 0, qmax)
    if z.ndim:
        return (row.weights[:, None] * r * r).sum(axis=0).reshape(z.shape)
    return np.dot(row.weights, r * r)


def smoothed_loss_normalized(row: WeightedRow, bits: int, z) -> np.ndarray:
    """Plateau surrogate evaluated directly; ``>=`` the exact loss pointwise."""
    qmax = (1 << check_bits(bits)) - 1
    z = np.asarray(z, dtype=np.float64)
    u = row.values[:, None] + z.reshape(-1)[None, :]
    per = np.where(u < -0.5, u * u, np.where(u >= qmax + 0.5, (u - qmax) ** 2, 0.25))
    return (row.weights[:, None] * per).sum(axis=0).reshape(z.shape)


def optimal_zero_exact(row: WeightedRow, bits: int) -> SweepResult:
    """Globally optimal real zero-point for a normalized row."""
    row.require_weight()
    initial, events = exact_zero_events(row, bits)
    res = sweep_min(initial, events)
    return SweepResult(res.z_star, float(exact_loss_normalized(row, bits, res.z_star)))


def optimal_zero_smoothed(row: WeightedRow, bits: int) -> SweepResult:
    """Minimizer of the plateau surrogate (``O(n log n)``)."""
    row.require_weight()
    initial, events = smoothed_zero_events(row, bits)
    return sweep_min(initial, events)


def optimal_zero_window(row: WeightedRow, bits: int, center: float) -> SweepResult:
    """Minimizer of the exact loss restricted to ``[center - 1, center + 1]``."""
    row.require_weight()
    if not math.isfinite(center):
        raise ValueError(f"center must be finite, got {center}")
    lo, hi = center - 1.0, center + 1.0
    initial, events = window_zero_events(row, bits, lo)
    res = sweep_min(initial, events, lo, hi)
    return SweepResult(res.z_star, float(exact_loss_normalized(row, bits, res.z_star)))


def normalize(row: WeightedRow, scale: float) -> WeightedRow:
    """``x = w / s`` and ``h' = h * s**2`` so losses keep their original units."""
    if not (scale > 0 and math.isfinite(scale)):
        raise ValueError(f"scale must be positive, got {scale}")
    return WeightedRow._trusted(row.values / scale, row.weights * (scale * scale))


def neuqi_zero(row: WeightedRow, scale: float, bits: int) -> SweepResult:
    """Near-optimal zero-point at a fixed scale: surrogate sweep, then a local exact sweep."""
    xrow = normalize(row, scale)
    z_smooth = optimal_zero_smoothed(xrow, bits).z_star
    z = optimal_zero_window(xrow, bits, z_smooth).z_star
    return SweepResult(z, quant_loss(row, QuantParams(scale, z, bits)))


def exact_zero(row: WeightedRow, scale: float, bits: int) -> SweepResult:
    """Optimal zero-point at a fixed scale, in original units."""
    res = optimal_zero_exact(normalize(row, scale), bits)
    return SweepResult(res.z_star, quant_loss(row, QuantParams(scale, res.z_star, bits)))
