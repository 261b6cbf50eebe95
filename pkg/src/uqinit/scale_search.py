"""Scale search: coarse-to-fine search with real zero-points, integer zero-point baselines, brute-force oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import (
    Quadratic,
    QuantParams,
    WeightedRow,
    check_bits,
    degenerate_params,
    quant_loss,
)
from .zeropoint import EventBatch, SweepResult, exact_zero, neuqi_zero, sweep_min

ZeroSolver = Callable[[WeightedRow, float, int], SweepResult]


@dataclass(frozen=True)
class SearchConfig:
    T: int = 2048
    T_c: int = 64
    window_coarse_steps: int = 1

    def __post_init__(self):
        for name in ("T", "T_c", "window_coarse_steps"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.T_c > self.T:
            raise ValueError(f"T_c ({self.T_c}) must not exceed T ({self.T})")
        if self.T % self.T_c:
            raise ValueError(f"T ({self.T}) must be divisible by T_c ({self.T_c})")

    @property
    def ratio(self) -> int:
        return self.T // self.T_c


@dataclass(frozen=True)
class InitResult:
    params: QuantParams
    loss: float
    evaluations: int
    coarse_loss: Optional[float] = None


def minmax_scale(row: WeightedRow, bits: int) -> float:
    return (row.hi - row.lo) / ((1 << check_bits(bits)) - 1)


def _scale_at(upper: float, index, T: int):
    # i / T is formed first so that coarse and fine grids share bit-identical points
    return upper * (np.asarray(index, dtype=np.float64) / T)


def scale_candidates(row: WeightedRow, bits: int, T: int) -> np.ndarray:
    """``T`` evenly spaced scales in ``(0, minmax_scale]``; the last one is the Min-Max scale."""
    if T < 1:
        raise ValueError(f"T must be positive, got {T}")
    if row.is_degenerate:
        raise ValueError("degenerate row (max == min) has no scale candidates")
    return _scale_at(minmax_scale(row, bits), np.arange(1, T + 1), T)


def _degenerate_result(row: WeightedRow, bits: int) -> InitResult:
    params = degenerate_params(row.lo, bits)
    return InitResult(params, quant_loss(row, params), 0)


def _best_over(row, bits, scales, solver: ZeroSolver):
    best = None
    for s in scales:
        res = solver(row, float(s), bits)
        if best is None or res.loss_star < best[2]:
            best = (float(s), res.z_star, res.loss_star)
    return best


def neuqi_init(
    row: WeightedRow,
    bits: int,
    cfg: SearchConfig = SearchConfig(),
    exact: bool = False,
) -> InitResult:
    """Coarse-to-fine scale search with a per-scale zero-point solve.

    The coarse pass scores every ``T / T_c``-th candidate.  The fine pass
    scores ``window_coarse_steps`` coarse steps of fine candidates on either
    side of the coarse winner, the winner included; the window is shifted to
    stay inside ``1..T`` so its size is fixed.  ``exact`` swaps the
    approximate zero-point solver for the full sweep.
    """
    bits = check_bits(bits)
    if row.is_degenerate:
        return _degenerate_result(row, bits)
    row.require_weight()
    solver = exact_zero if exact else neuqi_zero
    upper = minmax_scale(row, bits)
    r = cfg.ratio
    original, row = row, row.sorted_descending()

    coarse_idx = r * np.arange(1, cfg.T_c + 1)
    best_i, best_loss = None, math.inf
    for i in coarse_idx:
        res = solver(row, float(_scale_at(upper, i, cfg.T)), bits)
        if res.loss_star < best_loss:
            best_i, best_loss = int(i), res.loss_star
    coarse_loss = best_loss

    size = min(cfg.T, 2 * r * cfg.window_coarse_steps + 1)
    start = min(max(best_i - r * cfg.window_coarse_steps, 1), cfg.T - size + 1)
    s, z, _ = _best_over(row, bits, _scale_at(upper, np.arange(start, start + size), cfg.T), solver)
    params = QuantParams(s, z, bits)
    return InitResult(params, quant_loss(original, params), cfg.T_c + size, coarse_loss)


def exhaustive_init(row: WeightedRow, bits: int, T: int = 2048, exact: bool = True) -> InitResult:
    """Zero-point solve at every candidate scale (no coarse-to-fine)."""
    bits = check_bits(bits)
    if row.is_degenerate:
        return _degenerate_result(row, bits)
    row.require_weight()
    solver = exact_zero if exact else neuqi_zero
    s, z, _ = _best_over(row.sorted_descending(), bits, scale_candidates(row, bits, T), solver)
    params = QuantParams(s, z, bits)
    return InitResult(params, quant_loss(row, params), T)


def integer_zero_losses(row: WeightedRow, scale: float, bits: int) -> np.ndarray:
    """Loss for each integer zero-point ``0 .. 2**k - 1`` at a fixed scale."""
    qmax = (1 << bits) - 1
    z = np.arange(qmax + 1, dtype=np.float64)
    base = row.values / scale
    codes = np.clip(np.rint(base[:, None] + z[None, :]), 0, qmax)
    err = scale * (codes - z[None, :]) - row.values[:, None]
    return row.weights @ (err * err)


def int_search_init(row: WeightedRow, bits: int, cfg: SearchConfig = SearchConfig()) -> InitResult:
    """Exhaustive search over ``S_T`` x integer zero-points, weights ``h = H_ii``."""
    bits = check_bits(bits)
    if row.is_degenerate:
        return _degenerate_result(row, bits)
    row.require_weight()
    qmax = (1 << bits) - 1
    zs = np.arange(qmax + 1, dtype=np.float64)
    scales = scale_candidates(row, bits, cfg.T)
    w, h = row.values, row.weights

    # blocks of scales keep the (block, n, levels) temporaries small
    block = max(1, 2**20 // (w.size * zs.size))
    losses = np.empty((scales.size, zs.size))
    for b in range(0, scales.size, block):
        s = scales[b : b + block, None, None]
        codes = np.clip(np.rint(w[None, :, None] / s + zs), 0, qmax)
        err = s * (codes - zs) - w[None, :, None]
        losses[b : b + block] = np.einsum("n,bnz->bz", h, err * err)

    # row-major argmin: smallest scale first, then smallest zero-point
    flat = int(np.argmin(losses))
    si, zi = divmod(flat, zs.size)
    params = QuantParams(float(scales[si]), float(zs[zi]), bits)
    return InitResult(params, quant_loss(row, params), scales.size * zs.size)


def scale_sweep_events(row: WeightedRow, bits: int, zero_point: int) -> tuple[Quadratic, EventBatch]:
    """Piecewise quadratic loss in ``s`` for a fixed integer zero-point.

    As ``s`` grows from 0, positive values step down from the top level to
    ``zero_point`` and negative values step up from level 0; each crossing
    of ``w / s + z = j + 1/2`` is one event at ``s = w / (j + 1/2 - z)``.
    """
    qmax = (1 << check_bits(bits)) - 1
    keep = (row.weights > 0) & (row.values != 0)
    w, h = row.values[keep], row.weights[keep]
    z = float(zero_point)

    start = np.where(w > 0, qmax, 0).astype(np.float64)
    c = start - z
    initial = Quadratic(float(np.dot(h, c * c)), float(-2.0 * np.dot(h, w * c)), float(np.dot(h, w * w)))

    j = np.arange(qmax, dtype=np.float64)
    denom = j + 0.5 - z
    with np.errstate(divide="ignore"):
        t = w[:, None] / denom[None, :]
    valid = np.isfinite(t) & (t > 0)
    # crossing j + 1/2 moves a positive value from j + 1 to j, a negative one from j to j + 1
    pos = (w > 0)[:, None]
    old = np.where(pos, j + 1.0, j) - z
    new = np.where(pos, j, j + 1.0) - z
    old, new = np.broadcast_to(old, t.shape), np.broadcast_to(new, t.shape)
    hh = np.broadcast_to(h[:, None], t.shape)
    ww = np.broadcast_to(w[:, None], t.shape)
    coef = np.stack([hh * (new * new - old * old), -2.0 * hh * ww * (new - old), np.zeros(t.shape)])
    return initial, EventBatch(t[valid], coef[:, valid])


def int_search_zp_perspective(row: WeightedRow, bits: int) -> InitResult:
    """Integer zero-point search with a continuous scale, via one sweep in ``s`` per zero-point."""
    bits = check_bits(bits)
    if row.is_degenerate:
        return _degenerate_result(row, bits)
    row.require_weight()
    fallback = float(np.abs(row.values).max())
    best = None
    for z in range(1 << bits):
        initial, events = scale_sweep_events(row, bits, z)
        res = sweep_min(initial, events, 0.0, math.inf)
        s = res.z_star
        if not s > 0:
            # value at s -> 0 equals the constant tail beyond the last breakpoint
            s = float(events.t.max()) if len(events) else fallback
        params = QuantParams(s, float(z), bits)
        loss = quant_loss(row, params)
        if best is None or loss < best.loss:
            best = InitResult(params, loss, 1 << bits)
    return best


def dense_zero_scan(row: WeightedRow, scale: float, bits: int, z) -> tuple[float, float]:
    """Brute-force minimum of the loss over the given zero-points at one scale.

    Works in normalized units, so the loss matches the sweep solvers'.
    Ties go to the first (smallest) zero-point.
    """
    qmax = (1 << check_bits(bits)) - 1
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    keep = row.weights > 0
    x, h = row.values[keep] / scale, row.weights[keep] * (scale * scale)
    chunk = max(1, min(z.size, 2**19 // max(x.size, 1)))
    u = np.empty((x.size, chunk))
    r = np.empty_like(u)
    best_z, best_v = math.nan, math.inf
    for b in range(0, z.size, chunk):
        zz = z[b : b + chunk]
        uu, rr = u[:, : zz.size], r[:, : zz.size]
        np.add(x[:, None], zz, out=uu)
        np.rint(uu, out=rr)
        np.clip(rr, 0, qmax, out=rr)
        np.subtract(uu, rr, out=rr)
        np.multiply(rr, rr, out=rr)
        v = h @ rr
        i = int(np.argmin(v))
        if v[i] < best_v:
            best_z, best_v = float(zz[i]), float(v[i])
    return best_z, best_v


def brute_force_oracle(row: WeightedRow, bits: int, s_grid: int, z_grid: int) -> InitResult:
    """Dense scan over ``S_{s_grid}`` x ``z_grid`` evenly spaced zero-points per scale.

    The zero-point range at scale ``s`` is ``[-2**k - m, 2**k + m]`` with
    ``m = max|w| / s``, which covers every transition point.
    """
    bits = check_bits(bits)
    if row.is_degenerate:
        return _degenerate_result(row, bits)
    levels = 1 << bits
    wmax = float(np.abs(row.values).max())
    best = None
    for s in scale_candidates(row, bits, s_grid):
        m = wmax / s
        z, v = dense_zero_scan(row, float(s), bits, np.linspace(-levels - m, levels + m, z_grid))
        if best is None or v < best[2]:
            best = (float(s), z, v)
    params = QuantParams(best[0], best[1], bits)
    return InitResult(params, quant_loss(row, params), s_grid * z_grid)
