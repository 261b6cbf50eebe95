"""Synthetic-row benchmark comparing search variants by loss and wall time."""

from __future__ import annotations

import time
from typing import Sequence

import numpy as np

from .core import WeightedRow, quant_loss
from .layer import METHODS
from .scale_search import SearchConfig

# bench-only aliases for the ablation variants
VARIANTS = {
    "full": "neuqi_exhaustive",
    "no_ctf": "neuqi_no_ctf",
}


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def synthetic_rows(n: int, rows: int, seed: int) -> list[WeightedRow]:
    """Gaussian weights with log-normal importances, a stand-in for activation norms."""
    rng = make_rng(seed)
    out = []
    for _ in range(rows):
        w = rng.standard_normal(n)
        h = np.exp(rng.standard_normal(n))
        out.append(WeightedRow(w, h))
    return out


def ratio(value: float, base: float) -> float:
    """``value / base`` with 0/0 read as 1."""
    if base == 0:
        return 1.0 if value == 0 else float("inf")
    return value / base


def resolve(variant: str) -> str:
    name = VARIANTS.get(variant, variant)
    if name not in METHODS:
        raise ValueError(f"unknown variant {variant!r}")
    return name


def run_bench(
    n: int,
    bits: int,
    variants: Sequence[str],
    repeat: int = 1,
    seed: int = 0,
    rows: int = 4,
    cfg: SearchConfig = SearchConfig(),
    baseline: str = "full",
) -> list[dict]:
    """Time every variant on the same seeded rows.

    One record per (repeat, variant); ratios are taken against ``baseline``
    within the same repeat.
    """
    if baseline not in variants:
        raise ValueError(f"baseline variant {baseline!r} not in {list(variants)}")
    if repeat < 1:
        raise ValueError("repeat must be >= 1")
    methods = {v: resolve(v) for v in variants}
    data = synthetic_rows(n, rows, seed)

    records = []
    for rep in range(repeat):
        results = {}
        for v in variants:
            init = METHODS[methods[v]]
            t0 = time.perf_counter()
            found = [init(row, bits, cfg) for row in data]
            elapsed = time.perf_counter() - t0
            loss = float(sum(quant_loss(row, r.params) for row, r in zip(data, found)))
            results[v] = (loss, elapsed)
        base_loss, base_time = results[baseline]
        for v in variants:
            loss, elapsed = results[v]
            records.append(
                {
                    "command": "bench",
                    "variant": v,
                    "method": methods[v],
                    "repeat": rep,
                    "n": n,
                    "rows": rows,
                    "bits": bits,
                    "loss": loss,
                    "wall_time": elapsed,
                    "rel_loss": ratio(loss, base_loss),
                    "rel_time": ratio(elapsed, base_time),
                    "T": cfg.T,
                    "Tc": cfg.T_c,
                    "seed": seed,
                }
            )
    return records
