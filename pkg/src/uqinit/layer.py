"""Layer-level quantization: grouping, per-group initialization, GPTQ-style compensation."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import (
    QuantParams,
    WeightedRow,
    check_bits,
    minmax_init,
    minmax_plus_init,
    quant_loss,
)
from .scale_search import (
    InitResult,
    SearchConfig,
    exhaustive_init,
    int_search_init,
    int_search_zp_perspective,
    neuqi_init,
)

DAMP = 0.01


def _closed_form(fn):
    def init(row: WeightedRow, bits: int, cfg: SearchConfig) -> InitResult:
        params = fn(row, bits)
        return InitResult(params, quant_loss(row, params), 0)

    return init


METHODS: dict[str, Callable[[WeightedRow, int, SearchConfig], InitResult]] = {
    "minmax": _closed_form(minmax_init),
    "minmax_plus": _closed_form(minmax_plus_init),
    "int_search": int_search_init,
    "int_search_zp": lambda row, bits, cfg: int_search_zp_perspective(row, bits),
    "neuqi": neuqi_init,
    "neuqi_exact": lambda row, bits, cfg: neuqi_init(row, bits, cfg, exact=True),
    "neuqi_no_ctf": lambda row, bits, cfg: exhaustive_init(row, bits, cfg.T, exact=False),
    "neuqi_exhaustive": lambda row, bits, cfg: exhaustive_init(row, bits, cfg.T, exact=True),
}

# methods whose zero-point is a k-bit integer
INTEGER_ZERO_METHODS = frozenset({"minmax", "minmax_plus", "int_search", "int_search_zp"})


def worker_count() -> int:
    """Worker cap from ``UQINIT_THREADS`` (0 or unset means one per CPU)."""
    raw = os.environ.get("UQINIT_THREADS", "0").strip() or "0"
    n = int(raw)
    if n < 0:
        raise ValueError(f"UQINIT_THREADS must be >= 0, got {n}")
    return n or (os.cpu_count() or 1)


def _ordered_map(fn, items):
    # executor.map preserves input order, so results do not depend on the worker count
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


@dataclass(frozen=True)
class GroupSpec:
    mode: str = "channel"
    group_size: int = 128

    def __post_init__(self):
        if self.mode not in ("channel", "grouped"):
            raise ValueError(f"unknown grouping mode {self.mode!r}")
        if self.group_size < 1:
            raise ValueError(f"group_size must be positive, got {self.group_size}")

    def size_for(self, cols: int) -> int:
        if self.mode == "channel":
            return cols
        if cols % self.group_size:
            raise ValueError(f"cols ({cols}) not divisible by group size ({self.group_size})")
        return self.group_size


@dataclass(eq=False)
class LayerProblem:
    weights: np.ndarray
    hessian_diag: np.ndarray
    hessian_full: Optional[np.ndarray] = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError(f"weights must be 2-D, got shape {self.weights.shape}")
        cols = self.weights.shape[1]
        if self.hessian_full is not None:
            self.hessian_full = np.asarray(self.hessian_full, dtype=np.float64)
            if self.hessian_full.shape != (cols, cols):
                raise ValueError(f"hessian_full shape {self.hessian_full.shape} != ({cols}, {cols})")
            if not np.allclose(self.hessian_full, self.hessian_full.T, rtol=1e-6, atol=1e-12):
                raise ValueError("hessian_full is not symmetric")
        if self.hessian_diag is None:
            if self.hessian_full is None:
                raise ValueError("need hessian_diag or hessian_full")
            self.hessian_diag = np.diag(self.hessian_full).copy()
        self.hessian_diag = np.asarray(self.hessian_diag, dtype=np.float64).reshape(-1)
        if self.hessian_diag.size != cols:
            raise ValueError(f"hessian_diag length {self.hessian_diag.size} != cols {cols}")
        if np.any(self.hessian_diag < 0) or not np.all(np.isfinite(self.hessian_diag)):
            raise ValueError("hessian_diag must be finite and nonnegative")
        if self.hessian_full is not None and not np.allclose(
            np.diag(self.hessian_full), self.hessian_diag, rtol=1e-6, atol=0
        ):
            raise ValueError("hessian_diag does not match the diagonal of hessian_full")

    @classmethod
    def from_full(cls, weights, hessian_full) -> "LayerProblem":
        return cls(weights, None, hessian_full)

    @property
    def shape(self):
        return self.weights.shape


@dataclass(eq=False)
class QuantizedLayer:
    """Codes and per-(row, group) parameters.

    ``codes`` and the groups are laid out in quantization order; column
    ``i`` of that order is original column ``perm[i]``.
    """

    codes: np.ndarray
    scales: np.ndarray
    zeros: np.ndarray
    bits: int
    group_size: int
    perm: Optional[np.ndarray] = None
    evaluations: int = 0

    def __post_init__(self):
        if self.perm is None:
            self.perm = np.arange(self.codes.shape[1])

    @property
    def shape(self):
        return self.codes.shape

    def group_params(self, row: int, group: int) -> QuantParams:
        return QuantParams(self.scales[row, group], self.zeros[row, group], self.bits)

    def dequantize(self) -> np.ndarray:
        g = self.group_size
        scales = np.repeat(self.scales, g, axis=1)
        zeros = np.repeat(self.zeros, g, axis=1)
        permuted = scales * (self.codes - zeros)
        out = np.empty_like(permuted)
        out[:, self.perm] = permuted
        return out


def hessian_from_activations(X) -> tuple[np.ndarray, np.ndarray]:
    """Proxy Hessian ``X^T X / m`` of calibration activations (rows are samples)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError(f"activations must be a non-empty 2-D matrix, got shape {X.shape}")
    full = X.T @ X / X.shape[0]
    return full, np.diag(full).copy()


@dataclass(frozen=True)
class BitBudget:
    weight_bits: int
    scale_bits: int = 16
    zero_bits: int = 16
    group_size: int = 128

    @classmethod
    def for_method(cls, method: str, bits: int, group_size: int, scale_bits: int = 16) -> "BitBudget":
        zero_bits = bits if method in INTEGER_ZERO_METHODS else 16
        return cls(bits, scale_bits, zero_bits, group_size)


def average_bits(budget: BitBudget) -> float:
    """Weight bits plus per-group scale and zero-point storage, per weight."""
    return budget.weight_bits + (budget.scale_bits + budget.zero_bits) / budget.group_size


def _init_group(w, h, bits, method, cfg) -> InitResult:
    # zero-importance columns do not influence the parameters
    keep = h > 0
    if not np.any(keep):
        return METHODS["minmax"](WeightedRow(w, np.ones_like(w)), bits, cfg)
    return METHODS[method](WeightedRow(w[keep], h[keep]), bits, cfg)


def _init_params(W, hdiag, bits, g, method, cfg):
    rows, cols = W.shape
    ngroups = cols // g

    def one_row(i):
        return [_init_group(W[i, j * g : (j + 1) * g], hdiag[j * g : (j + 1) * g], bits, method, cfg)
                for j in range(ngroups)]

    results = _ordered_map(one_row, range(rows))
    scales = np.array([[r.params.scale for r in rr] for rr in results]).reshape(rows, ngroups)
    zeros = np.array([[r.params.zero_point for r in rr] for rr in results]).reshape(rows, ngroups)
    evaluations = sum(r.evaluations for rr in results for r in rr)
    return scales, zeros, evaluations


def _inverse_hessian_factor(H: np.ndarray) -> np.ndarray:
    """Upper Cholesky factor of the damped inverse Hessian."""
    H = H + DAMP * np.mean(np.diag(H)) * np.eye(H.shape[0])
    try:
        L = np.linalg.cholesky(H)
        Hinv = np.linalg.inv(L)
        Hinv = Hinv.T @ Hinv
        return np.linalg.cholesky(Hinv).T
    except np.linalg.LinAlgError as exc:
        raise ValueError("hessian_full is not positive definite after damping") from exc


def quantize_layer(
    problem: LayerProblem,
    group: GroupSpec,
    bits: int,
    method: str = "neuqi",
    cfg: SearchConfig = SearchConfig(),
    compensate: bool = False,
) -> QuantizedLayer:
    """Quantize a weight matrix per (row, group).

    Without compensation every slice is initialized with ``method`` using the
    diagonal Hessian as weights and then rounded to nearest.  With
    compensation, columns are ordered by decreasing ``diag(H)``, parameters
    are initialized on the reordered slices, and columns are rounded one at
    a time with the rounding error pushed onto the remaining columns.
    """
    bits = check_bits(bits)
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(METHODS)}")
    W = problem.weights
    rows, cols = W.shape
    g = group.size_for(cols)
    hdiag = problem.hessian_diag
    qmax = (1 << bits) - 1

    if not compensate:
        scales, zeros, evals = _init_params(W, hdiag, bits, g, method, cfg)
        s = np.repeat(scales, g, axis=1)
        z = np.repeat(zeros, g, axis=1)
        codes = np.clip(np.rint(W / s + z), 0, qmax).astype(np.int64)
        return QuantizedLayer(codes, scales, zeros, bits, g, evaluations=evals)

    if problem.hessian_full is None:
        raise ValueError("compensation requires hessian_full")
    perm = np.argsort(-hdiag, kind="stable")
    Wp = W[:, perm].copy()
    Hp = problem.hessian_full[np.ix_(perm, perm)]
    U = _inverse_hessian_factor(Hp)
    scales, zeros, evals = _init_params(Wp, hdiag[perm], bits, g, method, cfg)

    codes = np.empty((rows, cols), dtype=np.int64)
    for i in range(cols):
        s = scales[:, i // g]
        z = zeros[:, i // g]
        w = Wp[:, i]
        c = np.clip(np.rint(w / s + z), 0, qmax)
        codes[:, i] = c
        err = (w - s * (c - z)) / U[i, i]
        Wp[:, i + 1 :] -= np.outer(err, U[i, i + 1 :])
    return QuantizedLayer(codes, scales, zeros, bits, g, perm, evals)


def layer_loss(problem: LayerProblem, layer: QuantizedLayer, full: bool = False) -> float:
    """Reconstruction loss: ``sum_i H_ii * ||dW[:, i]||^2``, or the trace form with ``full``."""
    dW = layer.dequantize() - problem.weights
    if full:
        if problem.hessian_full is None:
            raise ValueError("full loss requires hessian_full")
        return float(np.einsum("ri,ij,rj->", dW, problem.hessian_full, dW))
    return float(np.dot(problem.hessian_diag, (dW * dW).sum(axis=0)))


def group_losses(problem: LayerProblem, layer: QuantizedLayer) -> np.ndarray:
    """Diagonal-Hessian loss per (row, group), in the layer's column order."""
    dW = (layer.dequantize() - problem.weights)[:, layer.perm]
    h = problem.hessian_diag[layer.perm]
    per = dW * dW * h
    rows, cols = per.shape
    return per.reshape(rows, cols // layer.group_size, layer.group_size).sum(axis=2)
