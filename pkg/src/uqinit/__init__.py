"""Near-optimal uniform quantization initialization (scale and real-valued zero-point)."""

from .core import (
    Quadratic,
    QuantizedRow,
    QuantParams,
    WeightedRow,
    degenerate_params,
    minmax_init,
    minmax_plus_init,
    quant_loss,
    quantize_row,
    quantize_scalar,
    uniform_optimal_params,
)
from .layer import (
    BitBudget,
    GroupSpec,
    LayerProblem,
    QuantizedLayer,
    average_bits,
    hessian_from_activations,
    quantize_layer,
)
from .scale_search import (
    InitResult,
    SearchConfig,
    brute_force_oracle,
    int_search_init,
    int_search_zp_perspective,
    neuqi_init,
    scale_candidates,
)
from .zeropoint import (
    SweepResult,
    TransitionEvent,
    neuqi_zero,
    optimal_zero_exact,
    optimal_zero_smoothed,
    optimal_zero_window,
    sweep_min,
)

__version__ = "0.1.0"
