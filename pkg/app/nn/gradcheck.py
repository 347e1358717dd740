"""Central finite-difference validation of analytic gradients."""

import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from ..core.errors import ConfigError, NumericError

logger = logging.getLogger(__name__)


class GradCheckReport(BaseModel):
    """Outcome of one gradient check."""

    max_rel_error: float
    worst_entry: str
    checked: int
    skipped: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / (abs(analytic) + abs(numeric) + 1e-8)


def _as_tuple(value: Any) -> Tuple[np.ndarray, ...]:
    return value if isinstance(value, tuple) else (value,)


def _pattern(layer: Any) -> List[np.ndarray]:
    if hasattr(layer, "activation_pattern"):
        return list(layer.activation_pattern())
    last = getattr(layer, "last_pattern", None)
    return [last] if last is not None else []


def _same_pattern(a: List[np.ndarray], b: List[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(
    layer: Any,
    input_shapes: Sequence[Tuple[int, ...]],
    tolerance: float = 1e-4,
    step: float = 1e-4,
    atol: float = 1e-8,
    seed: int = 0,
    forward_kwargs: Optional[Dict[str, Any]] = None,
) -> GradCheckReport:
    """Compare ``layer``'s analytic gradients with central differences.

    The scalar objective is ``sum(forward(*inputs) * R)`` for a fixed random
    ``R``. Every input entry and every learnable entry is perturbed by
    ``+-step``. Entries whose perturbation flips a ReLU gate are skipped
    (the objective is not differentiable there) and counted in ``skipped``.
    Entries whose analytic and numeric values differ by at most ``atol`` are
    roundoff-level agreements and contribute no error.
    """
    kwargs = dict(forward_kwargs or {})
    params = layer.parameters()
    for name, value in params.items():
        if value.dtype != np.float64:
            raise ConfigError(f"grad_check requires float64 learnables, '{name}' is {value.dtype}")

    rng = np.random.default_rng(seed)
    inputs = [rng.standard_normal(shape) for shape in input_shapes]

    def objective() -> Tuple[float, List[np.ndarray]]:
        out = layer.forward(*inputs, mode="train", **kwargs)
        return float(np.sum(out * projection)), _pattern(layer)

    out = layer.forward(*inputs, mode="train", **kwargs)
    projection = rng.standard_normal(out.shape)
    input_grads = _as_tuple(layer.backward(projection))
    param_grads = {name: np.array(g) for name, g in layer.grads.items()}

    for g in list(input_grads) + list(param_grads.values()):
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite analytic gradient in {getattr(layer, 'name', layer)}")

    targets: List[Tuple[str, np.ndarray, np.ndarray]] = [
        (f"input[{i}]", inputs[i], input_grads[i]) for i in range(len(inputs))
    ]
    targets += [(name, params[name], param_grads[name]) for name in params if name in param_grads]

    worst, worst_entry, checked, skipped = 0.0, "", 0, 0
    for label, array, analytic in targets:
        flat = array.reshape(-1)
        flat_grad = analytic.reshape(-1)
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + step
            plus, plus_pattern = objective()
            flat[idx] = original - step
            minus, minus_pattern = objective()
            flat[idx] = original
            if not _same_pattern(plus_pattern, minus_pattern):
                skipped += 1
                continue
            numeric = (plus - minus) / (2.0 * step)
            if not np.isfinite(numeric):
                raise NumericError(f"non-finite numeric gradient at {label}[{idx}]")
            analytic_value = float(flat_grad[idx])
            if abs(analytic_value - numeric) <= atol:
                err = 0.0
            else:
                err = relative_error(analytic_value, numeric)
            checked += 1
            if err > worst:
                worst, worst_entry = err, f"{label}[{idx}]"

    if hasattr(layer, "clear_cache"):
        layer.clear_cache()
    logger.debug("grad_check: max rel error %.3e at %s (%d skipped)", worst, worst_entry, skipped)
    return GradCheckReport(
        max_rel_error=worst,
        worst_entry=worst_entry,
        checked=checked,
        skipped=skipped,
        tolerance=tolerance,
    )
