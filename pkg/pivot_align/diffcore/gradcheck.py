"""Central finite-difference validation of taped gradients."""
import logging
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from pivot_align.diffcore.tensor import Tape, Tensor, backward

_logger = logging.getLogger(__name__)


def numeric_grad(fn: Callable[[], Tensor], param: Tensor, eps: float = 1e-5, indices: Optional[np.ndarray] = None):
    """Estimate d fn() / d param by central differences, perturbing ``param`` in place.

    Only the flat positions in ``indices`` are estimated (all of them by default); the rest are left at zero.
    """
    flat = param.data.reshape(-1)
    grad = np.zeros_like(flat)
    positions = np.arange(flat.size) if indices is None else indices
    for i in positions:
        original = flat[i]
        flat[i] = original + eps
        plus = fn().item()
        flat[i] = original - eps
        minus = fn().item()
        flat[i] = original
        grad[i] = (plus - minus) / (2 * eps)
    return grad.reshape(param.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute difference scaled by the larger of the two gradients' max magnitudes."""
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)), 1e-8)
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale


def check_gradients(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    max_elements: Optional[int] = None,
    seed: int = 0,
) -> Dict[str, float]:
    """Compare taped gradients of the scalar ``fn()`` against central differences for each of ``params``.

    Args:
        fn: rebuilds the loss from the current parameter values on every call.
        params: leaf tensors to differentiate; they must require gradients.
        eps: finite-difference step.
        max_elements: if set, only this many randomly chosen elements of each parameter are compared.
        seed: controls that subsample.

    Returns:
        Relative error per parameter, keyed by name (or position when unnamed).
    """
    for p in params:
        p.grad = None
    with Tape():
        loss = fn()
    backward(loss)

    rng = np.random.default_rng(seed)
    errors: Dict[str, float] = {}
    for position, p in enumerate(params):
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        indices = None
        if max_elements is not None and p.size > max_elements:
            indices = np.sort(rng.choice(p.size, size=max_elements, replace=False))
        numeric = numeric_grad(fn, p, eps=eps, indices=indices)
        if indices is not None:
            analytic = analytic.reshape(-1)[indices]
            numeric = numeric.reshape(-1)[indices]
        key = p.name or str(position)
        errors[key] = relative_error(analytic, numeric)
        _logger.debug(f'gradcheck {key}: relative error {errors[key]:.3e}')
    return errors
