import logging
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from pivot_align.diffcore.tensor import Tensor
from pivot_align.exceptions import ConfigError, GradientError

_logger = logging.getLogger(__name__)


class ParamStore:
    """Ordered collection of named trainable tensors with their Adam state.

    Moment buffers are created lazily on the first update of each parameter; the step counter is shared by every
    parameter and only ever increases. Each parameter remembers the step its moments started from, so bias
    correction restarts with fresh moments while ``t`` keeps counting.
    """

    def __init__(self) -> None:
        self._params: Dict[str, Tensor] = {}
        self._m: Dict[str, np.ndarray] = {}
        self._v: Dict[str, np.ndarray] = {}
        self._start: Dict[str, int] = {}
        self.t = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        """Register a new parameter initialised to ``value``."""
        if name in self._params:
            raise ConfigError(f'Duplicate parameter name {name}')
        param = Tensor(np.array(value, copy=True), requires_grad=True, name=name)
        self._params[name] = param
        return param

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: object) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> List[str]:
        """Parameter names in registration order."""
        return list(self._params)

    def items(self) -> Iterable[Tuple[str, Tensor]]:
        """(name, tensor) pairs in registration order."""
        return self._params.items()

    def zero_grad(self, names: Optional[Iterable[str]] = None) -> None:
        """Reset gradient buffers to zero; parameters unreachable from the next loss keep a zero gradient."""
        for name in self._params if names is None else names:
            self._params[name].zero_grad()

    def moments(self, name: str) -> Tuple[Optional[np.ndarray], Optional[np.ndarray]]:
        """Return the (first, second) Adam moments for a parameter, None before its first update."""
        return self._m.get(name), self._v.get(name)

    def moment_start(self, name: str) -> int:
        """Value of ``t`` just before the current moments of ``name`` received their first update."""
        return self._start.get(name, 0)

    def set_moments(self, name: str, m: np.ndarray, v: np.ndarray, start: int = 0) -> None:
        """Restore Adam moments, e.g. from a checkpoint."""
        shape = self._params[name].shape
        if m.shape != shape or v.shape != shape:
            raise GradientError(f'Adam moments for {name} have shapes {m.shape}/{v.shape}, parameter is {shape}')
        self._m[name] = m.astype(self._params[name].dtype, copy=True)
        self._v[name] = v.astype(self._params[name].dtype, copy=True)
        self._start[name] = start

    def reset_optimizer(self) -> None:
        """Drop every Adam moment. The step counter is left alone."""
        self._m.clear()
        self._v.clear()
        self._start.clear()

    def snapshot(self) -> Dict[str, np.ndarray]:
        """Copy of every parameter value, keyed by name."""
        return {name: p.data.copy() for name, p in self._params.items()}

    def restore(self, values: Dict[str, np.ndarray]) -> None:
        """Overwrite parameter values in place from a :meth:`snapshot`."""
        for name, value in values.items():
            if self._params[name].shape != value.shape:
                raise GradientError(f'{name}: stored shape {value.shape} != parameter shape {self._params[name].shape}')
            self._params[name].data[...] = value


def adam_step(
    store: ParamStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    names: Optional[Iterable[str]] = None,
) -> ParamStore:
    """Apply one bias-corrected Adam update to ``names`` (all parameters by default) and zero their gradients.

    Raises:
        GradientError: if a parameter to be updated has no gradient buffer.
    """
    selected = store.names() if names is None else list(names)
    missing = [name for name in selected if store[name].grad is None]
    if missing:
        raise GradientError(f'No gradient buffer for parameter(s): {", ".join(missing)}')

    store.t += 1
    for name in selected:
        param = store[name]
        grad = param.grad
        m = store._m.get(name)
        v = store._v.get(name)
        if m is None or v is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
            store._start[name] = store.t - 1
        k = store.t - store._start.get(name, 0)
        correction1 = 1.0 - beta1**k
        correction2 = 1.0 - beta2**k
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        store._m[name] = m
        store._v[name] = v
        m_hat = m / correction1
        v_hat = v / correction2
        param.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype, copy=False)
        param.zero_grad()
    return store


def global_grad_norm(store: ParamStore, names: Optional[Iterable[str]] = None) -> float:
    """Euclidean norm of all gradient buffers taken together."""
    total = 0.0
    for name in store.names() if names is None else names:
        grad = store[name].grad
        if grad is not None:
            total += float(np.sum(grad.astype(np.float64) ** 2))
    return float(np.sqrt(total))


def clip_grad_norm(store: ParamStore, max_norm: float = 5.0, names: Optional[Iterable[str]] = None) -> float:
    """Rescale gradients in place so their global norm is at most ``max_norm``; returns the norm before clipping."""
    selected = store.names() if names is None else list(names)
    norm = global_grad_norm(store, selected)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        _logger.debug(f'Clipping gradient norm {norm:.4f} to {max_norm}')
        for name in selected:
            if store[name].grad is not None:
                store[name].grad *= scale
    return norm
