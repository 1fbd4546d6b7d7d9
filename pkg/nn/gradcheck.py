"""
Central finite-difference gradient checking (run in float64)
"""
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np

from nn.tensor import GradTape, Tensor


def numerical_gradient(fn: Callable[[], float], array: np.ndarray, step: float = 1e-5,
                       indices: Optional[Iterable[Tuple[int, ...]]] = None) -> Dict[Tuple[int, ...], float]:
    """Central differences of a scalar function w.r.t. entries of ``array`` (perturbed in place)."""
    if indices is None:
        indices = list(np.ndindex(*array.shape))
    result = {}
    for index in indices:
        original = array[index]
        array[index] = original + step
        plus = fn()
        array[index] = original - step
        minus = fn()
        array[index] = original
        result[index] = (plus - minus) / (2.0 * step)
    return result


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(analytic))


def check_gradients(
    loss_fn: Callable[[], Tensor],
    tensors: Dict[str, Tensor],
    step: float = 1e-5,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> List[Tuple[str, Tuple[int, ...], float, float, float]]:
    """
    Compare tape gradients of ``loss_fn()`` with central differences for every named tensor.
    Returns (name, index, analytic, numeric, relative error) per checked entry.
    ``max_entries`` samples a random subset of each tensor's entries.
    """
    for t in tensors.values():
        t.zero_grad()
    with GradTape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic = {name: t.grad.copy() for name, t in tensors.items()}

    def scalar() -> float:
        return float(loss_fn().data)

    rng = np.random.default_rng(seed)
    report = []
    for name, t in tensors.items():
        indices = list(np.ndindex(*t.shape))
        if max_entries is not None and len(indices) > max_entries:
            picks = rng.choice(len(indices), size=max_entries, replace=False)
            indices = [indices[i] for i in sorted(picks)]
        numeric = numerical_gradient(scalar, t.data, step=step, indices=indices)
        for index, value in numeric.items():
            a = float(analytic[name][index])
            report.append((name, index, a, value, relative_error(a, value)))
    return report
