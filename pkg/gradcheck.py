"""Central finite-difference verification of reverse-mode gradients."""

from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from tensor import Tensor, backward, parameter


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def _check_eps(eps: float):
    if not 0.0 < eps <= 1e-2:
        raise ValueError(f"grad_check eps must be in (0, 1e-2], got {eps}")


def _scalar(output: Tensor) -> float:
    if output.data.size != 1:
        raise ValueError(
            f"grad_check needs a scalar builder output, got shape {output.shape}"
        )
    return float(output.data.reshape(-1)[0])


def _select_entries(
    params: Sequence[Tensor], max_checks: Optional[int], seed: int
) -> List[Tuple[int, int]]:
    entries = [(pi, idx) for pi, p in enumerate(params) for idx in range(p.size)]
    if max_checks is None or len(entries) <= max_checks:
        return entries
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(len(entries), size=max_checks, replace=False))
    return [entries[i] for i in chosen]


def grad_check_parameters(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    max_checks: Optional[int] = None,
    seed: int = 0,
) -> float:
    """
    Compare analytic gradients of `loss_fn()` w.r.t. `params` against central
    differences. Parameters are perturbed by swapping in fresh arrays and are
    restored afterwards. Returns the maximum relative error over the checked
    entries (all entries, or `max_checks` sampled with `seed`).
    """
    _check_eps(eps)
    loss = loss_fn()
    _scalar(loss)
    for p in params:
        p.grad = None
    backward(loss)
    analytic = [
        p.grad if p.grad is not None else np.zeros_like(p.data) for p in params
    ]

    worst = 0.0
    for pi, idx in _select_entries(params, max_checks, seed):
        p = params[pi]
        original = p.data
        try:
            bumped = original.copy()
            bumped.reshape(-1)[idx] += eps
            p.data = bumped
            f_plus = _scalar(loss_fn())
            bumped = original.copy()
            bumped.reshape(-1)[idx] -= eps
            p.data = bumped
            f_minus = _scalar(loss_fn())
        finally:
            p.data = original
        numeric = (f_plus - f_minus) / (2.0 * eps)
        worst = max(worst, relative_error(float(analytic[pi].reshape(-1)[idx]), numeric))
    return worst


def grad_check(
    builder: Callable[..., Tensor],
    inputs: Sequence,
    eps: float = 1e-5,
    max_checks: Optional[int] = None,
    seed: int = 0,
) -> float:
    """
    Max relative error between backward() and central differences for a
    scalar-valued `builder(*tensors)` over every entry of `inputs`.
    """
    leaves = [parameter(x.data if isinstance(x, Tensor) else x) for x in inputs]
    return grad_check_parameters(
        lambda: builder(*leaves), leaves, eps=eps, max_checks=max_checks, seed=seed
    )
