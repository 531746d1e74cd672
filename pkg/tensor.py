"""
Dense float64 tensors with reverse-mode automatic differentiation.

Every op takes Tensors and returns a new Tensor. When any input requires a
gradient, the result records its parents and a closure that maps the output
gradient to one gradient per parent; `backward` walks that graph once in
reverse topological order and accumulates contributions across fan-out.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tensor:
    """
    Immutable value plus graph bookkeeping.

    data:          float64 ndarray, row-major
    requires_grad: True for trainable leaves and every node derived from one
    grad:          filled in by backward() for requires_grad nodes
    """

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        parents: Tuple["Tensor", ...] = (),
        backward_fn: Optional[BackwardFn] = None,
        op: str = "leaf",
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents = parents
        self._backward_fn = backward_fn
        self.op = op

    @classmethod
    def from_op(
        cls,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward_fn: BackwardFn,
        op: str,
    ) -> "Tensor":
        """Build an op result, attaching graph edges only when a parent needs them"""
        if not any(p.requires_grad for p in parents):
            return cls(data, op=op)
        return cls(
            data,
            requires_grad=True,
            parents=tuple(parents),
            backward_fn=backward_fn,
            op=op,
        )

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __neg__(self):
        return neg(self)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def parameter(data: ArrayLike) -> Tensor:
    """Trainable leaf"""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, op="param")


@dataclass(frozen=True)
class ConvSpec:
    filter_count: int
    kernel_size: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.filter_count < 1:
            raise ValueError(f"filter_count must be positive, got {self.filter_count}")
        if self.kernel_size < 1:
            raise ValueError(f"kernel_size must be positive, got {self.kernel_size}")
        if self.stride < 1:
            raise ValueError(f"stride must be positive, got {self.stride}")
        if self.padding < 0:
            raise ValueError(f"padding must be non-negative, got {self.padding}")

    def output_extent(self, extent: int) -> int:
        out = (extent + 2 * self.padding - self.kernel_size) // self.stride + 1
        if extent + 2 * self.padding < self.kernel_size or out < 1:
            raise ValueError(
                f"conv output extent {out} < 1 for input extent {extent}, "
                f"kernel {self.kernel_size}, stride {self.stride}, padding {self.padding}"
            )
        return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Element-wise arithmetic and reductions
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor.from_op(out, (a, b), backward_fn, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor.from_op(out, (a, b), backward_fn, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def backward_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor.from_op(out, (a, b), backward_fn, "mul")


def neg(a: Tensor) -> Tensor:
    return Tensor.from_op(-a.data, (a,), lambda g: (-g,), "neg")


def log(a: Tensor) -> Tensor:
    x = a.data
    return Tensor.from_op(np.log(x), (a,), lambda g: (g / x,), "log")


def clip(a: Tensor, low: float, high: float) -> Tensor:
    """Clamp to [low, high]; gradient passes only where the input was inside"""
    x = a.data
    inside = (x >= low) & (x <= high)
    return Tensor.from_op(
        np.clip(x, low, high), (a,), lambda g: (g * inside,), "clip"
    )


def reduce_sum(a: Tensor, axis=None) -> Tensor:
    x = a.data
    out = x.sum(axis=axis)

    def backward_fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor.from_op(out, (a,), backward_fn, "reduce_sum")


def reduce_mean(a: Tensor, axis=None) -> Tensor:
    x = a.data
    count = x.size if axis is None else np.prod([x.shape[i] for i in np.atleast_1d(axis)])
    out = x.mean(axis=axis)

    def backward_fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return Tensor.from_op(out, (a,), backward_fn, "reduce_mean")


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    original = a.shape
    out = a.data.reshape(shape)
    return Tensor.from_op(out, (a,), lambda g: (g.reshape(original),), "reshape")


def flatten(a: Tensor) -> Tensor:
    """Collapse every axis after the batch axis"""
    return reshape(a, (a.shape[0], -1))


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


def conv2d(input: Tensor, kernels: Tensor, bias: Tensor, spec: ConvSpec) -> Tensor:
    """Cross-correlation (no kernel flip) with zero padding and per-filter bias"""
    x = input.data
    w = kernels.data
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(
            f"conv2d expects input [B,C,H,W] and kernels [F,C,K,K], got {x.shape} and {w.shape}"
        )
    B, C, H, W = x.shape
    F, kc, kh, kw = w.shape
    if kc != C or kh != kw:
        raise ValueError(
            f"conv2d shape mismatch: input {x.shape} vs kernels {w.shape}"
        )
    if kh != spec.kernel_size or F != spec.filter_count:
        raise ValueError(
            f"conv2d kernels {w.shape} disagree with spec "
            f"(filters={spec.filter_count}, kernel={spec.kernel_size})"
        )
    if bias.shape != (F,):
        raise ValueError(f"conv2d bias shape {bias.shape} does not match {F} filters")

    K, s, p = spec.kernel_size, spec.stride, spec.padding
    Ho, Wo = spec.output_extent(H), spec.output_extent(W)
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    # (B, C, Ho, Wo, K, K) read-only view
    windows = sliding_window_view(xp, (K, K), axis=(2, 3))[:, :, ::s, ::s][:, :, :Ho, :Wo]

    out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3]))  # (B, Ho, Wo, F)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + bias.data[None, :, None, None]

    def backward_fn(g):
        grad_kernels = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        grad_bias = g.sum(axis=(0, 2, 3))
        cols = np.tensordot(g, w, axes=([1], [0]))  # (B, Ho, Wo, C, K, K)
        grad_padded = np.zeros_like(xp)
        for i in range(K):
            for j in range(K):
                grad_padded[:, :, i : i + s * Ho : s, j : j + s * Wo : s] += cols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        grad_input = grad_padded[:, :, p : p + H, p : p + W] if p else grad_padded
        return grad_input, grad_kernels, grad_bias

    return Tensor.from_op(out, (input, kernels, bias), backward_fn, "conv2d")


def maxpool2d(input: Tensor, window: int) -> Tensor:
    """Non-overlapping max pool; ties route the gradient to the first cell in row-major order"""
    x = input.data
    if window < 1:
        raise ValueError(f"pool window must be positive, got {window}")
    if x.ndim != 4:
        raise ValueError(f"maxpool2d expects [B,C,H,W], got {x.shape}")
    B, C, H, W = x.shape
    if H % window or W % window:
        raise ValueError(
            f"maxpool2d extents {H}x{W} are not divisible by window {window}"
        )
    Ho, Wo = H // window, W // window
    blocks = (
        x.reshape(B, C, Ho, window, Wo, window)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(B, C, Ho, Wo, window * window)
    )
    argmax = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]

    def backward_fn(g):
        grad_blocks = np.zeros_like(blocks)
        np.put_along_axis(grad_blocks, argmax[..., None], g[..., None], axis=-1)
        grad_input = (
            grad_blocks.reshape(B, C, Ho, Wo, window, window)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(B, C, H, W)
        )
        return (grad_input,)

    return Tensor.from_op(out, (input,), backward_fn, "maxpool2d")


def global_avg_pool2d(input: Tensor) -> Tensor:
    x = input.data
    if x.ndim != 4:
        raise ValueError(f"global_avg_pool2d expects [B,C,H,W], got {x.shape}")
    B, C, H, W = x.shape
    out = x.mean(axis=(2, 3))

    def backward_fn(g):
        return (np.broadcast_to(g[:, :, None, None] / (H * W), x.shape).copy(),)

    return Tensor.from_op(out, (input,), backward_fn, "global_avg_pool2d")


def affine(input: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    x, w = input.data, weight.data
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(
            f"affine dimension mismatch: input {x.shape} vs weight {w.shape}"
        )
    if bias.shape != (w.shape[1],):
        raise ValueError(
            f"affine bias shape {bias.shape} does not match weight {w.shape}"
        )
    out = x @ w + bias.data

    def backward_fn(g):
        return g @ w.T, x.T @ g, g.sum(axis=0)

    return Tensor.from_op(out, (input, weight, bias), backward_fn, "affine")


def relu(input: Tensor) -> Tensor:
    x = input.data
    mask = x > 0
    return Tensor.from_op(np.where(mask, x, 0.0), (input,), lambda g: (g * mask,), "relu")


def sigmoid(input: Tensor) -> Tensor:
    x = input.data
    # exp of a non-positive argument in both branches
    z = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return Tensor.from_op(out, (input,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softmax(input: Tensor) -> Tensor:
    """Softmax over the last axis"""
    x = input.data
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ValueError(f"softmax needs a last axis of extent >= 1, got shape {x.shape}")
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    out = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return Tensor.from_op(out, (input,), backward_fn, "softmax")


ACTIVATIONS: Dict[str, Callable[[Tensor], Tensor]] = {
    "relu": relu,
    "sigmoid": sigmoid,
    "softmax": softmax,
}


def activation(kind: str, input: Tensor) -> Tensor:
    if kind not in ACTIVATIONS:
        raise ValueError(
            f"unknown activation '{kind}', expected one of {sorted(ACTIVATIONS)}"
        )
    return ACTIVATIONS[kind](input)


@dataclass
class RunningStats:
    """Per-channel batch statistics accumulated in training mode for inference"""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1
    batches_seen: int = field(default=0)

    @classmethod
    def for_channels(cls, channels: int, momentum: float = 0.1) -> "RunningStats":
        return cls(np.zeros(channels), np.ones(channels), momentum)

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray, count: int):
        unbiased = batch_var * count / (count - 1) if count > 1 else batch_var
        self.mean = (1.0 - self.momentum) * self.mean + self.momentum * batch_mean
        self.var = (1.0 - self.momentum) * self.var + self.momentum * unbiased
        self.batches_seen += 1


def batchnorm2d(
    input: Tensor,
    gamma: Tensor,
    beta: Tensor,
    eps: float = 1e-5,
    training: bool = True,
    running: Optional[RunningStats] = None,
) -> Tensor:
    """
    Per-channel standardization over batch and spatial axes, then scale and shift.

    In training mode the batch statistics are used (and folded into `running`
    when given); in inference mode `running` supplies them.
    """
    if eps <= 0:
        raise ValueError(f"batchnorm eps must be > 0, got {eps}")
    x = input.data
    if x.ndim != 4:
        raise ValueError(f"batchnorm2d expects [B,C,H,W], got {x.shape}")
    B, C, H, W = x.shape
    count = B * H * W
    if count < 1:
        raise ValueError(f"batchnorm2d needs B*H*W >= 1, got shape {x.shape}")
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ValueError(
            f"batchnorm2d gamma {gamma.shape} / beta {beta.shape} do not match {C} channels"
        )

    if training:
        mu = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        if running is not None:
            running.update(mu, var, count)
    else:
        if running is None:
            raise ValueError("batchnorm2d inference mode needs running statistics")
        mu, var = running.mean, running.var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu[None, :, None, None]) * inv_std[None, :, None, None]
    g_ = gamma.data[None, :, None, None]
    out = g_ * xhat + beta.data[None, :, None, None]

    def backward_fn(g):
        grad_gamma = (g * xhat).sum(axis=(0, 2, 3))
        grad_beta = g.sum(axis=(0, 2, 3))
        dxhat = g * g_
        if not training:
            return dxhat * inv_std[None, :, None, None], grad_gamma, grad_beta
        grad_input = (inv_std[None, :, None, None] / count) * (
            count * dxhat
            - dxhat.sum(axis=(0, 2, 3), keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        )
        return grad_input, grad_gamma, grad_beta

    return Tensor.from_op(out, (input, gamma, beta), backward_fn, "batchnorm2d")


# ---------------------------------------------------------------------------
# Reverse pass
# ---------------------------------------------------------------------------


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> Dict[Tensor, np.ndarray]:
    """
    Reverse-mode sweep from a scalar loss.

    Sets `.grad` on every requires_grad node reachable from `loss` and returns
    the same gradients keyed by node.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}

    order = _topological_order(loss)
    pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    grads: Dict[Tensor, np.ndarray] = {}

    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            g = np.zeros_like(node.data)
        node.grad = g
        grads[node] = g
        if node._backward_fn is None:
            continue
        for parent, parent_grad in zip(node._parents, node._backward_fn(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            if parent_grad.shape != parent.shape:
                raise ValueError(
                    f"{node.op} produced gradient {parent_grad.shape} for parent {parent.shape}"
                )
            if id(parent) in pending:
                pending[id(parent)] = pending[id(parent)] + parent_grad
            else:
                pending[id(parent)] = parent_grad
    return grads
