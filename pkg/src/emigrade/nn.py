"""Small numpy neural-network engine.

Layers are plain functions in the usual ``forward -> (out, cache)`` /
``backward(grad, cache)`` style. Every function accepts either a single
example (``[C, H, W]`` or ``[N]``) or a batch with a leading batch axis.
A :class:`Network` strings them together for a fixed sequential chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LAYER_KINDS = ("conv2d", "maxpool", "relu", "flatten", "dense", "dropout", "softmax")


class ShapeError(ValueError):
    """Raised when tensor shapes are inconsistent with a layer."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel_size: int = 0
    stride: int = 1
    padding: int = 0
    out: int = 0  # out_channels for conv2d, out_units for dense
    rate: float = 0.0  # dropout only

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("conv2d", "maxpool"):
            if self.kernel_size < 1 or self.stride < 1 or self.padding < 0:
                raise ValueError(f"invalid window parameters in {self}")
        if self.kind in ("conv2d", "dense") and self.out < 1:
            raise ValueError(f"{self.kind} needs a positive output size")
        if self.kind == "dropout" and not 0.0 <= self.rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")

    @property
    def has_params(self) -> bool:
        return self.kind in ("conv2d", "dense")


def conv2d(out_channels: int, kernel_size: int, stride: int = 1, padding: int = 0) -> LayerSpec:
    return LayerSpec("conv2d", kernel_size, stride, padding, out_channels)


def maxpool(kernel_size: int, stride: int) -> LayerSpec:
    return LayerSpec("maxpool", kernel_size, stride)


def dense(out_units: int) -> LayerSpec:
    return LayerSpec("dense", out=out_units)


def relu_layer() -> LayerSpec:
    return LayerSpec("relu")


def flatten_layer() -> LayerSpec:
    return LayerSpec("flatten")


def dropout_layer(rate: float) -> LayerSpec:
    return LayerSpec("dropout", rate=rate)


def softmax_layer() -> LayerSpec:
    return LayerSpec("softmax")


def window_out(size: int, kernel: int, stride: int, pad: int = 0) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def output_shape(spec: LayerSpec, in_shape: Sequence[int]) -> tuple[int, ...]:
    """Shape of one example after ``spec``, given the example's input shape."""
    in_shape = tuple(in_shape)
    if spec.kind in ("conv2d", "maxpool"):
        if len(in_shape) != 3:
            raise ShapeError(f"{spec.kind} expects [C, H, W], got {in_shape}")
        c, h, w = in_shape
        pad = spec.padding if spec.kind == "conv2d" else 0
        ho = window_out(h, spec.kernel_size, spec.stride, pad)
        wo = window_out(w, spec.kernel_size, spec.stride, pad)
        if ho < 1 or wo < 1:
            raise ShapeError(f"{spec.kind} k={spec.kernel_size} s={spec.stride} "
                             f"leaves no valid output position on {in_shape}")
        return (spec.out if spec.kind == "conv2d" else c, ho, wo)
    if spec.kind == "flatten":
        return (int(np.prod(in_shape)),)
    if spec.kind == "dense":
        if len(in_shape) != 1:
            raise ShapeError(f"dense expects a flat input, got {in_shape}")
        return (spec.out,)
    return in_shape


@dataclass
class LayerState:
    """Trainable parameters of one conv/dense layer plus its Adam moments."""

    weights: np.ndarray
    biases: np.ndarray
    adam_m: list[np.ndarray] = field(default_factory=list)
    adam_v: list[np.ndarray] = field(default_factory=list)
    step_count: int = 0

    def __post_init__(self):
        if not self.adam_m:
            self.adam_m = [np.zeros_like(p) for p in self.params]
        if not self.adam_v:
            self.adam_v = [np.zeros_like(p) for p in self.params]

    @property
    def params(self) -> list[np.ndarray]:
        return [self.weights, self.biases]

    def astype(self, dtype) -> LayerState:
        return LayerState(self.weights.astype(dtype), self.biases.astype(dtype))


def init_layer(spec: LayerSpec, in_shape: Sequence[int], rng: np.random.Generator,
               dtype=np.float32) -> LayerState:
    """He-normal weights (variance 2 / fan_in), zero biases."""
    if spec.kind == "conv2d":
        fan_in = in_shape[0] * spec.kernel_size ** 2
        shape = (spec.out, in_shape[0], spec.kernel_size, spec.kernel_size)
    elif spec.kind == "dense":
        fan_in = in_shape[0]
        shape = (spec.out, in_shape[0])
    else:
        raise ValueError(f"{spec.kind} has no parameters")
    w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
    return LayerState(w.astype(dtype), np.zeros(spec.out, dtype=dtype))


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    l2_lambda: float = 0.0
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be non-negative")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in 64 unsigned bits")


# ---------------------------------------------------------------- conv2d

def _windows(x: np.ndarray, k: int, s: int) -> np.ndarray:
    # (N, C, H, W) -> read-only view (N, C, Ho, Wo, k, k)
    return sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]


def conv2d_forward(x: np.ndarray, state: LayerState, spec: LayerSpec):
    """Cross-correlation of ``x`` with the layer filters, plus bias."""
    if spec.kind != "conv2d":
        raise ValueError("conv2d_forward needs a conv2d spec")
    batched = x.ndim == 4
    if not batched:
        x = x[None]
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects [C, H, W] or [N, C, H, W], got {x.shape}")
    n, c, h, w = x.shape
    o, wc, k, _ = state.weights.shape
    if c != wc or k != spec.kernel_size:
        raise ShapeError(f"input {x.shape[1:]} does not match weights {state.weights.shape}")
    ho, wo = output_shape(spec, (c, h, w))[1:]
    p = spec.padding
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    cols = _windows(xp, k, spec.stride).transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    out = cols @ state.weights.reshape(o, -1).T + state.biases
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    cache = (cols, x.shape, spec, batched)
    return (out if batched else out[0]), cache


def conv2d_backward(grad_out: np.ndarray, cache, state: LayerState, need_input_grad: bool = True):
    """Returns ``(grad_input, grad_weights, grad_biases)``.

    ``grad_input`` is None when ``need_input_grad`` is false (first layer).
    """
    cols, x_shape, spec, batched = cache
    if not batched:
        grad_out = grad_out[None]
    n, c, h, w = x_shape
    o, _, k, _ = state.weights.shape
    ho, wo = output_shape(spec, (c, h, w))[1:]
    if grad_out.shape != (n, o, ho, wo):
        raise ShapeError(f"grad_out {grad_out.shape} does not match forward output {(n, o, ho, wo)}")
    g = grad_out.transpose(0, 2, 3, 1).reshape(-1, o)
    grad_w = (g.T @ cols).reshape(state.weights.shape)
    grad_b = g.sum(axis=0)
    if not need_input_grad:
        return None, grad_w, grad_b

    s, p = spec.stride, spec.padding
    dcols = (g @ state.weights.reshape(o, -1)).reshape(n, ho, wo, c, k, k)
    dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=grad_out.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[..., i, j].transpose(0, 3, 1, 2)
    dx = dxp[:, :, p:p + h, p:p + w] if p else dxp
    return (dx if batched else dx[0]), grad_w, grad_b


# ---------------------------------------------------------------- maxpool

def maxpool_forward(x: np.ndarray, spec: LayerSpec):
    if spec.kind != "maxpool":
        raise ValueError("maxpool_forward needs a maxpool spec")
    batched = x.ndim == 4
    if not batched:
        x = x[None]
    n, c, h, w = x.shape
    _, ho, wo = output_shape(spec, (c, h, w))
    k = spec.kernel_size
    win = _windows(x, k, spec.stride).reshape(n, c, ho, wo, k * k)
    # argmax returns the first maximum, i.e. the first in row-major window order
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    cache = (idx, x.shape, spec, batched)
    return (out if batched else out[0]), cache


def maxpool_backward(grad_out: np.ndarray, cache) -> np.ndarray:
    idx, x_shape, spec, batched = cache
    if not batched:
        grad_out = grad_out[None]
    if grad_out.shape != idx.shape:
        raise ShapeError(f"grad_out {grad_out.shape} does not match pooled shape {idx.shape}")
    _, _, ho, wo = idx.shape
    k, s = spec.kernel_size, spec.stride
    dx = np.zeros(x_shape, dtype=grad_out.dtype)
    for i in range(k):
        for j in range(k):
            routed = np.where(idx == i * k + j, grad_out, 0)
            dx[:, :, i:i + s * ho:s, j:j + s * wo:s] += routed
    return dx if batched else dx[0]


# ---------------------------------------------------------------- relu

def relu(x: np.ndarray):
    return np.maximum(x, 0), x > 0


def relu_backward(grad_out: np.ndarray, cache) -> np.ndarray:
    return np.where(cache, grad_out, 0).astype(grad_out.dtype, copy=False)


# ---------------------------------------------------------------- dense

def dense_forward(x: np.ndarray, state: LayerState, spec: LayerSpec):
    if spec.kind != "dense":
        raise ValueError("dense_forward needs a dense spec")
    batched = x.ndim == 2
    if not batched:
        x = x[None]
    if x.ndim != 2 or x.shape[1] != state.weights.shape[1]:
        raise ShapeError(f"dense input {x.shape} does not match weights {state.weights.shape}")
    out = x @ state.weights.T + state.biases
    return (out if batched else out[0]), (x, batched)


def dense_backward(grad_out: np.ndarray, cache, state: LayerState):
    x, batched = cache
    if not batched:
        grad_out = grad_out[None]
    if grad_out.shape != (x.shape[0], state.weights.shape[0]):
        raise ShapeError(f"grad_out {grad_out.shape} does not match dense output")
    dx = grad_out @ state.weights
    return (dx if batched else dx[0]), grad_out.T @ x, grad_out.sum(axis=0)


# ---------------------------------------------------------------- dropout

def dropout_forward(x: np.ndarray, spec: LayerSpec, rng: np.random.Generator | None):
    """Inverted dropout; identity when ``rng`` is None (inference)."""
    if rng is None or spec.rate == 0:
        return x, None
    mask = (rng.random(x.shape) >= spec.rate).astype(x.dtype) / x.dtype.type(1 - spec.rate)
    return x * mask, mask


def dropout_backward(grad_out: np.ndarray, cache) -> np.ndarray:
    return grad_out if cache is None else grad_out * cache


# ---------------------------------------------------------------- softmax / loss

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, label):
    """Fused softmax + cross-entropy.

    For a single logit vector returns ``(loss, probs, probs - onehot)``.
    For a batch ``[N, K]`` with ``N`` labels the loss is the batch mean and
    the gradient is divided by ``N`` accordingly.
    """
    logits = np.asarray(logits)
    k = logits.shape[-1]
    if k < 2:
        raise ValueError("need at least two classes")
    labels = np.atleast_1d(np.asarray(label))
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label out of range for {k} classes: {label}")
    z = logits - logits.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    log_p = z - log_norm
    probs = np.exp(log_p)
    if logits.ndim == 1:
        grad = probs.copy()
        grad[labels[0]] -= 1
        return float(-log_p[labels[0]]), probs, grad
    n = logits.shape[0]
    if labels.shape != (n,):
        raise ShapeError(f"{n} logit rows but {labels.shape} labels")
    rows = np.arange(n)
    loss = float(-log_p[rows, labels].mean())
    grad = probs.copy()
    grad[rows, labels] -= 1
    grad /= n
    return loss, probs, grad


# ---------------------------------------------------------------- optimisation

def adam_step(state: LayerState, grads: Sequence[np.ndarray], config: TrainConfig) -> LayerState:
    """One bias-corrected Adam update, in place. Returns ``state``."""
    b1, b2 = config.beta1, config.beta2
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for p, g, m, v in zip(state.params, grads, state.adam_m, state.adam_v):
        if g.shape != p.shape:
            raise ShapeError(f"gradient {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p -= (config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + config.epsilon)).astype(p.dtype)
    return state


def l2_penalty(states: Sequence[LayerState], lam: float):
    """``lam * sum(w**2)`` over weights (biases excluded) and its gradients ``2*lam*w``."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if lam == 0:
        return 0.0, [np.zeros_like(s.weights) for s in states]
    loss = lam * sum(float(np.sum(s.weights.astype(np.float64) ** 2)) for s in states)
    return loss, [(2 * lam) * s.weights for s in states]


# ---------------------------------------------------------------- network

class Network:
    """A sequential chain of layers with one parameter state per conv/dense layer.

    ``forward`` stops before a trailing softmax so that training can use the
    fused loss; :meth:`predict_proba` applies it.
    """

    def __init__(self, layers: Sequence[LayerSpec], input_shape: Sequence[int],
                 states: Sequence[LayerState]):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.states = list(states)
        self.shapes = walk_shapes(self.layers, self.input_shape)
        expected = self.param_shapes()
        got = [tuple(p.shape) for s in self.states for p in s.params]
        if got != expected:
            raise ShapeError(f"parameter shapes {got} do not match architecture {expected}")

    @classmethod
    def initialise(cls, layers, input_shape, rng: np.random.Generator, dtype=np.float32) -> Network:
        states = []
        shape = tuple(input_shape)
        for spec in layers:
            if spec.has_params:
                states.append(init_layer(spec, shape, rng, dtype))
            shape = output_shape(spec, shape)
        return cls(layers, input_shape, states)

    def param_shapes(self) -> list[tuple[int, ...]]:
        shapes = []
        in_shape = self.input_shape
        for spec, out in zip(self.layers, self.shapes):
            if spec.kind == "conv2d":
                shapes += [(spec.out, in_shape[0], spec.kernel_size, spec.kernel_size), (spec.out,)]
            elif spec.kind == "dense":
                shapes += [(spec.out, in_shape[0]), (spec.out,)]
            in_shape = out
        return shapes

    @property
    def dtype(self):
        return self.states[0].weights.dtype if self.states else np.float32

    def astype(self, dtype) -> Network:
        return Network(self.layers, self.input_shape, [s.astype(dtype) for s in self.states])

    def forward(self, x: np.ndarray, rng: np.random.Generator | None = None):
        """Batched forward to the logits. ``rng`` enables dropout (training)."""
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"network expects [N, {self.input_shape}], got {x.shape}")
        caches = []
        it = iter(self.states)
        for spec in self.layers:
            if spec.kind == "softmax":
                caches.append(None)
                continue
            if spec.kind == "conv2d":
                x, cache = conv2d_forward(x, next(it), spec)
            elif spec.kind == "dense":
                x, cache = dense_forward(x, next(it), spec)
            elif spec.kind == "maxpool":
                x, cache = maxpool_forward(x, spec)
            elif spec.kind == "relu":
                x, cache = relu(x)
            elif spec.kind == "dropout":
                x, cache = dropout_forward(x, spec, rng)
            else:
                cache = x.shape
                x = x.reshape(x.shape[0], -1)
            caches.append(cache)
        return x, caches

    def backward(self, grad: np.ndarray, caches) -> list[list[np.ndarray]]:
        """Gradients ``[[grad_w, grad_b], ...]`` aligned with ``self.states``."""
        grads = []
        si = len(self.states)
        first_param = next((i for i, s in enumerate(self.layers) if s.has_params), None)
        for i in range(len(self.layers) - 1, -1, -1):
            spec, cache = self.layers[i], caches[i]
            if spec.kind == "softmax":
                continue
            if spec.kind == "conv2d":
                si -= 1
                grad, gw, gb = conv2d_backward(grad, cache, self.states[si],
                                               need_input_grad=i != first_param)
                grads.append([gw, gb])
            elif spec.kind == "dense":
                si -= 1
                grad, gw, gb = dense_backward(grad, cache, self.states[si])
                grads.append([gw, gb])
            elif spec.kind == "maxpool":
                grad = maxpool_backward(grad, cache)
            elif spec.kind == "relu":
                grad = relu_backward(grad, cache)
            elif spec.kind == "dropout":
                grad = dropout_backward(grad, cache)
            else:
                grad = grad.reshape(cache)
            if grad is None:
                break
        grads.reverse()
        return grads

    def input_gradient(self, grad: np.ndarray, caches) -> np.ndarray:
        """Backpropagate to the input (used by gradient checks)."""
        for i in range(len(self.layers) - 1, -1, -1):
            spec, cache = self.layers[i], caches[i]
            si = sum(s.has_params for s in self.layers[:i])
            if spec.kind == "conv2d":
                grad = conv2d_backward(grad, cache, self.states[si])[0]
            elif spec.kind == "dense":
                grad = dense_backward(grad, cache, self.states[si])[0]
            elif spec.kind == "maxpool":
                grad = maxpool_backward(grad, cache)
            elif spec.kind == "relu":
                grad = relu_backward(grad, cache)
            elif spec.kind == "dropout":
                grad = dropout_backward(grad, cache)
            elif spec.kind == "flatten":
                grad = grad.reshape(cache)
        return grad

    def predict_proba(self, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
        out = []
        for start in range(0, len(x), batch_size):
            logits, _ = self.forward(x[start:start + batch_size])
            out.append(softmax(logits.astype(np.float64)))
        return np.concatenate(out) if out else np.zeros((0, self.shapes[-1][0]))


def walk_shapes(layers: Sequence[LayerSpec], input_shape: Sequence[int]) -> list[tuple[int, ...]]:
    """Per-layer output shapes of one example."""
    shapes = []
    shape = tuple(input_shape)
    for spec in layers:
        shape = output_shape(spec, shape)
        shapes.append(shape)
    return shapes
