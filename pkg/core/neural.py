"""
Dense feed-forward networks with explicit forward/backward passes and plain SGD
Backs the encoder (cognitive module), generator (descriptive module) and classifier (discriminative module)
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from utils.errors import DimensionMismatchError, DivergenceError
from utils.patterns import check_labels, require_finite

ACTIVATIONS = ("relu", "tanh", "identity")
ROLES = ("encoder", "generator", "classifier")

# (weight grad, bias grad) per layer
ParamGrads = List[Tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        weight = np.asarray(self.weight, dtype=float)
        bias = np.asarray(self.bias, dtype=float).reshape(-1)
        if weight.ndim != 2 or bias.shape[0] != weight.shape[0]:
            raise DimensionMismatchError(f"weight {weight.shape} vs bias {bias.shape}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{self.activation}'")
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "bias", bias)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True)
class ModelParams:
    """
    Layered dense-network parameters tagged with the functional role they play
    Treated as immutable: sgd_step and the helpers below always return new instances
    """
    layers: Tuple[DenseLayer, ...]
    role: str = "encoder"

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("a network needs at least one layer")
        if self.role not in ROLES:
            raise ValueError(f"unknown role '{self.role}'")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.in_dim != prev.out_dim:
                raise DimensionMismatchError(f"layer chain {prev.out_dim} -> {nxt.in_dim}")
        for layer in layers:
            require_finite(layer.weight, "weights")
            require_finite(layer.bias, "biases")
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def copy(self) -> "ModelParams":
        return ModelParams(
            layers=tuple(DenseLayer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers),
            role=self.role,
        )

    def arrays(self) -> List[np.ndarray]:
        """Weights and biases in layer order (w0, b0, w1, b1, ...)"""
        out = []
        for layer in self.layers:
            out.extend([layer.weight, layer.bias])
        return out

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(a))) for a in self.arrays())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "role": self.role,
            "layers": [
                {"weight": l.weight.tolist(), "bias": l.bias.tolist(), "activation": l.activation}
                for l in self.layers
            ],
        }

    def equals(self, other: "ModelParams") -> bool:
        if self.role != other.role or len(self.layers) != len(other.layers):
            return False
        return all(
            a.activation == b.activation
            and np.array_equal(a.weight, b.weight)
            and np.array_equal(a.bias, b.bias)
            for a, b in zip(self.layers, other.layers)
        )


@dataclass
class ForwardTrace:
    """Every layer input and pre-activation retained for the backward pass"""
    inputs: List[np.ndarray] = field(default_factory=list)
    pre_activations: List[np.ndarray] = field(default_factory=list)
    outputs: List[np.ndarray] = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.outputs[-1]


def _activate(x: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(x, 0.0)
    if activation == "tanh":
        return np.tanh(x)
    return x


def _activation_grad(pre: np.ndarray, post: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return (pre > 0).astype(float)
    if activation == "tanh":
        return 1.0 - post ** 2
    return np.ones_like(pre)


def init_params(sizes: Sequence[int], activations: Sequence[str], role: str,
                rng: np.random.Generator) -> ModelParams:
    """
    Glorot-uniform weights, zero biases

    Args:
        sizes: layer widths [in, h1, ..., out]
        activations: one activation tag per layer (len(sizes) - 1 entries)
        role (str): encoder, generator or classifier
        rng: source of randomness

    Returns:
        ModelParams: freshly initialized network
    """
    if len(activations) != len(sizes) - 1:
        raise ValueError("need one activation per layer")
    layers = []
    for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append(DenseLayer(
            weight=rng.uniform(-limit, limit, size=(fan_out, fan_in)),
            bias=np.zeros(fan_out),
            activation=act,
        ))
    return ModelParams(layers=tuple(layers), role=role)


def build_encoder(input_dim: int, hidden_dim: int, embed_dim: int, rng: np.random.Generator) -> ModelParams:
    return init_params([input_dim, hidden_dim, embed_dim], ["relu", "identity"], "encoder", rng)


def build_generator(noise_dim: int, num_classes: int, hidden_dim: int, embed_dim: int,
                    rng: np.random.Generator) -> ModelParams:
    # input is noise concatenated with the one-hot label
    return init_params(
        [noise_dim + num_classes, hidden_dim, hidden_dim, embed_dim],
        ["relu", "relu", "identity"], "generator", rng,
    )


def build_classifier(embed_dim: int, hidden_dim: int, num_classes: int, rng: np.random.Generator) -> ModelParams:
    return init_params([embed_dim, hidden_dim, num_classes], ["relu", "identity"], "classifier", rng)


def forward(params: ModelParams, batch: np.ndarray) -> ForwardTrace:
    x = np.atleast_2d(np.asarray(batch, dtype=float))
    if x.shape[1] != params.input_dim:
        raise DimensionMismatchError(f"batch width {x.shape[1]} vs input {params.input_dim}")
    require_finite(x, "input")
    trace = ForwardTrace()
    for layer in params.layers:
        pre = x @ layer.weight.T + layer.bias
        post = _activate(pre, layer.activation)
        trace.inputs.append(x)
        trace.pre_activations.append(pre)
        trace.outputs.append(post)
        x = post
    return trace


def backward(params: ModelParams, trace: ForwardTrace, output_grad: np.ndarray) -> Tuple[ParamGrads, np.ndarray]:
    """
    Reverse-mode gradients of the layer chain

    Returns:
        (per-layer (dW, db) list, gradient with respect to the network input)
    """
    if len(trace.outputs) != len(params.layers):
        raise DimensionMismatchError("trace does not belong to these parameters")
    grad = np.asarray(output_grad, dtype=float)
    if grad.shape != trace.output.shape:
        raise DimensionMismatchError(f"output grad {grad.shape} vs output {trace.output.shape}")
    grads: ParamGrads = []
    for layer, x_in, pre, post in zip(
        reversed(params.layers), reversed(trace.inputs),
        reversed(trace.pre_activations), reversed(trace.outputs),
    ):
        g_pre = grad * _activation_grad(pre, post, layer.activation)
        grads.append((g_pre.T @ x_in, g_pre.sum(axis=0)))
        grad = g_pre @ layer.weight
    grads.reverse()
    return grads, grad


def sgd_step(params: ModelParams, grads: ParamGrads, lr: float) -> ModelParams:
    """p <- p - lr * g for every weight and bias"""
    if len(grads) != len(params.layers):
        raise DimensionMismatchError("gradient list does not match layers")
    layers = []
    for layer, (dw, db) in zip(params.layers, grads):
        if dw.shape != layer.weight.shape or db.shape != layer.bias.shape:
            raise DimensionMismatchError(f"gradient {dw.shape} vs weight {layer.weight.shape}")
        if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
            raise DivergenceError(f"{params.role} diverged: non-finite gradient")
        layers.append(DenseLayer(layer.weight - lr * dw, layer.bias - lr * db, layer.activation))
    return ModelParams(layers=tuple(layers), role=params.role)


def add_grads(a: ParamGrads, b: ParamGrads) -> ParamGrads:
    return [(wa + wb, ba + bb) for (wa, ba), (wb, bb) in zip(a, b)]


def grad_norm(grads: ParamGrads) -> float:
    return float(np.sqrt(sum(np.sum(dw ** 2) + np.sum(db ** 2) for dw, db in grads)))


def clip_grads(grads: ParamGrads, max_norm) -> ParamGrads:
    """Rescale to global norm max_norm when exceeded; None disables clipping"""
    if max_norm is None:
        return grads
    norm = grad_norm(grads)
    if not np.isfinite(norm) or norm <= max_norm:
        return grads
    scale = max_norm / norm
    return [(dw * scale, db * scale) for dw, db in grads]


def softmax_ce(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient (softmax - onehot) / n"""
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, num_classes = logits.shape
    if labels.shape[0] != n:
        raise DimensionMismatchError(f"{n} logits vs {labels.shape[0]} labels")
    check_labels(labels, num_classes)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(n)
    loss = float(-log_probs[rows, labels].mean())
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    return loss, grad / n


def average_params(models: Sequence[ModelParams], weights: Sequence[float]) -> ModelParams:
    """Convex combination sum_k (w_k / sum w) * params_k of identically shaped networks"""
    if not models:
        raise ValueError("nothing to average")
    weights = np.asarray(weights, dtype=float)
    weights = weights / weights.sum()
    layers = []
    for idx, ref in enumerate(models[0].layers):
        w = sum(wk * m.layers[idx].weight for wk, m in zip(weights, models))
        b = sum(wk * m.layers[idx].bias for wk, m in zip(weights, models))
        layers.append(DenseLayer(w, b, ref.activation))
    return ModelParams(layers=tuple(layers), role=models[0].role)


def predict(params_chain: Sequence[ModelParams], features: np.ndarray) -> np.ndarray:
    """Argmax prediction of chained networks; ties go to the lowest class index"""
    x = features
    for params in params_chain:
        x = forward(params, x).output
    return np.argmax(x, axis=1)
