"""Dense feed-forward classifiers with exact input gradients.

Inputs are either a single point of shape ``(d,)`` or a batch ``(n, d)``;
outputs follow the same leading shape.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass(frozen=True, eq=False)
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        w = np.array(self.weight, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64).reshape(-1)
        if w.ndim != 2:
            raise ValueError(f"weight must be 2-D, got shape {w.shape}")
        if b.shape[0] != w.shape[0]:
            raise ValueError(f"bias length {b.shape[0]} != weight rows {w.shape[0]}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("layer parameters must be finite")
        w.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True, eq=False)
class DenseNetwork:
    """Immutable chain of dense layers mapping R^d to C logits."""

    layers: tuple[Layer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("network needs at least one layer")
        for k in range(1, len(layers)):
            if layers[k].in_dim != layers[k - 1].out_dim:
                raise ValueError(
                    f"layer {k} expects {layers[k].in_dim} inputs, "
                    f"previous layer emits {layers[k - 1].out_dim}"
                )
        if layers[-1].activation != "identity":
            raise ValueError("final layer must use the identity activation")
        if layers[-1].out_dim < 2:
            raise ValueError("a classifier needs at least two classes")
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def class_count(self) -> int:
        return self.layers[-1].out_dim

    @classmethod
    def from_params(cls, params, activation="relu") -> "DenseNetwork":
        """Build from ``[(W, b), ...]``; hidden layers share ``activation``."""
        n = len(params)
        return cls(tuple(
            Layer(w, b, activation if k < n - 1 else "identity")
            for k, (w, b) in enumerate(params)
        ))

    def params(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(layer.weight, layer.bias) for layer in self.layers]


def init_network(sizes, activation="relu", seed=0) -> DenseNetwork:
    """Scaled-uniform initialisation, deterministic in ``seed``.

    ``sizes`` lists every width including input and class count, e.g.
    ``(2, 16, 16, 2)``.
    """
    rng = np.random.default_rng(seed)
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params.append((rng.uniform(-bound, bound, size=(fan_out, fan_in)), np.zeros(fan_out)))
    return DenseNetwork.from_params(params, activation)


def _as_batch(net: DenseNetwork, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != net.input_dim:
        raise ValueError(f"expected input of dimension {net.input_dim}, got shape {x.shape}")
    if not np.all(np.isfinite(xb)):
        raise ValueError("input must be finite")
    return xb, single


def _activate(z, activation):
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(z, a, activation):
    if activation == "relu":
        return (z > 0).astype(np.float64)
    if activation == "tanh":
        return 1.0 - a * a
    return None


def _forward_cached(layers, xb):
    zs, acts = [], [xb]
    a = xb
    for layer in layers:
        z = a @ layer.weight.T + layer.bias
        a = _activate(z, layer.activation)
        zs.append(z)
        acts.append(a)
    return zs, acts


def _backward(layers, zs, acts, dlogits):
    """Propagate ``dL/dlogits`` back; returns (input grad, per-layer (dW, db))."""
    grads = [None] * len(layers)
    delta = dlogits
    for k in range(len(layers) - 1, -1, -1):
        layer = layers[k]
        da = _activation_grad(zs[k], acts[k + 1], layer.activation)
        if da is not None:
            delta = delta * da
        grads[k] = (delta.T @ acts[k], delta.sum(axis=0))
        delta = delta @ layer.weight
    return delta, grads


def forward(net: DenseNetwork, x) -> np.ndarray:
    """Logits N(x)."""
    xb, single = _as_batch(net, x)
    a = xb
    for layer in net.layers:
        a = _activate(a @ layer.weight.T + layer.bias, layer.activation)
    return a[0] if single else a


def softmax_confidences(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def cross_entropy(logits, target):
    """-log softmax(logits)[target], row-wise for batches."""
    ls = log_softmax(logits)
    if ls.ndim == 1:
        return float(-ls[int(target)])
    t = np.broadcast_to(np.asarray(target, dtype=np.intp), ls.shape[:1])
    return -ls[np.arange(ls.shape[0]), t]


def predict(net: DenseNetwork, x):
    """argmax of the logits; ties go to the lowest class index."""
    return np.argmax(forward(net, x), axis=-1)


def confidences(net: DenseNetwork, x) -> np.ndarray:
    return softmax_confidences(forward(net, x))


def confidences_and_gradient(net: DenseNetwork, x, target_class):
    """Softmax confidences at ``x`` and the input gradient of CE(N(x), target).

    Gradients are per row (not averaged over the batch).
    """
    xb, single = _as_batch(net, x)
    n = xb.shape[0]
    target = np.broadcast_to(np.asarray(target_class, dtype=np.intp), (n,))
    if np.any(target < 0) or np.any(target >= net.class_count):
        raise ValueError("target class out of range")
    zs, acts = _forward_cached(net.layers, xb)
    probs = softmax_confidences(acts[-1])
    dlogits = probs.copy()
    dlogits[np.arange(n), target] -= 1.0
    gx, _ = _backward(net.layers, zs, acts, dlogits)
    if single:
        return probs[0], gx[0]
    return probs, gx


def input_gradient(net: DenseNetwork, x, target_class) -> np.ndarray:
    """Exact gradient of the cross-entropy towards ``target_class`` w.r.t. the input."""
    return confidences_and_gradient(net, x, target_class)[1]


def loss_and_param_gradients(net_or_params, xb, labels, activation="relu"):
    """Mean cross-entropy over a batch and its gradients w.r.t. every parameter.

    Accepts a network or a raw ``[(W, b), ...]`` list (the training loop
    keeps mutable arrays and only freezes them into a network at the end).
    """
    if isinstance(net_or_params, DenseNetwork):
        layers = net_or_params.layers
    else:
        n = len(net_or_params)
        layers = [
            _RawLayer(w, b, activation if k < n - 1 else "identity")
            for k, (w, b) in enumerate(net_or_params)
        ]
    xb = np.asarray(xb, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    n = xb.shape[0]
    zs, acts = _forward_cached(layers, xb)
    logits = acts[-1]
    loss = float(np.mean(cross_entropy(logits, labels)))
    dlogits = softmax_confidences(logits)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    _, grads = _backward(layers, zs, acts, dlogits)
    return loss, grads


@dataclass
class _RawLayer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str


# -- serialisation ---------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def dumps_network(net: DenseNetwork) -> str:
    lines = [f"layers {len(net.layers)} input {net.input_dim} classes {net.class_count}"]
    for layer in net.layers:
        lines.append(f"layer {layer.out_dim} {layer.in_dim} {layer.activation}")
        for row in layer.weight:
            lines.append(" ".join(_fmt(v) for v in row))
        lines.append(" ".join(_fmt(v) for v in layer.bias))
    return "\n".join(lines) + "\n"


def loads_network(text: str) -> DenseNetwork:
    rows = [ln.split() for ln in text.splitlines() if ln.strip()]
    if not rows or rows[0][0] != "layers" or len(rows[0]) != 6:
        raise ValueError("missing 'layers <n> input <d> classes <C>' header")
    n_layers, d, c = int(rows[0][1]), int(rows[0][3]), int(rows[0][5])
    pos = 1
    layers = []
    for _ in range(n_layers):
        head = rows[pos]
        if head[0] != "layer" or len(head) != 4:
            raise ValueError(f"malformed layer header: {' '.join(head)}")
        out_dim, in_dim, act = int(head[1]), int(head[2]), head[3]
        w = np.array([[float(v) for v in rows[pos + 1 + r]] for r in range(out_dim)])
        if w.shape != (out_dim, in_dim):
            raise ValueError("weight block does not match layer header")
        b = np.array([float(v) for v in rows[pos + 1 + out_dim]])
        layers.append(Layer(w, b, act))
        pos += out_dim + 2
    net = DenseNetwork(tuple(layers))
    if net.input_dim != d or net.class_count != c:
        raise ValueError("header dimensions disagree with layer blocks")
    return net


def save_network(net: DenseNetwork, path) -> None:
    Path(path).write_text(dumps_network(net))


def load_network(path) -> DenseNetwork:
    return loads_network(Path(path).read_text())
