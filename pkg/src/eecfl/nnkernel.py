"""Small dense-network engine used by every node in the simulator.

Models are plain feedforward classifiers: rectifier hidden layers and a
linear output layer producing logits. Everything runs in float64 so that
finite-difference checks stay tight.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

PROB_FLOOR = 1e-12


class ShapeError(ValueError):
    """Raised when array shapes violate a model contract."""


@dataclass
class Gradients:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def scaled(self, factor: float) -> "Gradients":
        return Gradients([w * factor for w in self.weights], [b * factor for b in self.biases])


@dataclass
class LossBreakdown:
    """Scalar loss terms of one optimization step.

    For leaf students ``total = local_ce_term + gamma * (ce_term + beta * kl_term)``,
    for non-leaf students ``total = ce_term + beta * kl_term``.
    """

    total: float
    ce_term: float
    kl_term: float
    local_ce_term: float = 0.0

    @classmethod
    def non_leaf(cls, ce: float, kl: float, beta: float) -> "LossBreakdown":
        return cls(total=ce + beta * kl, ce_term=ce, kl_term=kl, local_ce_term=0.0)

    @classmethod
    def leaf(cls, local_ce: float, ce: float, kl: float, beta: float, gamma: float) -> "LossBreakdown":
        return cls(total=local_ce + gamma * (ce + beta * kl), ce_term=ce, kl_term=kl,
                   local_ce_term=local_ce)


class DenseModel:
    """Feedforward classifier with ReLU hidden layers.

    Weights are stored as ``(in_dim, out_dim)`` matrices so a batch ``x`` of
    shape ``(n, in_dim)`` maps through ``x @ W + b``.
    """

    def __init__(self, layer_dims: Sequence[int], weights: Sequence[np.ndarray],
                 biases: Sequence[np.ndarray]):
        dims = [int(d) for d in layer_dims]
        if len(dims) < 2 or any(d <= 0 for d in dims):
            raise ShapeError(f"layer_dims must hold >= 2 positive ints, got {list(layer_dims)}")
        if len(weights) != len(dims) - 1 or len(biases) != len(dims) - 1:
            raise ShapeError("need one weight matrix and bias vector per layer")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise ShapeError(f"layer {i}: expected W{(dims[i], dims[i + 1])}, b{(dims[i + 1],)}; "
                                 f"got W{w.shape}, b{b.shape}")
        self.layer_dims = dims
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]

    @classmethod
    def initialize(cls, layer_dims: Sequence[int], rng: np.random.Generator) -> "DenseModel":
        """He-normal weights, zero biases."""
        dims = [int(d) for d in layer_dims]
        weights = [rng.normal(0.0, np.sqrt(2.0 / dims[i]), size=(dims[i], dims[i + 1]))
                   for i in range(len(dims) - 1)]
        biases = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]
        return cls(dims, weights, biases)

    @classmethod
    def zeros(cls, layer_dims: Sequence[int]) -> "DenseModel":
        dims = [int(d) for d in layer_dims]
        return cls(dims, [np.zeros((dims[i], dims[i + 1])) for i in range(len(dims) - 1)],
                   [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)])

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "DenseModel":
        return DenseModel(self.layer_dims, [w.copy() for w in self.weights],
                          [b.copy() for b in self.biases])

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError(f"expected input of width {self.input_dim}, got shape {x.shape}")
        return x

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Raw logits for a batch (a 1-D input is treated as a batch of one)."""
        a = self._check_input(x)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ w + b
            if i < last:
                a = np.maximum(a, 0.0)
        return a

    def forward_cached(self, x: np.ndarray) -> Tuple[np.ndarray, list]:
        a = self._check_input(x)
        cache = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            cache.append((a, z))
            a = np.maximum(z, 0.0) if i < last else z
        return a, cache

    def backward(self, cache: list, dout: np.ndarray) -> Tuple[Gradients, np.ndarray]:
        """Backpropagate ``dL/dlogits`` through a cached forward pass.

        Returns the parameter gradients and ``dL/dinput``.
        """
        n_layers = len(self.weights)
        gw: List[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
        gb: List[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
        delta = np.asarray(dout, dtype=np.float64)
        for i in range(n_layers - 1, -1, -1):
            a_in, z = cache[i]
            if i < n_layers - 1:
                delta = delta * (z > 0.0)
            gw[i] = a_in.T @ delta
            gb[i] = delta.sum(axis=0)
            delta = delta @ self.weights[i].T
        return Gradients(gw, gb), delta

    def flat_params(self) -> np.ndarray:
        """Layer-major, weight-then-bias flattening."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def set_flat_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.param_count,):
            raise ShapeError(f"expected {self.param_count} params, got {flat.shape}")
        pos = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[pos:pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[i] = flat[pos:pos + b.size].copy()
            pos += b.size

    def to_text(self) -> str:
        header = "layer_dims " + " ".join(str(d) for d in self.layer_dims)
        body = " ".join(format(v, ".17g") for v in self.flat_params())
        return header + "\n" + body + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DenseModel":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        if len(lines) != 2 or not lines[0].startswith("layer_dims"):
            raise ValueError("model text must be a layer_dims header plus one parameter row")
        dims = [int(t) for t in lines[0].split()[1:]]
        model = cls.zeros(dims)
        model.set_flat_params(np.array([float(t) for t in lines[1].split()]))
        return model

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "DenseModel":
        with open(path) as fh:
            return cls.from_text(fh.read())


# -- probability helpers ------------------------------------------------------

def softmax_temp(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Row-wise ``softmax(logits / temperature)`` with max-subtraction."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    z = z / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(probs: np.ndarray, label: int) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < probs.shape[-1]:
        raise IndexError(f"label {label} out of range for {probs.shape[-1]} classes")
    return float(-np.log(max(probs[label], PROB_FLOOR)))


def kl_div(p: np.ndarray, q: np.ndarray) -> float:
    """``sum_i p_i log(p_i / q_i)`` with ``0 log 0 = 0`` and q floored."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeError(f"length mismatch: {p.shape} vs {q.shape}")
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(np.maximum(q[mask], PROB_FLOOR)))))


# -- composite losses ---------------------------------------------------------

def ce_from_logits(logits: np.ndarray, labels: np.ndarray,
                   temperature: float = 1.0) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy of ``softmax(logits / temperature)`` and its logit gradient."""
    n = logits.shape[0]
    logp = log_softmax(logits, temperature)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / (n * temperature)


def kl_from_logits(logits: np.ndarray, targets: np.ndarray,
                   temperature: float = 1.0) -> Tuple[float, np.ndarray]:
    """Mean ``KL(softmax(logits / temperature) || targets)`` and its logit gradient."""
    n = logits.shape[0]
    logp = log_softmax(logits, temperature)
    p = np.exp(logp)
    g = logp - np.log(np.maximum(targets, PROB_FLOOR))
    per_sample = (p * g).sum(axis=1)
    grad = p * (g - per_sample[:, None])
    return float(per_sample.mean()), grad / (n * temperature)


def distill_loss_grad(model: DenseModel, samples: np.ndarray, labels: np.ndarray,
                      targets: np.ndarray, beta: float,
                      student_temperature: Optional[float] = None
                      ) -> Tuple[LossBreakdown, Gradients]:
    """Non-leaf objective: CE on bridge labels plus beta * KL(student || received)."""
    t = 1.0 if student_temperature is None else student_temperature
    logits, cache = model.forward_cached(samples)
    ce, d_ce = ce_from_logits(logits, labels, t)
    kl, d_kl = kl_from_logits(logits, targets, t)
    grads, _ = model.backward(cache, d_ce + beta * d_kl)
    return LossBreakdown.non_leaf(ce, kl, beta), grads


def leaf_loss_grad(model: DenseModel, private_x: np.ndarray, private_y: np.ndarray,
                   samples: np.ndarray, labels: np.ndarray, targets: np.ndarray,
                   beta: float, gamma: float, student_temperature: Optional[float] = None
                   ) -> Tuple[LossBreakdown, Gradients]:
    """Leaf objective: private CE plus gamma times the non-leaf objective."""
    logits_p, cache_p = model.forward_cached(private_x)
    local_ce, d_local = ce_from_logits(logits_p, private_y)
    g_local, _ = model.backward(cache_p, d_local)
    bridge, g_bridge = distill_loss_grad(model, samples, labels, targets, beta, student_temperature)
    grads = Gradients([a + gamma * b for a, b in zip(g_local.weights, g_bridge.weights)],
                      [a + gamma * b for a, b in zip(g_local.biases, g_bridge.biases)])
    return LossBreakdown.leaf(local_ce, bridge.ce_term, bridge.kl_term, beta, gamma), grads


def ce_loss_grad(model: DenseModel, x: np.ndarray, y: np.ndarray) -> Tuple[float, Gradients]:
    logits, cache = model.forward_cached(x)
    loss, d = ce_from_logits(logits, y)
    grads, _ = model.backward(cache, d)
    return loss, grads


def sgd_step(model: DenseModel, grads: Gradients, lr: float) -> DenseModel:
    """In-place ``w <- w - lr * g``; returns the same model."""
    if len(grads.weights) != len(model.weights):
        raise ShapeError("gradient layer count does not match model")
    for i in range(len(model.weights)):
        if grads.weights[i].shape != model.weights[i].shape or grads.biases[i].shape != model.biases[i].shape:
            raise ShapeError(f"gradient shape mismatch at layer {i}")
        model.weights[i] -= lr * grads.weights[i]
        model.biases[i] -= lr * grads.biases[i]
    return model


def predict(model: DenseModel, x: np.ndarray) -> np.ndarray:
    return np.argmax(model.forward(x), axis=1)
