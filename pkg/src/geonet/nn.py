"""Fully-connected network engine on flat float64 weight vectors.

A network is an :class:`ArchSpec` plus a flat ``np.ndarray`` of length
``arch.n_params``.  For each layer the weight matrix is stored row-major
(output-neuron-major) followed by that layer's bias vector.

Derivatives with respect to the weights are exact: :class:`Linearization`
caches one forward pass and then provides forward-mode (``jvp``) and
reverse-mode (``vjp``) products against it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")
ACTIVATION_CODES = {name: i for i, name in enumerate(ACTIVATIONS)}


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training diverged (non-finite loss) in epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class ArchSpec:
    """Layer sizes and per-layer activations of a feed-forward network.

    ``activations[l]`` is applied to the output of layer ``l``; there is one
    tag per weight layer, so ``len(activations) == len(layer_dims) - 1``.
    """

    layer_dims: tuple
    activations: tuple

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        acts = tuple(self.activations)
        if len(dims) < 2:
            raise ValueError("layer_dims needs at least an input and an output size")
        if any(d < 1 for d in dims):
            raise ValueError(f"layer sizes must be positive, got {dims}")
        if len(acts) != len(dims) - 1:
            raise ValueError(
                f"expected {len(dims) - 1} activation tags, got {len(acts)}")
        for a in acts:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "activations", acts)

    @classmethod
    def mlp(cls, dims: Sequence[int], hidden: str = "relu",
            output: str = "identity") -> "ArchSpec":
        dims = tuple(dims)
        return cls(dims, (hidden,) * (len(dims) - 2) + (output,))

    @classmethod
    def parse(cls, text: str, hidden: str = "relu") -> "ArchSpec":
        """``"784-300-100-10"`` -> ArchSpec with ``hidden`` units and linear output."""
        return cls.mlp([int(t) for t in text.split("-")], hidden=hidden)

    def __str__(self):
        return "-".join(str(d) for d in self.layer_dims)

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def n_inputs(self) -> int:
        return self.layer_dims[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_params(self) -> int:
        d = self.layer_dims
        return sum(d[l] * d[l + 1] + d[l + 1] for l in range(self.n_layers))

    def slices(self):
        """Per layer, the ``(weight_slice, bias_slice)`` into the flat vector."""
        out, pos = [], 0
        d = self.layer_dims
        for l in range(self.n_layers):
            nw = d[l] * d[l + 1]
            out.append((slice(pos, pos + nw), slice(pos + nw, pos + nw + d[l + 1])))
            pos += nw + d[l + 1]
        return out

    def unflatten(self, w: np.ndarray):
        """Views ``[(W_l, b_l), ...]`` into ``w``; ``W_l`` has shape (out, in)."""
        w = self.check_weights(w)
        d = self.layer_dims
        return [(w[sw].reshape(d[l + 1], d[l]), w[sb])
                for l, (sw, sb) in enumerate(self.slices())]

    def flatten(self, layers) -> np.ndarray:
        parts = []
        for W, b in layers:
            parts.append(np.asarray(W, dtype=np.float64).ravel())
            parts.append(np.asarray(b, dtype=np.float64).ravel())
        return self.check_weights(np.concatenate(parts))

    def check_weights(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (self.n_params,):
            raise ValueError(
                f"weight vector has shape {w.shape}, arch {self} needs ({self.n_params},)")
        return w

    def bias_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_params, dtype=bool)
        for _, sb in self.slices():
            mask[sb] = True
        return mask


@dataclass(frozen=True)
class Batch:
    """Inputs ``(N, k)`` with integer class labels ``(N,)``."""

    inputs: np.ndarray
    labels: np.ndarray = field(default=None)

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError(f"inputs must be 2-D (N, k), got shape {X.shape}")
        if X.shape[0] < 1:
            raise ValueError("empty batch")
        if not np.all(np.isfinite(X)):
            raise ValueError("batch inputs contain non-finite values")
        object.__setattr__(self, "inputs", X)
        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.shape != (X.shape[0],):
                raise ValueError(f"labels shape {y.shape} does not match {X.shape[0]} inputs")
            if y.size and (y.min() < 0 or not np.issubdtype(y.dtype, np.integer)):
                raise ValueError("labels must be non-negative integers")
            object.__setattr__(self, "labels", y.astype(np.int64))

    def __len__(self):
        return self.inputs.shape[0]

    def subset(self, idx) -> "Batch":
        return Batch(self.inputs[idx], None if self.labels is None else self.labels[idx])


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_deriv(name, z, a):
    # relu'(0) := 0
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    return None  # identity; callers skip the multiply


def _as_rows(arch: ArchSpec, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != arch.n_inputs:
        raise ValueError(f"input has shape {x.shape}, arch {arch} expects {arch.n_inputs} features")
    return X, single


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def init_network(arch: ArchSpec, seed: int) -> np.ndarray:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) layer by layer, biases zero."""
    rng = np.random.default_rng(seed)
    w = np.zeros(arch.n_params)
    d = arch.layer_dims
    for l, (sw, _) in enumerate(arch.slices()):
        bound = 1.0 / np.sqrt(d[l])
        w[sw] = rng.uniform(-bound, bound, size=d[l] * d[l + 1])
    return w


def forward(arch: ArchSpec, w, x) -> np.ndarray:
    """Raw (pre-softmax) outputs for one input vector or a row matrix of inputs."""
    X, single = _as_rows(arch, x)
    a = X
    for (W, b), name in zip(arch.unflatten(w), arch.activations):
        a = _act(name, a @ W.T + b)
    return a[0] if single else a


class Linearization:
    """One cached forward pass at ``w`` on inputs ``X``, for exact J·v and Jᵀ·u.

    With ``output_mode="softmax"`` the network map is composed with a softmax,
    otherwise the Jacobian is that of the raw logits.
    """

    def __init__(self, arch: ArchSpec, w, X, output_mode: str = "logits"):
        if output_mode not in ("logits", "softmax"):
            raise ValueError(f"unknown output_mode {output_mode!r}")
        self.arch = arch
        self.w = arch.check_weights(w)
        self.X, _ = _as_rows(arch, X)
        self.output_mode = output_mode
        self.layers = arch.unflatten(self.w)
        self.slices = arch.slices()
        acts, derivs = [self.X], []
        a = self.X
        for (W, b), name in zip(self.layers, arch.activations):
            z = a @ W.T + b
            a = _act(name, z)
            acts.append(a)
            derivs.append(_act_deriv(name, z, a))
        self.acts = acts
        self.derivs = derivs
        self.probs = softmax(acts[-1]) if output_mode == "softmax" else None

    @property
    def outputs(self) -> np.ndarray:
        return self.probs if self.probs is not None else self.acts[-1]

    def jvp(self, v) -> np.ndarray:
        """Per-sample J_i v, shape (N, m)."""
        v = self.arch.check_weights(v)
        da = None
        for l, ((W, _), (sw, sb)) in enumerate(zip(self.layers, self.slices)):
            dW = v[sw].reshape(W.shape)
            dz = self.acts[l] @ dW.T + v[sb]
            if da is not None:
                dz += da @ W.T
            if self.derivs[l] is not None:
                dz *= self.derivs[l]
            da = dz
        if self.probs is not None:
            p = self.probs
            da = p * da - p * np.sum(p * da, axis=1, keepdims=True)
        return da

    def vjp(self, U) -> np.ndarray:
        """Σ_i J_iᵀ u_i for a row matrix ``U`` of shape (N, m)."""
        U = np.asarray(U, dtype=np.float64)
        if U.shape != self.acts[-1].shape:
            raise ValueError(f"cotangent has shape {U.shape}, expected {self.acts[-1].shape}")
        if self.probs is not None:
            p = self.probs
            U = p * U - p * np.sum(p * U, axis=1, keepdims=True)
        out = np.empty(self.arch.n_params)
        g = U
        for l in range(self.arch.n_layers - 1, -1, -1):
            sw, sb = self.slices[l]
            if self.derivs[l] is not None:
                g = g * self.derivs[l]
            out[sw] = (g.T @ self.acts[l]).ravel()
            out[sb] = g.sum(axis=0)
            if l:
                g = g @ self.layers[l][0]
        return out


def jvp(arch: ArchSpec, w, x, v, output_mode: str = "logits") -> np.ndarray:
    """J_w(x)·v.  ``x`` may be one input (returns (m,)) or a row matrix (returns (N, m))."""
    X, single = _as_rows(arch, x)
    out = Linearization(arch, w, X, output_mode).jvp(v)
    return out[0] if single else out


def vjp(arch: ArchSpec, w, x, u, output_mode: str = "logits") -> np.ndarray:
    """J_w(x)ᵀ·u.  For a row matrix of inputs, ``u`` is (N, m) and the products are summed."""
    X, single = _as_rows(arch, x)
    U = np.asarray(u, dtype=np.float64)
    if single:
        if U.shape != (arch.n_outputs,):
            raise ValueError(f"cotangent has shape {U.shape}, expected ({arch.n_outputs},)")
        U = U[None, :]
    return Linearization(arch, w, X, output_mode).vjp(U)


def _check_labels(arch: ArchSpec, batch: Batch):
    if batch.labels is None:
        raise ValueError("batch has no labels")
    if batch.labels.max() >= arch.n_outputs:
        raise ValueError(f"label {batch.labels.max()} out of range for {arch.n_outputs} outputs")


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(lse - z[np.arange(len(labels)), labels]))


def accuracy_of(logits: np.ndarray, labels: np.ndarray) -> float:
    # argmax returns the first maximal index, which is the tie-break we want
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def loss_and_accuracy(arch: ArchSpec, w, batch: Batch) -> tuple[float, float]:
    """Mean softmax cross-entropy and top-1 accuracy on ``batch``."""
    _check_labels(arch, batch)
    logits = forward(arch, w, batch.inputs)
    return cross_entropy(logits, batch.labels), accuracy_of(logits, batch.labels)


def loss_gradient(arch: ArchSpec, w, batch: Batch) -> np.ndarray:
    _check_labels(arch, batch)
    lin = Linearization(arch, w, batch.inputs)
    p = softmax(lin.acts[-1])
    p[np.arange(len(batch)), batch.labels] -= 1.0
    return lin.vjp(p / len(batch))


@dataclass
class TrainOptions:
    lr: float = 0.05
    momentum: float = 0.9
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0


def sgd_train(arch: ArchSpec, train: Batch, opts: TrainOptions = None,
              w0: Optional[np.ndarray] = None, mask: Optional[np.ndarray] = None,
              on_epoch: Optional[Callable[[int, np.ndarray, float], None]] = None) -> np.ndarray:
    """Minibatch SGD with heavy-ball momentum on mean cross-entropy.

    Parameters
    ----------
    w0 : starting weights; defaults to ``init_network(arch, opts.seed)``.
    mask : boolean array, entries that are False are held at zero.
    on_epoch : called as ``on_epoch(epoch, w, mean_train_loss)`` after each epoch.
    """
    opts = opts or TrainOptions()
    if opts.lr <= 0:
        raise ValueError("learning rate must be positive")
    _check_labels(arch, train)
    w = init_network(arch, opts.seed) if w0 is None else arch.check_weights(w0).copy()
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        w[~mask] = 0.0
    rng = np.random.default_rng([opts.seed, 1])
    buf = np.zeros_like(w)
    N = len(train)
    for epoch in range(opts.epochs):
        order = rng.permutation(N)
        total = 0.0
        for start in range(0, N, opts.batch_size):
            idx = order[start:start + opts.batch_size]
            lin = Linearization(arch, w, train.inputs[idx])
            logits = lin.acts[-1]
            total += cross_entropy(logits, train.labels[idx]) * len(idx)
            p = softmax(logits)
            p[np.arange(len(idx)), train.labels[idx]] -= 1.0
            g = lin.vjp(p / len(idx))
            if mask is not None:
                g[~mask] = 0.0
            buf = opts.momentum * buf + g
            w -= opts.lr * buf
        mean_loss = total / N
        if not np.isfinite(mean_loss) or not np.all(np.isfinite(w)):
            raise TrainingDiverged(epoch)
        if on_epoch is not None:
            on_epoch(epoch, w, mean_loss)
    return w


def sparsity(w) -> float:
    w = np.asarray(w)
    return float(np.mean(w == 0.0))
