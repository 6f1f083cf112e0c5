"""Feed-forward classifier with hand-written backprop, Adam, and checkpoints.

The network is ``logits = head(relu(...relu(x W1 + b1)...))``: a stack of
ReLU feature layers followed by a linear head. Softmax is left to callers.
Weights are stored ``(fan_in, fan_out)`` so a batch multiplies on the left.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, FormatError, NumericError, StateError
from .numerics import RngStream, as_matrix

MAGIC = b"APLR1\n"


@dataclass
class Layer:
    weights: np.ndarray
    bias: np.ndarray

    def copy(self) -> "Layer":
        return Layer(self.weights.copy(), self.bias.copy())


def he_uniform(fan_in: int, fan_out: int, stream: RngStream, scale: float = 1.0) -> Layer:
    limit = scale * np.sqrt(6.0 / fan_in)
    return Layer(stream.uniform(-limit, limit, (fan_in, fan_out)), np.zeros(fan_out))


class ClassifierModel:
    """ReLU feature extractor plus linear head over ``num_classes`` outputs."""

    def __init__(self, feature_layers: Sequence[Layer], head: Layer, seed: Optional[int] = None):
        self.feature_layers = list(feature_layers)
        self.head = head
        self.seed = seed
        self.version = 0
        prev = None
        for layer in self.feature_layers + [head]:
            w = layer.weights
            if w.ndim != 2 or layer.bias.shape != (w.shape[1],):
                raise DimensionError("layer weights/bias shapes do not conform")
            if prev is not None and w.shape[0] != prev:
                raise DimensionError(f"layer expects {w.shape[0]} inputs, previous emits {prev}")
            prev = w.shape[1]

    @classmethod
    def create(cls, input_dim: int, hidden: Sequence[int], num_classes: int,
               stream: RngStream) -> "ClassifierModel":
        sizes = [input_dim, *hidden]
        layers = [he_uniform(a, b, stream) for a, b in zip(sizes[:-1], sizes[1:])]
        head = he_uniform(sizes[-1], num_classes, stream)
        return cls(layers, head, seed=stream.seed)

    @property
    def input_dim(self) -> int:
        first = self.feature_layers[0] if self.feature_layers else self.head
        return first.weights.shape[0]

    @property
    def num_classes(self) -> int:
        return self.head.weights.shape[1]

    @property
    def hidden(self) -> list[int]:
        return [layer.weights.shape[1] for layer in self.feature_layers]

    def parameters(self) -> list[np.ndarray]:
        """Parameter arrays in declaration order (live references)."""
        out = []
        for layer in self.feature_layers + [self.head]:
            out += [layer.weights, layer.bias]
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "ClassifierModel":
        return ClassifierModel([l.copy() for l in self.feature_layers], self.head.copy(), self.seed)

    def with_new_head(self, stream: RngStream, scale: float = 1.0) -> "ClassifierModel":
        """Copy of this model's feature layers with a freshly initialized head.

        ``scale`` shrinks the He-uniform bound of the new head.
        """
        fan_in = self.head.weights.shape[0]
        return ClassifierModel([l.copy() for l in self.feature_layers],
                               he_uniform(fan_in, self.num_classes, stream, scale), stream.seed)

    def touch(self) -> None:
        self.version += 1

    def predict_logits(self, x) -> np.ndarray:
        return forward(self, x)[0]


@dataclass
class ForwardCache:
    model_id: int
    version: int
    inputs: list = field(default_factory=list)   # input to each layer
    pre: list = field(default_factory=list)      # pre-activation of each feature layer


def forward(model: ClassifierModel, batch) -> tuple[np.ndarray, ForwardCache]:
    x = as_matrix(batch, "batch")
    if x.shape[1] != model.input_dim:
        raise DimensionError(f"batch has {x.shape[1]} columns, model expects {model.input_dim}")
    cache = ForwardCache(id(model), model.version)
    a = x
    for layer in model.feature_layers:
        cache.inputs.append(a)
        z = a @ layer.weights + layer.bias
        cache.pre.append(z)
        a = np.maximum(z, 0.0)
    cache.inputs.append(a)
    return a @ model.head.weights + model.head.bias, cache


def backward(model: ClassifierModel, cache: ForwardCache, grad_logits) -> list[np.ndarray]:
    """Parameter gradients, in ``model.parameters()`` order, for the given logit gradient."""
    if cache.model_id != id(model) or cache.version != model.version:
        raise StateError("forward cache is stale or belongs to another model")
    g = as_matrix(grad_logits, "grad_logits")
    n_rows = cache.inputs[0].shape[0]
    if g.shape != (n_rows, model.num_classes):
        raise DimensionError(f"grad_logits shape {g.shape} != {(n_rows, model.num_classes)}")
    grads = [cache.inputs[-1].T @ g, g.sum(axis=0)]
    delta = g @ model.head.weights.T
    for i in range(len(model.feature_layers) - 1, -1, -1):
        delta = delta * (cache.pre[i] > 0)
        grads = [cache.inputs[i].T @ delta, delta.sum(axis=0)] + grads
        if i:
            delta = delta @ model.feature_layers[i].weights.T
    return grads


@dataclass
class AdamState:
    """Per-parameter moments plus the hyperparameters of one optimizer."""

    m: list
    v: list
    t: int = 0
    lr_head: float = 1e-4
    lr_feature: float = 1e-5
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_model(cls, model: ClassifierModel, **hyper) -> "AdamState":
        params = model.parameters()
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **hyper)


def adam_step(state: AdamState, model: ClassifierModel, grads: Sequence[np.ndarray]):
    """One bias-corrected Adam step with decoupled weight decay, in place.

    The last two parameters (head weights and bias) use ``lr_head``; feature
    layers use ``lr_feature``. A non-finite gradient refuses the step.
    """
    params = model.parameters()
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise DimensionError("gradients do not mirror model parameters")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient; Adam step refused")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    n_feature = len(params) - 2
    for i, (p, g, m, v) in enumerate(zip(params, grads, state.m, state.v)):
        lr = state.lr_feature if i < n_feature else state.lr_head
        if state.weight_decay:
            p -= lr * state.weight_decay * p
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    model.touch()
    return model, state


# ---------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    metadata: dict
    parameters: list


def _metadata(model: ClassifierModel) -> dict:
    n_feat = len(model.feature_layers)
    return {
        "format": "APLR1",
        "input_dim": model.input_dim,
        "num_classes": model.num_classes,
        "layer_shapes": [list(l.weights.shape) for l in model.feature_layers + [model.head]],
        "activations": ["relu"] * n_feat + ["linear"],
        "seed": model.seed,
    }


def save_checkpoint(model: ClassifierModel, path) -> Path:
    path = Path(path)
    meta = json.dumps(_metadata(model), sort_keys=True).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in model.parameters())
    path.write_bytes(MAGIC + struct.pack("<Q", len(meta)) + meta + payload)
    return path


def read_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise FormatError(f"{path}: bad magic tag")
    pos = len(MAGIC)
    if len(raw) < pos + 8:
        raise FormatError(f"{path}: truncated header")
    (n_meta,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    try:
        meta = json.loads(raw[pos:pos + n_meta].decode("utf-8"))
        shapes = [tuple(s) for s in meta["layer_shapes"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: unreadable metadata ({exc})") from exc
    pos += n_meta
    params = []
    for fan_in, fan_out in shapes:
        for shape in ((fan_in, fan_out), (fan_out,)):
            nbytes = 8 * int(np.prod(shape))
            if len(raw) < pos + nbytes:
                raise FormatError(f"{path}: truncated parameter payload")
            params.append(np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=pos)
                          .astype(np.float64).reshape(shape))
            pos += nbytes
    if pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - pos} trailing bytes")
    return Checkpoint(meta, params)


def load_checkpoint(path, num_classes: Optional[int] = None,
                    input_dim: Optional[int] = None) -> ClassifierModel:
    """Rebuild a model from ``path``, optionally checking its class count and input width."""
    ckpt = read_checkpoint(path)
    p = ckpt.parameters
    layers = [Layer(p[i], p[i + 1]) for i in range(0, len(p), 2)]
    try:
        model = ClassifierModel(layers[:-1], layers[-1], seed=ckpt.metadata.get("seed"))
    except DimensionError as exc:
        raise FormatError(f"{path}: inconsistent layer shapes") from exc
    if num_classes is not None and model.num_classes != num_classes:
        raise DimensionError(f"checkpoint has C={model.num_classes}, expected C={num_classes}")
    if input_dim is not None and model.input_dim != input_dim:
        raise DimensionError(f"checkpoint expects {model.input_dim} inputs, expected {input_dim}")
    return model
