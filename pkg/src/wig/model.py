"""Small differentiable scoring models with hand-written backprop.

A :class:`Model` maps an input tensor to a single score ``f_c(x)``: the
class-``c`` logit, its sigmoid, or its softmax probability. Layers are a
closed set (dense, stride-1 valid conv2d, activation, flatten, global average
pool) so input gradients can be checked against central differences.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import FormatError, ShapeError, TrainingDivergedError
from .tensor import as_tensor, atomic_write, ntf_bytes, parse_ntf

OUTPUT_MODES = ("logit", "sigmoid", "softmax-prob")
ACTIVATIONS = ("relu", "softplus", "tanh")
CHECKPOINT_FORMAT = "wig-checkpoint"


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                    np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


# -- layers -------------------------------------------------------------------
# Every layer works on a leading batch axis. forward returns (output, cache);
# backward returns (grad wrt input, dict of parameter grads).

@dataclass
class Dense:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray    # (out,)
    kind = "dense"

    def __post_init__(self):
        self.weight = as_tensor(self.weight)
        self.bias = as_tensor(self.bias)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"dense weight {self.weight.shape} / bias {self.bias.shape} mismatch")

    def output_shape(self, shape):
        if tuple(shape) != (self.weight.shape[1],):
            raise ShapeError(f"dense layer expects input ({self.weight.shape[1]},), got {tuple(shape)}")
        return (self.weight.shape[0],)

    def forward(self, x):
        return x @ self.weight.T + self.bias, x

    def backward(self, gy, x, need_params=False):
        grads = {"weight": gy.T @ x, "bias": gy.sum(axis=0)} if need_params else {}
        return gy @ self.weight, grads

    def params(self):
        return {"weight": self.weight, "bias": self.bias}


@dataclass
class Conv2d:
    weight: np.ndarray  # (out_channels, in_channels, kh, kw)
    bias: np.ndarray    # (out_channels,)
    kind = "conv2d"

    def __post_init__(self):
        self.weight = as_tensor(self.weight)
        self.bias = as_tensor(self.bias)
        if self.weight.ndim != 4 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"conv2d weight {self.weight.shape} / bias {self.bias.shape} mismatch")

    def output_shape(self, shape):
        oc, ic, kh, kw = self.weight.shape
        if len(shape) != 3 or shape[0] != ic or shape[1] < kh or shape[2] < kw:
            raise ShapeError(f"conv2d expects ({ic}, >={kh}, >={kw}) input, got {tuple(shape)}")
        return (oc, shape[1] - kh + 1, shape[2] - kw + 1)

    def forward(self, x):
        kh, kw = self.weight.shape[2:]
        win = sliding_window_view(x, (kh, kw), axis=(2, 3))
        y = np.einsum("bchwij,ocij->bohw", win, self.weight, optimize=True)
        return y + self.bias[None, :, None, None], (x, win)

    def backward(self, gy, cache, need_params=False):
        x, win = cache
        kh, kw = self.weight.shape[2:]
        padded = np.pad(gy, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
        pwin = sliding_window_view(padded, (kh, kw), axis=(2, 3))
        flipped = self.weight[:, :, ::-1, ::-1]
        gx = np.einsum("bohwij,ocij->bchw", pwin, flipped, optimize=True)
        grads = {}
        if need_params:
            grads["weight"] = np.einsum("bohw,bchwij->ocij", gy, win, optimize=True)
            grads["bias"] = gy.sum(axis=(0, 2, 3))
        return gx, grads

    def params(self):
        return {"weight": self.weight, "bias": self.bias}


@dataclass
class Activation:
    activation: str
    kind = "activation"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    def output_shape(self, shape):
        return tuple(shape)

    def forward(self, x):
        if self.activation == "relu":
            return np.maximum(x, 0.0), x
        if self.activation == "softplus":
            return np.logaddexp(0.0, x), x
        return np.tanh(x), x

    def backward(self, gy, x, need_params=False):
        if self.activation == "relu":
            d = (x > 0).astype(np.float64)
        elif self.activation == "softplus":
            d = _sigmoid(x)
        else:
            d = 1.0 - np.tanh(x) ** 2
        return gy * d, {}

    def params(self):
        return {}


@dataclass
class Flatten:
    kind = "flatten"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, gy, shape, need_params=False):
        return gy.reshape(shape), {}

    def params(self):
        return {}


@dataclass
class GlobalAvgPool:
    kind = "global-avg-pool"

    def output_shape(self, shape):
        if len(shape) != 3:
            raise ShapeError(f"global-avg-pool expects (C, H, W), got {tuple(shape)}")
        return (shape[0],)

    def forward(self, x):
        return x.mean(axis=(2, 3)), x.shape

    def backward(self, gy, shape, need_params=False):
        area = shape[2] * shape[3]
        return np.broadcast_to(gy[:, :, None, None] / area, shape).copy(), {}

    def params(self):
        return {}


LAYER_KINDS = {"dense": Dense, "conv2d": Conv2d, "activation": Activation,
               "flatten": Flatten, "global-avg-pool": GlobalAvgPool}


# -- model --------------------------------------------------------------------

@dataclass
class Model:
    """Layer stack plus a scoring head selecting one output of the last layer."""

    input_shape: tuple
    layers: list
    class_index: int = 0
    output_mode: str = "softmax-prob"
    regression: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if self.output_mode not in OUTPUT_MODES:
            raise ValueError(f"unknown output_mode {self.output_mode!r}")
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ShapeError as exc:
                raise ShapeError(f"layers[{i}] ({layer.kind}): {exc}") from None
        if len(shape) != 1:
            raise ShapeError(f"model output must be a vector, got shape {shape}")
        self.n_outputs = shape[0]
        if not 0 <= self.class_index < self.n_outputs:
            raise ShapeError(f"class_index {self.class_index} out of range for {self.n_outputs} outputs")

    def with_class(self, class_index: int) -> "Model":
        return replace(self, class_index=int(class_index))

    def _check_batch(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        if xs.shape[1:] != self.input_shape:
            raise ShapeError(f"input shape {xs.shape[1:]} does not match model input {self.input_shape}")
        return xs

    def logits_batch(self, xs) -> np.ndarray:
        h = self._check_batch(xs)
        for layer in self.layers:
            h, _ = layer.forward(h)
        return h

    def _head(self, z):
        """Score and d(score)/d(logits) for a batch of logit vectors."""
        c = self.class_index
        if self.output_mode == "logit":
            dz = np.zeros_like(z)
            dz[:, c] = 1.0
            return z[:, c].copy(), dz
        if self.output_mode == "sigmoid":
            s = _sigmoid(z[:, c])
            dz = np.zeros_like(z)
            dz[:, c] = s * (1.0 - s)
            return s, dz
        shifted = z - z.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        p = e / e.sum(axis=1, keepdims=True)
        s = p[:, c].copy()
        dz = -s[:, None] * p
        dz[:, c] += s
        return s, dz

    def score_batch(self, xs) -> np.ndarray:
        return self._head(self.logits_batch(xs))[0]

    def score_and_grad_batch(self, xs):
        h = self._check_batch(xs)
        caches = []
        for layer in self.layers:
            h, cache = layer.forward(h)
            caches.append(cache)
        s, g = self._head(h)
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            g, _ = layer.backward(g, cache)
        return s, g

    def predict_batch(self, xs) -> np.ndarray:
        return np.argmax(self.logits_batch(xs), axis=1) if self.n_outputs > 1 else \
            (self.logits_batch(xs)[:, 0] > 0).astype(np.int64)


def forward(model: Model, x) -> float:
    """Score f_c(x) of a single input."""
    x = as_tensor(x)
    if x.shape != model.input_shape:
        raise ShapeError(f"input shape {x.shape} does not match model input {model.input_shape}")
    return float(model.score_batch(x[None])[0])


def gradient(model: Model, x) -> np.ndarray:
    """Analytic gradient of the score with respect to every input scalar."""
    x = as_tensor(x)
    if x.shape != model.input_shape:
        raise ShapeError(f"input shape {x.shape} does not match model input {model.input_shape}")
    return model.score_and_grad_batch(x[None])[1][0]


def finite_diff_gradient(model: Model, x, h: float = 1e-5) -> np.ndarray:
    """Central differences ``(f(x + h e_i) - f(x - h e_i)) / 2h`` per scalar."""
    if not h > 0:
        raise ValueError("h must be positive")
    x = as_tensor(x, model.input_shape)
    n = x.size
    eye = np.eye(n).reshape((n,) + x.shape) * h
    plus = model.score_batch(x[None] + eye)
    minus = model.score_batch(x[None] - eye)
    return ((plus - minus) / (2.0 * h)).reshape(x.shape)


# -- construction and training -----------------------------------------------

def build_architecture(name: str, input_shape: Sequence[int], n_classes: int,
                       rng: np.random.Generator, *, activation: str = "softplus",
                       hidden: int = 16, conv_channels: int = 8, kernel: int = 3) -> list:
    """Randomly initialised layer list for a named built-in architecture.

    ``linear``: flatten + dense. ``mlp``: flatten, dense, activation, dense.
    ``conv``: conv2d, activation, global-avg-pool, dense.
    """
    input_shape = tuple(input_shape)
    d = int(np.prod(input_shape))

    def dense(n_in, n_out):
        return Dense(rng.normal(0.0, math.sqrt(2.0 / (n_in + n_out)), (n_out, n_in)), np.zeros(n_out))

    if name == "linear":
        return [Flatten(), dense(d, n_classes)]
    if name == "mlp":
        return [Flatten(), dense(d, hidden), Activation(activation), dense(hidden, n_classes)]
    if name == "conv":
        if len(input_shape) != 3:
            raise ShapeError("conv architecture needs a C x H x W input")
        c = input_shape[0]
        fan = c * kernel * kernel
        conv = Conv2d(rng.normal(0.0, math.sqrt(2.0 / fan), (conv_channels, c, kernel, kernel)),
                      np.zeros(conv_channels))
        return [conv, Activation(activation), GlobalAvgPool(), dense(conv_channels, n_classes)]
    raise ValueError(f"unknown architecture {name!r}")


def _loss_and_logit_grad(z, y, output_mode):
    """Mean training loss and its gradient wrt the logits."""
    b = z.shape[0]
    if output_mode == "sigmoid" and z.shape[1] == 1:
        s = _sigmoid(z[:, 0])
        t = y.astype(np.float64)
        loss = np.mean(np.logaddexp(0.0, z[:, 0]) - t * z[:, 0])
        return loss, ((s - t) / b)[:, None]
    shifted = z - z.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -np.mean(logp[np.arange(b), y])
    g = np.exp(logp)
    g[np.arange(b), y] -= 1.0
    return loss, g / b


def train_model(layers: list, inputs, labels, epochs: int, learning_rate: float,
                rng: np.random.Generator, *, batch_size: int = 32,
                output_mode: str = "softmax-prob", class_index: int = 0):
    """Minibatch SGD on cross-entropy. Returns ``(model, training_accuracy)``.

    ``layers`` are copied, never mutated. With ``epochs=0`` the initial
    parameters are returned unchanged.
    """
    xs = np.asarray(inputs, dtype=np.float64)
    ys = np.asarray(labels, dtype=np.int64)
    if xs.shape[0] == 0 or xs.shape[0] != ys.shape[0]:
        raise ShapeError("dataset must be nonempty with one label per input")
    layers = [replace(layer, **{k: v.copy() for k, v in layer.params().items()}) for layer in layers]
    model = Model(xs.shape[1:], layers, class_index=class_index, output_mode=output_mode)
    n = xs.shape[0]
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            h = xs[idx]
            caches = []
            for layer in layers:
                h, cache = layer.forward(h)
                caches.append(cache)
            loss, g = _loss_and_logit_grad(h, ys[idx], output_mode)
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, float(loss))
            updates = []
            for layer, cache in zip(reversed(layers), reversed(caches)):
                g, grads = layer.backward(g, cache, need_params=True)
                updates.append((layer, grads))
            for layer, grads in updates:
                for name, grad in grads.items():
                    setattr(layer, name, getattr(layer, name) - learning_rate * grad)
        for layer in layers:
            if any(not np.all(np.isfinite(p)) for p in layer.params().values()):
                raise TrainingDivergedError(epoch, float("nan"))
    accuracy = float(np.mean(model.predict_batch(xs) == ys))
    return model, accuracy


# -- checkpoints --------------------------------------------------------------

def _encode_array(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape),
            "data": base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")}


def _decode_array(obj, where: str) -> np.ndarray:
    if not isinstance(obj, dict) or "shape" not in obj or "data" not in obj:
        raise FormatError(f"{where}: expected object with 'shape' and 'data'")
    shape = obj["shape"]
    if not isinstance(shape, list) or not all(isinstance(s, int) and s > 0 for s in shape):
        raise FormatError(f"{where}.shape: must be a list of positive integers")
    try:
        raw = base64.b64decode(obj["data"], validate=True)
    except (ValueError, TypeError) as exc:
        raise FormatError(f"{where}.data: invalid base64") from exc
    expected = int(np.prod(shape))
    if len(raw) != expected * 8:
        raise FormatError(f"{where}.data: declared shape {shape} needs {expected} floats, "
                          f"found {len(raw) / 8:g}")
    arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{where}.data: non-finite value")
    return arr


def model_to_dict(model: Model) -> dict:
    layers = []
    for layer in model.layers:
        entry = {"kind": layer.kind}
        if isinstance(layer, Activation):
            entry["activation"] = layer.activation
        for name, value in layer.params().items():
            entry[name] = _encode_array(value)
        layers.append(entry)
    doc = {"format": CHECKPOINT_FORMAT, "version": 1,
           "input_shape": list(model.input_shape),
           "output_mode": model.output_mode,
           "class_index": model.class_index,
           "layers": layers}
    if model.regression is not None:
        x, score = model.regression
        doc["regression"] = {"input_ntf": base64.b64encode(ntf_bytes(x)).decode("ascii"),
                             "score": score}
    return doc


def attach_regression(model: Model, x) -> Model:
    """Record (x, f(x)) so a loaded checkpoint can check its own integrity."""
    x = as_tensor(x, model.input_shape)
    return replace(model, regression=(x, forward(model, x)))


def save_model(model: Model, path) -> None:
    if model.regression is None:
        model = attach_regression(model, np.zeros(model.input_shape))
    atomic_write(path, json.dumps(model_to_dict(model), indent=1) + "\n")


def model_from_dict(doc: dict, class_index: int | None = None) -> Model:
    if not isinstance(doc, dict):
        raise FormatError("checkpoint: top level must be an object")
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"format: expected {CHECKPOINT_FORMAT!r}")
    if doc.get("version") != 1:
        raise FormatError("version: unsupported")
    for key in ("input_shape", "output_mode", "class_index", "layers"):
        if key not in doc:
            raise FormatError(f"{key}: missing")
    if doc["output_mode"] not in OUTPUT_MODES:
        raise FormatError(f"output_mode: unknown value {doc['output_mode']!r}")
    if not isinstance(doc["layers"], list):
        raise FormatError("layers: must be a list")
    layers = []
    for i, entry in enumerate(doc["layers"]):
        where = f"layers[{i}]"
        kind = entry.get("kind") if isinstance(entry, dict) else None
        if kind not in LAYER_KINDS:
            raise FormatError(f"{where}.kind: unknown layer kind {kind!r}")
        try:
            if kind in ("dense", "conv2d"):
                layers.append(LAYER_KINDS[kind](_decode_array(entry.get("weight"), f"{where}.weight"),
                                                _decode_array(entry.get("bias"), f"{where}.bias")))
            elif kind == "activation":
                layers.append(Activation(entry.get("activation")))
            else:
                layers.append(LAYER_KINDS[kind]())
        except (ShapeError, ValueError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"{where}: {exc}") from None
    c = doc["class_index"] if class_index is None else class_index
    try:
        model = Model(tuple(doc["input_shape"]), layers, class_index=int(c),
                      output_mode=doc["output_mode"])
    except ShapeError as exc:
        raise FormatError(f"layers: {exc}") from None
    reg = doc.get("regression")
    if reg is not None:
        try:
            x = parse_ntf(base64.b64decode(reg["input_ntf"], validate=True))
            expected = float(reg["score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"regression: {exc}") from None
        # the regression pair was recorded for the saved class head
        saved = model.with_class(int(doc["class_index"]))
        got = forward(saved, x)
        if abs(got - expected) > 1e-12:
            raise FormatError(f"regression: recorded score {expected!r}, recomputed {got!r}")
        model = replace(model, regression=(x, expected) if c == doc["class_index"] else None)
    return model


def load_model(path, class_index: int | None = None) -> Model:
    """Load a checkpoint; ``class_index`` overrides the stored scoring head."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"checkpoint: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return model_from_dict(doc, class_index)
