"""RUL regressors: stacked LSTM / GRU / 1-D CNN with a dense head.

The three families follow the standard cell equations (gates over
``[h_{t-1}, x_t]`` with stacked gate weights) and regress a scalar RUL
from the final hidden state (recurrent families) or the flattened
convolution stack (CNN). Paper-scale presets are LSTM(100,100,100,100),
GRU(100,100,100) at sequence length 80 and CNN(64,64,64,64) at 100;
scaled presets (32/32 and 16/16 at length 30) train on a desk CPU in
minutes and are what the default test suite uses.

Models are plain parameter dictionaries over :class:`~rulattack.tensor.Tensor`;
training is Adam on MSE with early stopping on a validation split. All
randomness flows through named seed streams, so a (config, seed) pair is
bit-reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import tensor as tc
from .data import NormalizationStats, SensorWindow
from .errors import (
    CorruptCheckpoint,
    Diverged,
    EmptyInput,
    InvalidSpec,
    NonFiniteResult,
    ShapeMismatch,
    VersionMismatch,
)
from .seeds import stream
from .tensor import Tensor

FAMILIES = ("lstm", "gru", "cnn")
_CKPT_MAGIC = "RULATTACK-CKPT"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; validated eagerly on construction.

    ``output_scale`` multiplies the dense head's scalar output so freshly
    initialized models already span the label range; it is part of the
    architecture, not the loss.
    """
    family: str
    layer_widths: tuple
    seq_len: int
    dense_head: tuple = (1,)
    kernel_width: int = 3
    n_channels: int = 14
    output_scale: float = 130.0

    def __post_init__(self):
        family = str(self.family).lower().replace("cnn1d", "cnn")
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        object.__setattr__(self, "dense_head", tuple(int(w) for w in self.dense_head))
        if family not in FAMILIES:
            raise InvalidSpec(f"unknown family {self.family!r}")
        if not self.layer_widths or any(w < 1 for w in self.layer_widths):
            raise InvalidSpec("layer_widths must be positive integers")
        if not self.dense_head or any(w < 1 for w in self.dense_head):
            raise InvalidSpec("dense_head must be positive integers")
        if self.dense_head[-1] != 1:
            raise InvalidSpec("dense_head must end in width 1 (scalar RUL output)")
        if self.seq_len < 1 or self.n_channels < 1:
            raise InvalidSpec("seq_len and n_channels must be positive")
        if self.family == "cnn" and self.kernel_width < 1:
            raise InvalidSpec("kernel_width must be positive")
        if self.output_scale <= 0:
            raise InvalidSpec("output_scale must be positive")

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "layer_widths": list(self.layer_widths),
            "seq_len": self.seq_len,
            "dense_head": list(self.dense_head),
            "kernel_width": self.kernel_width,
            "n_channels": self.n_channels,
            "output_scale": self.output_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            family=d["family"],
            layer_widths=tuple(d["layer_widths"]),
            seq_len=int(d["seq_len"]),
            dense_head=tuple(d["dense_head"]),
            kernel_width=int(d.get("kernel_width", 3)),
            n_channels=int(d.get("n_channels", 14)),
            output_scale=float(d.get("output_scale", 130.0)),
        )


PAPER_SPECS = {
    "lstm": dict(layer_widths=(100, 100, 100, 100), seq_len=80, dense_head=(1,)),
    "gru": dict(layer_widths=(100, 100, 100), seq_len=80, dense_head=(1,)),
    "cnn": dict(layer_widths=(64, 64, 64, 64), seq_len=100, dense_head=(40, 40, 1)),
}
SCALED_SPECS = {
    "lstm": dict(layer_widths=(32, 32), seq_len=30, dense_head=(1,)),
    "gru": dict(layer_widths=(32, 32), seq_len=30, dense_head=(1,)),
    "cnn": dict(layer_widths=(16, 16), seq_len=30, dense_head=(40, 40, 1)),
}


def preset(family: str, scaled: bool = True, n_channels: int = 14) -> ModelSpec:
    """Paper-scale or desk-scale spec for one model family."""
    table = SCALED_SPECS if scaled else PAPER_SPECS
    if family not in table:
        raise InvalidSpec(f"unknown family {family!r}")
    return ModelSpec(family=family, n_channels=n_channels, **table[family])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 100
    early_stop_patience: int = 10
    seed: int = 0
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.learning_rate < 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("learning_rate, batch_size, max_epochs must be positive")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be positive")
        if not (0.0 < self.validation_fraction < 1.0):
            raise ValueError("validation_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class RegressionModel:
    """Trained or freshly initialized regressor ``f: [T, N] -> RUL``."""
    spec: ModelSpec
    parameters: dict
    norm_stats: NormalizationStats | None = None
    dtype: str = "float32"

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


# -- construction -------------------------------------------------------------

def _glorot(rng, rows: int, cols: int, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(rows, cols)).astype(dtype)


def build(spec: ModelSpec, seed: int, dtype: str = "float32",
          norm_stats: NormalizationStats | None = None) -> RegressionModel:
    """Initialize parameters: Glorot-uniform weights, zero biases, and a
    +1 forget-gate bias for LSTM layers. Deterministic for a given seed."""
    rng = stream(seed, "init")
    np_dtype = np.dtype(dtype)
    params: dict = {}
    in_dim = spec.n_channels

    if spec.family == "lstm":
        for layer, width in enumerate(spec.layer_widths):
            cols = width + in_dim
            w = _glorot(rng, 4 * width, cols, fan_in=cols, fan_out=4 * width, dtype=np_dtype)
            b = np.zeros(4 * width, dtype=np_dtype)
            b[width:2 * width] = 1.0  # forget gate
            params[f"lstm{layer}.W"] = Tensor(w)
            params[f"lstm{layer}.b"] = Tensor(b)
            in_dim = width
        head_in = spec.layer_widths[-1]
    elif spec.family == "gru":
        for layer, width in enumerate(spec.layer_widths):
            cols = width + in_dim
            params[f"gru{layer}.Wzr"] = Tensor(
                _glorot(rng, 2 * width, cols, fan_in=cols, fan_out=2 * width, dtype=np_dtype))
            params[f"gru{layer}.bzr"] = Tensor(np.zeros(2 * width, dtype=np_dtype))
            params[f"gru{layer}.Wh"] = Tensor(
                _glorot(rng, width, cols, fan_in=cols, fan_out=width, dtype=np_dtype))
            params[f"gru{layer}.bh"] = Tensor(np.zeros(width, dtype=np_dtype))
            in_dim = width
        head_in = spec.layer_widths[-1]
    else:
        k = spec.kernel_width
        for layer, width in enumerate(spec.layer_widths):
            limit = np.sqrt(6.0 / (k * in_dim + k * width))
            w = rng.uniform(-limit, limit, size=(k, in_dim, width)).astype(np_dtype)
            params[f"conv{layer}.W"] = Tensor(w)
            params[f"conv{layer}.b"] = Tensor(np.zeros(width, dtype=np_dtype))
            in_dim = width
        head_in = spec.seq_len * spec.layer_widths[-1]

    for j, width in enumerate(spec.dense_head):
        params[f"head{j}.W"] = Tensor(
            _glorot(rng, width, head_in, fan_in=head_in, fan_out=width, dtype=np_dtype))
        params[f"head{j}.b"] = Tensor(np.zeros(width, dtype=np_dtype))
        head_in = width

    return RegressionModel(spec=spec, parameters=params, norm_stats=norm_stats,
                           dtype=np_dtype.name)


def parameter_count(spec: ModelSpec) -> int:
    """Closed-form parameter count for a spec."""
    total = 0
    in_dim = spec.n_channels
    for width in spec.layer_widths:
        if spec.family == "lstm":
            total += 4 * width * (width + in_dim) + 4 * width
        elif spec.family == "gru":
            total += 3 * width * (width + in_dim) + 3 * width
        else:
            total += spec.kernel_width * in_dim * width + width
        in_dim = width
    head_in = in_dim if spec.family in ("lstm", "gru") else spec.seq_len * in_dim
    for width in spec.dense_head:
        total += width * head_in + width
        head_in = width
    return total


# -- forward graphs ------------------------------------------------------------

def _zeros(bsz: int, width: int, dtype) -> Tensor:
    return Tensor(np.zeros((bsz, width), dtype=dtype))


def _lstm_stack(spec, params, x: Tensor) -> Tensor:
    bsz, t_len, _ = x.shape
    dtype = x.dtype
    seq = x
    last = len(spec.layer_widths) - 1
    h = None
    for layer, width in enumerate(spec.layer_widths):
        wt = tc.transpose(params[f"lstm{layer}.W"])
        b = params[f"lstm{layer}.b"]
        h = _zeros(bsz, width, dtype)
        c = _zeros(bsz, width, dtype)
        outs = []
        for t in range(t_len):
            xt = tc.slice_time(seq, t)
            gates = tc.add(tc.matmul(tc.concat([h, xt], axis=1), wt), b)
            i = tc.sigmoid(tc.slice_axis(gates, 1, 0, width))
            f = tc.sigmoid(tc.slice_axis(gates, 1, width, 2 * width))
            o = tc.sigmoid(tc.slice_axis(gates, 1, 2 * width, 3 * width))
            g = tc.tanh(tc.slice_axis(gates, 1, 3 * width, 4 * width))
            c = tc.add(tc.mul(f, c), tc.mul(i, g))
            h = tc.mul(o, tc.tanh(c))
            if layer != last:
                outs.append(tc.reshape(h, (bsz, 1, width)))
        if layer != last:
            seq = tc.concat(outs, axis=1)
    return h


def _gru_stack(spec, params, x: Tensor) -> Tensor:
    bsz, t_len, _ = x.shape
    dtype = x.dtype
    seq = x
    last = len(spec.layer_widths) - 1
    h = None
    for layer, width in enumerate(spec.layer_widths):
        wzr_t = tc.transpose(params[f"gru{layer}.Wzr"])
        bzr = params[f"gru{layer}.bzr"]
        wh_t = tc.transpose(params[f"gru{layer}.Wh"])
        bh = params[f"gru{layer}.bh"]
        h = _zeros(bsz, width, dtype)
        outs = []
        for t in range(t_len):
            xt = tc.slice_time(seq, t)
            zr = tc.sigmoid(tc.add(tc.matmul(tc.concat([h, xt], axis=1), wzr_t), bzr))
            z = tc.slice_axis(zr, 1, 0, width)
            r = tc.slice_axis(zr, 1, width, 2 * width)
            cand = tc.tanh(tc.add(tc.matmul(tc.concat([tc.mul(r, h), xt], axis=1), wh_t), bh))
            keep = tc.add(tc.mul(z, -1.0), 1.0)  # 1 - z
            h = tc.add(tc.mul(keep, h), tc.mul(z, cand))
            if layer != last:
                outs.append(tc.reshape(h, (bsz, 1, width)))
        if layer != last:
            seq = tc.concat(outs, axis=1)
    return h


def _cnn_stack(spec, params, x: Tensor) -> Tensor:
    bsz, t_len, _ = x.shape
    h = x
    for layer, width in enumerate(spec.layer_widths):
        h = tc.relu(tc.add(tc.conv1d(h, params[f"conv{layer}.W"]),
                           params[f"conv{layer}.b"]))
    return tc.reshape(h, (bsz, t_len * spec.layer_widths[-1]))


def _forward(spec: ModelSpec, params: dict, x: Tensor) -> Tensor:
    """Batched forward pass ``[B, T, N] -> [B]``."""
    if spec.family == "lstm":
        h = _lstm_stack(spec, params, x)
    elif spec.family == "gru":
        h = _gru_stack(spec, params, x)
    else:
        h = _cnn_stack(spec, params, x)
    for j, width in enumerate(spec.dense_head):
        h = tc.add(tc.matmul(h, tc.transpose(params[f"head{j}.W"])), params[f"head{j}.b"])
        if j + 1 < len(spec.dense_head):
            h = tc.relu(h)
    if spec.output_scale != 1.0:
        h = tc.mul(h, float(spec.output_scale))
    return tc.reshape(h, (x.shape[0],))


def _window_values(window) -> np.ndarray:
    return window.values if isinstance(window, SensorWindow) else np.asarray(window)


def predict(model: RegressionModel, window) -> float:
    """Scalar RUL prediction for one ``[seq_len, N]`` window."""
    values = _window_values(window)
    expected = (model.spec.seq_len, model.spec.n_channels)
    if values.shape != expected:
        raise ShapeMismatch("predict", values.shape, expected)
    x = Tensor(values[None], dtype=model.np_dtype)
    return float(_forward(model.spec, model.parameters, x).numpy()[0])


def predict_batch(model: RegressionModel, windows) -> np.ndarray:
    """Predictions for many windows; identical to calling predict per window."""
    return np.asarray([predict(model, w) for w in windows], dtype=np.float64)


def loss_and_input_gradient(model: RegressionModel, window, rul_label: float):
    """Squared-error loss on one window and its gradient w.r.t. the window."""
    values = _window_values(window)
    expected = (model.spec.seq_len, model.spec.n_channels)
    if values.shape != expected:
        raise ShapeMismatch("loss_and_input_gradient", values.shape, expected)
    x = Tensor(values[None], dtype=model.np_dtype)
    y = Tensor(np.asarray([rul_label]), dtype=model.np_dtype)
    with tc.record() as tape:
        pred = _forward(model.spec, model.parameters, x)
        loss = tc.mean_squared_error(pred, y)
    g = tc.grad(tape, loss, [x])[x]
    return loss.item(), g.numpy()[0]


# -- training ------------------------------------------------------------------

class _Adam:
    """Per-parameter adaptive steps (beta1=0.9, beta2=0.999)."""

    def __init__(self, lr: float, dtype, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = dtype.type(lr)
        self.beta1 = dtype.type(beta1)
        self.beta2 = dtype.type(beta2)
        self.eps = dtype.type(eps)
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        bc1 = 1.0 - float(self.beta1) ** self.t
        bc2 = 1.0 - float(self.beta2) ** self.t
        out = {}
        for name, p in params.items():
            g = grads[name]
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
            else:
                v = self.v[name]
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * (g * g)
            self.m[name], self.v[name] = m, v
            update = self.lr * (m / m.dtype.type(bc1)) / (np.sqrt(v / v.dtype.type(bc2)) + self.eps)
            out[name] = Tensor(p.data - update)
        return out


def _as_arrays(dataset, spec: ModelSpec, dtype):
    xs = np.stack([lw.window.values for lw in dataset]).astype(dtype)
    ys = np.asarray([lw.rul for lw in dataset], dtype=dtype)
    if xs.shape[1:] != (spec.seq_len, spec.n_channels):
        raise ShapeMismatch("train", xs.shape[1:], (spec.seq_len, spec.n_channels))
    return xs, ys


def _mean_loss(spec, params, xs, ys, batch_size, dtype) -> float:
    total, count = 0.0, 0
    for start in range(0, len(xs), batch_size):
        xb = Tensor(xs[start:start + batch_size])
        yb = Tensor(ys[start:start + batch_size])
        loss = tc.mean_squared_error(_forward(spec, params, xb), yb).item()
        total += loss * (len(ys[start:start + batch_size]))
        count += len(ys[start:start + batch_size])
    return total / max(count, 1)


def train(model: RegressionModel, dataset, cfg: TrainConfig):
    """Minimize MSE over labeled windows; early-stop on validation MSE.

    Returns the trained model (parameters from the best validation epoch)
    and a history of ``(epoch, train_mse, val_mse)`` rows.
    """
    if not dataset:
        raise EmptyInput("training dataset is empty")
    dtype = model.np_dtype
    xs, ys = _as_arrays(dataset, model.spec, dtype)
    n = len(xs)

    split_rng = stream(cfg.seed, "val-split")
    perm = split_rng.permutation(n)
    n_val = min(max(1, int(round(n * cfg.validation_fraction))), n - 1) if n > 1 else 0
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    x_val, y_val = xs[val_idx], ys[val_idx]
    x_train, y_train = xs[train_idx], ys[train_idx]

    params = dict(model.parameters)
    names = list(params)
    adam = _Adam(cfg.learning_rate, dtype)
    shuffle_rng = stream(cfg.seed, "shuffle")

    history = []
    best_val = np.inf
    best_params = params
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(len(x_train))
        total, seen = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = Tensor(x_train[idx]), Tensor(y_train[idx])
            try:
                with tc.record() as tape:
                    loss = tc.mean_squared_error(_forward(model.spec, params, xb), yb)
            except NonFiniteResult as exc:
                raise Diverged(f"training diverged at epoch {epoch}: {exc}") from None
            lval = loss.item()
            if not np.isfinite(lval):
                raise Diverged(f"training loss became non-finite at epoch {epoch}")
            grads = tc.grad(tape, loss, [params[name] for name in names])
            grad_arrays = {name: grads[params[name]].numpy() for name in names}
            params = adam.step(params, grad_arrays)
            total += lval * len(idx)
            seen += len(idx)
        train_mse = total / max(seen, 1)
        try:
            val_mse = (_mean_loss(model.spec, params, x_val, y_val, cfg.batch_size, dtype)
                       if n_val else train_mse)
        except NonFiniteResult as exc:
            raise Diverged(f"validation diverged at epoch {epoch}: {exc}") from None
        if not np.isfinite(val_mse):
            raise Diverged(f"validation loss became non-finite at epoch {epoch}")
        history.append({"epoch": epoch, "train_mse": train_mse, "val_mse": val_mse})
        if val_mse < best_val:
            best_val = val_mse
            best_params = params
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break
    return replace(model, parameters=best_params), history


# -- checkpoints ---------------------------------------------------------------

def save(model: RegressionModel, path) -> None:
    """Write a checkpoint: UTF-8 header + little-endian float32 payload.

    The payload dtype is fixed by the format; models kept in float64 (as
    the gradient-check suites use) are rounded to float32 on save.
    """
    manifest = [[name, list(t.shape)] for name, t in model.parameters.items()]
    header = {
        "spec": model.spec.to_dict(),
        "dtype": "float32",
        "norm_stats": model.norm_stats.to_dict() if model.norm_stats else None,
        "manifest": manifest,
    }
    with open(path, "wb") as fh:
        fh.write(f"{_CKPT_MAGIC} {_CKPT_VERSION}\n".encode("utf-8"))
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for name, _ in manifest:
            fh.write(model.parameters[name].numpy().astype("<f4").tobytes())


def load(path) -> RegressionModel:
    """Read a checkpoint written by :func:`save`; bit-exact round trip."""
    blob = Path(path).read_bytes()
    nl1 = blob.find(b"\n")
    if nl1 < 0:
        raise CorruptCheckpoint(f"{path}: missing header")
    first = blob[:nl1].decode("utf-8", errors="replace").split()
    if len(first) != 2 or first[0] != _CKPT_MAGIC:
        raise CorruptCheckpoint(f"{path}: not a checkpoint file")
    try:
        version = int(first[1])
    except ValueError:
        raise CorruptCheckpoint(f"{path}: unreadable version tag") from None
    if version > _CKPT_VERSION:
        raise VersionMismatch(f"{path}: version {version} newer than supported {_CKPT_VERSION}")
    if version < 1:
        raise CorruptCheckpoint(f"{path}: invalid version {version}")

    nl2 = blob.find(b"\n", nl1 + 1)
    if nl2 < 0:
        raise CorruptCheckpoint(f"{path}: truncated header")
    try:
        header = json.loads(blob[nl1 + 1:nl2].decode("utf-8"))
        spec = ModelSpec.from_dict(header["spec"])
        manifest = [(str(name), tuple(int(d) for d in shape))
                    for name, shape in header["manifest"]]
        stats = (NormalizationStats.from_dict(header["norm_stats"])
                 if header.get("norm_stats") else None)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError, InvalidSpec) as exc:
        raise CorruptCheckpoint(f"{path}: bad header ({exc})") from None

    payload = blob[nl2 + 1:]
    expected = sum(int(np.prod(shape, dtype=np.int64)) for _, shape in manifest) * 4
    if len(payload) != expected:
        raise CorruptCheckpoint(
            f"{path}: payload has {len(payload)} bytes, manifest needs {expected}")

    params = {}
    offset = 0
    for name, shape in manifest:
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        offset += count * 4
        arr = arr.reshape(shape).astype(np.float32)
        if not np.isfinite(arr).all():
            raise CorruptCheckpoint(f"{path}: non-finite values in parameter {name}")
        params[name] = Tensor(arr)
    return RegressionModel(spec=spec, parameters=params, norm_stats=stats, dtype="float32")
