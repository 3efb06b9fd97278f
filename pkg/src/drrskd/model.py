"""Small networks with hand-written backward passes.

Two families are supported: a ReLU MLP and a small CNN
(conv3x3 -> ReLU -> maxpool2 blocks followed by a dense classifier). The same
``Model`` type serves as student, frozen offline teacher and last-iteration
evaluator.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, FormatError, FrozenModelError, ShapeError, StateError
from .tensor import Parameter, Tensor

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "mlp"
    input_shape: tuple = (1, 32, 32)
    hidden: tuple = (64,)
    num_classes: int = 3
    use_batchnorm: bool = False

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.kind not in ("mlp", "smallcnn"):
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if not self.input_shape or any(d < 1 for d in self.input_shape):
            raise ConfigError(f"bad input_shape {self.input_shape}")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("all hidden widths must be >= 1")
        if self.kind == "smallcnn":
            if len(self.input_shape) != 3:
                raise ConfigError("smallcnn needs a (channels, h, w) input_shape")
            _, h, w = self.input_shape
            if min(h, w) < 2 ** len(self.hidden):
                raise ConfigError("input too small for the number of pooling stages")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        d["hidden"] = list(self.hidden)
        return d


# ---------------------------------------------------------------- layers


class Layer:
    params: tuple = ()
    buffers: tuple = ()

    def forward(self, x, train):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, fan_in, fan_out, rng):
        bound = np.sqrt(6.0 / fan_in)
        self.W = Parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)), name="dense.W")
        self.b = Parameter(np.zeros(fan_out), name="dense.b")
        self.params = (self.W, self.b)
        self._x = None

    def forward(self, x, train):
        if train:
            self._x = x
        return x @ self.W.value + self.b.value

    def backward(self, grad):
        self.W.accumulate(self._x.T @ grad)
        self.b.accumulate(grad.sum(axis=0))
        return grad @ self.W.value.T


class Conv3x3(Layer):
    """Stride 1, zero padding 1: spatial size is preserved."""

    def __init__(self, c_in, c_out, rng):
        fan_in = c_in * 9
        bound = np.sqrt(6.0 / fan_in)
        self.W = Parameter(rng.uniform(-bound, bound, size=(c_out, c_in, 3, 3)), name="conv.W")
        self.b = Parameter(np.zeros(c_out), name="conv.b")
        self.params = (self.W, self.b)
        self._cols = None
        self._in_shape = None

    def forward(self, x, train):
        B, C, H, W = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # B,C,H,W,3,3
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * H * W, C * 9)
        c_out = self.W.value.shape[0]
        out = cols @ self.W.value.reshape(c_out, -1).T + self.b.value
        if train:
            self._cols = cols
            self._in_shape = x.shape
        return out.reshape(B, H, W, c_out).transpose(0, 3, 1, 2)

    def backward(self, grad):
        B, C, H, W = self._in_shape
        c_out = self.W.value.shape[0]
        g2 = grad.transpose(0, 2, 3, 1).reshape(-1, c_out)
        self.W.accumulate((g2.T @ self._cols).reshape(self.W.value.shape))
        self.b.accumulate(g2.sum(axis=0))
        dcols = (g2 @ self.W.value.reshape(c_out, -1)).reshape(B, H, W, C, 3, 3)
        dxp = np.zeros((B, C, H + 2, W + 2))
        for i in range(3):
            for j in range(3):
                dxp[:, :, i:i + H, j:j + W] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, 1:-1, 1:-1]


class ReLU(Layer):
    def __init__(self):
        self._mask = None

    def forward(self, x, train):
        mask = x > 0
        if train:
            self._mask = mask
        return np.where(mask, x, 0.0)

    def backward(self, grad):
        return np.where(self._mask, grad, 0.0)


class MaxPool2(Layer):
    """2x2 stride-2 max pooling; trailing odd rows/columns are dropped.

    Within a window the first maximal element in row-major order receives the
    whole gradient.
    """

    def __init__(self):
        self._arg = None
        self._in_shape = None

    def _windows(self, x):
        B, C, H, W = x.shape
        h2, w2 = H // 2, W // 2
        xr = x[:, :, :2 * h2, :2 * w2].reshape(B, C, h2, 2, w2, 2)
        return xr.transpose(0, 1, 2, 4, 3, 5).reshape(B, C, h2, w2, 4)

    def forward(self, x, train):
        win = self._windows(x)
        arg = np.argmax(win, axis=-1)
        if train:
            self._arg = arg
            self._in_shape = x.shape
        return np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        B, C, H, W = self._in_shape
        h2, w2 = H // 2, W // 2
        dwin = np.zeros((B, C, h2, w2, 4))
        np.put_along_axis(dwin, self._arg[..., None], grad[..., None], axis=-1)
        dx = np.zeros(self._in_shape)
        dx[:, :, :2 * h2, :2 * w2] = (
            dwin.reshape(B, C, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, 2 * h2, 2 * w2)
        )
        return dx


class BatchNorm(Layer):
    """Batch normalization over dim 0 (dense) or dims (0, 2, 3) (conv)."""

    def __init__(self, features):
        self.gamma = Parameter(np.ones(features), name="bn.gamma")
        self.beta = Parameter(np.zeros(features), name="bn.beta")
        self.params = (self.gamma, self.beta)
        self.running_mean = np.zeros(features)
        self.running_var = np.ones(features)
        self.buffers = (self.running_mean, self.running_var)
        self._cache = None

    @staticmethod
    def _axes(x):
        return (0,) if x.ndim == 2 else (0, 2, 3)

    @staticmethod
    def _bcast(v, x):
        return v if x.ndim == 2 else v[None, :, None, None]

    def forward(self, x, train):
        axes = self._axes(x)
        if not train:
            xhat = (x - self._bcast(self.running_mean, x)) / np.sqrt(self._bcast(self.running_var, x) + BN_EPS)
            return self._bcast(self.gamma.value, x) * xhat + self._bcast(self.beta.value, x)
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        n = x.size // mean.size
        unbiased = var * n / (n - 1) if n > 1 else var
        self.running_mean *= 1 - BN_MOMENTUM
        self.running_mean += BN_MOMENTUM * mean
        self.running_var *= 1 - BN_MOMENTUM
        self.running_var += BN_MOMENTUM * unbiased
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - self._bcast(mean, x)) * self._bcast(inv_std, x)
        self._cache = (xhat, inv_std, axes, n)
        return self._bcast(self.gamma.value, x) * xhat + self._bcast(self.beta.value, x)

    def backward(self, grad):
        xhat, inv_std, axes, n = self._cache
        self.gamma.accumulate((grad * xhat).sum(axis=axes))
        self.beta.accumulate(grad.sum(axis=axes))
        dxhat = grad * self._bcast(self.gamma.value, grad)
        return (
            self._bcast(inv_std / n, grad)
            * (n * dxhat - dxhat.sum(axis=axes, keepdims=True) - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
        )


class Flatten(Layer):
    def __init__(self):
        self._shape = None

    def forward(self, x, train):
        if train:
            self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


# ---------------------------------------------------------------- model


def _build_layers(spec: ModelSpec, rng) -> list:
    layers = []
    if spec.kind == "mlp":
        width = int(np.prod(spec.input_shape))
        layers.append(Flatten())
        for h in spec.hidden:
            layers.append(Dense(width, h, rng))
            if spec.use_batchnorm:
                layers.append(BatchNorm(h))
            layers.append(ReLU())
            width = h
        layers.append(Dense(width, spec.num_classes, rng))
        return layers

    c, h, w = spec.input_shape
    for ch in spec.hidden:
        layers.append(Conv3x3(c, ch, rng))
        if spec.use_batchnorm:
            layers.append(BatchNorm(ch))
        layers += [ReLU(), MaxPool2()]
        c, h, w = ch, h // 2, w // 2
    layers += [Flatten(), Dense(c * h * w, spec.num_classes, rng)]
    return layers


@dataclass
class Snapshot:
    spec: ModelSpec
    values: tuple
    buffers: tuple = field(default=())


class Model:
    def __init__(self, spec: ModelSpec, layers: list):
        self.spec = spec
        self.layers = layers
        self.params = [p for layer in layers for p in layer.params]
        self.buffers = [b for layer in layers for b in layer.buffers]
        self.mode = "train"
        self.frozen = False
        self._batch_shape = None

    # -- modes
    def train(self):
        if self.frozen:
            raise FrozenModelError("a frozen model stays in eval mode")
        self.mode = "train"

    def eval(self):
        self.mode = "eval"

    def freeze(self):
        self.frozen = True
        self.mode = "eval"

    # -- evaluation
    def forward(self, batch: Tensor) -> Tensor:
        """Return logits of shape (B, num_classes).

        Train mode keeps the intermediates needed by :meth:`backward` and
        updates batch-norm running statistics. Eval mode touches neither.
        """
        x = np.asarray(batch, dtype=np.float64)
        expected = self.spec.input_shape
        if x.ndim != len(expected) + 1 or x.shape[1:] != expected or x.shape[0] < 1:
            raise ShapeError(f"expected batch of shape (B, {', '.join(map(str, expected))}), got {x.shape}")
        train = self.mode == "train"
        for layer in self.layers:
            x = layer.forward(x, train)
        if train:
            self._batch_shape = x.shape
        return x

    def backward(self, upstream: Tensor) -> None:
        """Accumulate dLoss/dParam given dLoss/dLogits from the last train-mode forward."""
        if self.frozen:
            raise FrozenModelError("cannot backpropagate into a frozen model")
        if self._batch_shape is None:
            raise StateError("backward called before a train-mode forward")
        g = np.asarray(upstream, dtype=np.float64)
        if g.shape != self._batch_shape:
            raise ShapeError(f"upstream shape {g.shape} != logits shape {self._batch_shape}")
        for layer in reversed(self.layers):
            g = layer.backward(g)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    # -- state
    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.params)

    def snapshot(self) -> Snapshot:
        return Snapshot(
            self.spec,
            tuple(p.value.copy() for p in self.params),
            tuple(b.copy() for b in self.buffers),
        )

    def param_bytes(self) -> bytes:
        return b"".join(a.astype("<f8").tobytes() for a in [p.value for p in self.params] + self.buffers)

    def param_hash(self) -> str:
        return hashlib.sha256(self.param_bytes()).hexdigest()


def build(spec: ModelSpec, seed: int) -> Model:
    rng = np.random.default_rng(seed)
    return Model(spec, _build_layers(spec, rng))


def restore_into(dst: Model, snap: Snapshot) -> None:
    if dst.frozen:
        raise FrozenModelError("cannot restore into a frozen model")
    if snap.spec != dst.spec or len(snap.values) != len(dst.params):
        raise ShapeError("snapshot does not match the destination model spec")
    for p, v in zip(dst.params, snap.values):
        np.copyto(p.value, v)
    for b, v in zip(dst.buffers, snap.buffers):
        np.copyto(b, v)


def freeze(model: Model) -> None:
    model.freeze()


def from_snapshot(snap: Snapshot) -> Model:
    """A fresh eval-mode model holding a copy of ``snap``."""
    m = build(snap.spec, 0)
    restore_into(m, snap)
    m.eval()
    return m


# ---------------------------------------------------------------- checkpoints

_MAGIC = b"DRRCKPT\0"
CHECKPOINT_VERSION = 1


def save_checkpoint(model: Model, path) -> None:
    """Write spec, frozen flag and raw little-endian float64 arrays.

    The output depends only on the model state, so save -> load -> save is
    byte-identical.
    """
    arrays = [p.value for p in model.params] + list(model.buffers)
    header = {
        "version": CHECKPOINT_VERSION,
        "spec": model.spec.to_dict(),
        "frozen": model.frozen,
        "shapes": [list(a.shape) for a in arrays],
        "n_params": len(model.params),
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(hbytes)))
        f.write(hbytes)
        for a in arrays:
            f.write(a.astype("<f8").tobytes())


def load_checkpoint(path) -> Model:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != _MAGIC:
        raise FormatError("not a checkpoint file", offset=0)
    if len(raw) < 12:
        raise FormatError("truncated header length", offset=8)
    (hlen,) = struct.unpack_from("<I", raw, 8)
    try:
        header = json.loads(raw[12:12 + hlen])
    except ValueError as exc:
        raise FormatError(f"bad checkpoint header: {exc}", offset=12) from None
    if header.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {header.get('version')}", offset=12)
    model = build(ModelSpec.from_dict(header["spec"]), 0)
    targets = [p.value for p in model.params] + list(model.buffers)
    if [list(t.shape) for t in targets] != header["shapes"]:
        raise FormatError("checkpoint shapes disagree with its spec", offset=12)
    pos = 12 + hlen
    for t in targets:
        nbytes = t.size * 8
        if pos + nbytes > len(raw):
            raise FormatError("truncated parameter data", offset=pos)
        t[...] = np.frombuffer(raw, dtype="<f8", count=t.size, offset=pos).reshape(t.shape)
        pos += nbytes
    if pos != len(raw):
        raise FormatError("trailing bytes after parameter data", offset=pos)
    if header["frozen"]:
        model.freeze()
    return model
