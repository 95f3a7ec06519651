"""From-scratch neural network engine whose trainable layers live in crossbars.

Forward passes read effective device weights (quantized, pulse-programmed,
perturbed); gradients are computed in full precision against those effective
weights and handed to the configured crossbar write path. In reset-and-set
mode the trainer keeps a real-valued master copy of each weight matrix that
accumulates updates in software, exactly what the erase-then-program write
path consumes. Float (software-only) layers are available for baseline runs
by building the network without a hardware context.
"""

from __future__ import annotations

import sys
import time
from dataclasses import dataclass, field, replace

import numpy as np

from cimsim import device as dev
from cimsim.crossbar import CrossbarConfig, SynapseArray
from cimsim.data import Dataset, batches
from cimsim.device import DeviceParams, SramAdcParams
from cimsim.variation import NO_VARIATION, VariationSpec, stream

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class NetworkError(ValueError):
    """Raised for malformed network specs or mismatched shapes."""


class TrainingStateError(RuntimeError):
    """Raised when backward/infer is called without the required prior state."""


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_dict(cls, raw: dict) -> "LayerSpec":
        raw = dict(raw)
        kind = raw.pop("kind", None)
        if kind is None:
            raise NetworkError(f"layer spec missing 'kind': {raw}")
        return cls(kind, raw)


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    name: str = "custom"

    def to_dicts(self) -> list:
        return [l.to_dict() for l in self.layers]

    @classmethod
    def from_dicts(cls, raw_layers, name="custom") -> "NetworkSpec":
        return cls(tuple(LayerSpec.from_dict(r) for r in raw_layers), name)


def _dense(units):
    return LayerSpec("dense", {"units": units})


def _conv(ch, k, pad=0):
    return LayerSpec("conv2d", {"channels": ch, "kernel": k, "stride": 1, "pad": pad})


def _bn():
    return LayerSpec("batchnorm")


def _act(fn):
    return LayerSpec("activation", {"fn": fn})


def _pool(size=2):
    return LayerSpec("maxpool", {"size": size})


def mlp_784_200_10() -> NetworkSpec:
    """784-200-10 fully connected classifier with batch norm."""
    return NetworkSpec((
        LayerSpec("flatten"),
        _dense(200), _bn(), _act("relu"),
        _dense(10), _bn(), _act("softmax"),
    ), "mlp_784_200_10")


def lenet5() -> NetworkSpec:
    """Classic 2-conv / 2-pool / 3-dense topology with ReLU and batch norm."""
    return NetworkSpec((
        _conv(6, 5), _bn(), _act("relu"), _pool(),
        _conv(16, 5), _bn(), _act("relu"), _pool(),
        LayerSpec("flatten"),
        _dense(120), _bn(), _act("relu"),
        _dense(84), _bn(), _act("relu"),
        _dense(10), _bn(), _act("softmax"),
    ), "lenet5")


def vgg16(num_classes: int = 10) -> NetworkSpec:
    """VGG-16 graph for 32x32 inputs (builder for offline/import flows)."""
    layers = []
    for block in ((64, 64), (128, 128), (256, 256, 256), (512, 512, 512), (512, 512, 512)):
        for ch in block:
            layers += [_conv(ch, 3, pad=1), _bn(), _act("relu")]
        layers.append(_pool())
    layers += [
        LayerSpec("flatten"),
        _dense(512), _bn(), _act("relu"), LayerSpec("dropout", {"rate": 0.5}),
        _dense(512), _bn(), _act("relu"), LayerSpec("dropout", {"rate": 0.5}),
        _dense(num_classes), _bn(), _act("softmax"),
    ]
    return NetworkSpec(tuple(layers), "vgg16")


def c4w1(num_classes: int = 4) -> NetworkSpec:
    """Compact CNN: three conv combinations plus one dense output layer."""
    layers = []
    for ch in (32, 64, 128):
        layers += [_conv(ch, 3, pad=1), _bn(), _act("relu"),
                   LayerSpec("dropout", {"rate": 0.25}), _pool()]
    layers += [LayerSpec("flatten"), _dense(num_classes), _bn(), _act("softmax")]
    return NetworkSpec(tuple(layers), "c4w1")


NETWORK_PRESETS = {
    "mlp_784_200_10": mlp_784_200_10,
    "lenet5": lenet5,
    "vgg16": vgg16,
    "c4w1": c4w1,
}


@dataclass(frozen=True)
class HardwareContext:
    """Device technology plus array policy shared by all crossbar layers.

    device_resident drops the software master copy in reset-and-set mode:
    every update rewrites quantize(programmed - delta) in place, losing
    whatever the grid cannot represent (in-situ training). The default keeps
    the full-precision master that the weight-update block computes.
    """

    device: DeviceParams
    crossbar: CrossbarConfig
    c2c: VariationSpec = NO_VARIATION
    c2c_write: VariationSpec | None = None
    d2d: VariationSpec = NO_VARIATION
    seed: int = 0
    device_resident: bool = False

    def read_spec(self) -> VariationSpec:
        return self.c2c

    def write_spec(self) -> VariationSpec:
        return self.c2c if self.c2c_write is None else self.c2c_write


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "sgd"
    learning_rate: float = 0.01
    epochs: int = 1
    batch_size: int = 64
    loss: str = "cross_entropy"
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    rho: float = 0.9
    eps: float = 1e-8
    eval_batch: int = 512

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise NetworkError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise NetworkError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise NetworkError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer not in ("sgd", "adam", "rmsprop"):
            raise NetworkError(f"unknown optimizer {self.optimizer!r}")
        if self.loss != "cross_entropy":
            raise NetworkError(f"unknown loss {self.loss!r}")


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

class Layer:
    trainable = False
    kind = "?"

    def forward(self, x, train: bool):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def grads(self) -> dict:
        return {}

    def apply_update(self, deltas: dict):
        pass

    def out_shape(self, in_shape):
        return in_shape


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train):
        self._shape = x.shape
        return x.reshape(len(x), -1)

    def backward(self, grad):
        return grad.reshape(self._shape)

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)


class Activation(Layer):
    kind = "activation"

    def __init__(self, fn: str):
        if fn not in ("relu", "sigmoid", "softmax"):
            raise NetworkError(f"unknown activation {fn!r}")
        self.fn = fn

    def forward(self, x, train):
        if self.fn == "relu":
            self._mask = x > 0
            return x * self._mask
        if self.fn == "sigmoid":
            self._out = 1.0 / (1.0 + np.exp(-x))
            return self._out
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        self._out = e / e.sum(axis=-1, keepdims=True)
        return self._out

    def backward(self, grad):
        if self.fn == "relu":
            return grad * self._mask
        if self.fn == "sigmoid":
            return grad * self._out * (1.0 - self._out)
        p = self._out
        return p * (grad - np.sum(grad * p, axis=-1, keepdims=True))


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate: float, rng: np.random.Generator):
        if not 0.0 <= rate < 1.0:
            raise NetworkError(f"dropout rate {rate} outside [0, 1)")
        self.rate = rate
        self.rng = rng

    def forward(self, x, train):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        self._mask = (self.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, grad):
        return grad if self._mask is None else grad * self._mask


class MaxPool(Layer):
    kind = "maxpool"

    def __init__(self, size: int = 2):
        self.size = size

    def forward(self, x, train):
        s = self.size
        b, h, w, c = x.shape
        if h % s or w % s:
            raise NetworkError(f"pool size {s} does not divide spatial dims {(h, w)}")
        self._x = x
        view = x.reshape(b, h // s, s, w // s, s, c)
        out = view.max(axis=(2, 4))
        self._out = out
        return out

    def backward(self, grad):
        s = self.size
        b, h, w, c = self._x.shape
        view = self._x.reshape(b, h // s, s, w // s, s, c)
        mx = self._out[:, :, None, :, None, :]
        mask = view == mx
        counts = mask.sum(axis=(2, 4), keepdims=True)
        g = mask * (grad[:, :, None, :, None, :] / counts)
        return g.reshape(b, h, w, c)

    def out_shape(self, in_shape):
        h, w, c = in_shape
        return (h // self.size, w // self.size, c)


class BatchNorm(Layer):
    """Per-feature scale (nu) and shift (xi) with running statistics.

    Train mode normalizes by batch statistics and folds them into the running
    averages with momentum 0.1; inference uses the running statistics only.
    For conv inputs the statistics are per channel over batch and space.
    """

    kind = "batchnorm"
    trainable = True

    def __init__(self, features: int):
        self.nu = np.ones(features)
        self.xi = np.zeros(features)
        self.running_mean = np.zeros(features)
        self.running_var = np.ones(features)
        self.momentum = BN_MOMENTUM
        self.eps = BN_EPS

    def forward(self, x, train):
        self._conv_shape = x.shape if x.ndim == 4 else None
        flat = x.reshape(-1, x.shape[-1])
        if train:
            if len(flat) < 2:
                raise NetworkError("batch norm requires batch size >= 2 in train mode")
            mean = flat.mean(axis=0)
            var = flat.var(axis=0)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var
        else:
            mean, var = self.running_mean, self.running_var
        self._inv_std = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (flat - mean) * self._inv_std
        self._train = train
        out = self.nu * self._xhat + self.xi
        return out.reshape(x.shape)

    def backward(self, grad):
        shape = grad.shape
        g = grad.reshape(-1, shape[-1])
        n = len(g)
        self._g_nu = np.sum(g * self._xhat, axis=0)
        self._g_xi = np.sum(g, axis=0)
        if not self._train:
            gx = g * self.nu * self._inv_std
            return gx.reshape(shape)
        dxhat = g * self.nu
        gx = (self._inv_std / n) * (
            n * dxhat
            - dxhat.sum(axis=0)
            - self._xhat * np.sum(dxhat * self._xhat, axis=0)
        )
        return gx.reshape(shape)

    def grads(self):
        return {"nu": self._g_nu, "xi": self._g_xi}

    def apply_update(self, deltas):
        self.nu -= deltas["nu"]
        self.xi -= deltas["xi"]


class _WeightedLayer(Layer):
    """Shared machinery for dense/conv layers with optional crossbar backing."""

    trainable = True

    def _init_weights(self, fan_in, shape, rng):
        lim = np.sqrt(6.0 / fan_in)
        return rng.uniform(-lim, lim, shape)

    def _attach_array(self, w0, hardware: HardwareContext, array_id: int):
        rows, cols = w0.shape
        cfg = replace(hardware.crossbar, rows=rows, cols=cols)
        self.array = SynapseArray.create(
            hardware.device, cfg,
            c2c_read=hardware.read_spec(), c2c_write=hardware.write_spec(),
            d2d_spec=hardware.d2d, seed=hardware.seed, array_id=array_id,
        )
        self.update_mode = cfg.update_mode
        # the weight-update block computes new weights in software by default;
        # accumulated and linear modes are device-resident by construction
        self.master = (w0.copy()
                       if self.update_mode == "reset_and_set"
                       and not hardware.device_resident else None)
        self.array.initialize_weights(w0)

    def _effective_weights(self):
        if self.array is None:
            return self.w
        if (self.array.cfg.input_encoding != "amplitude"
                or self.array.cfg.adc_bits is not None
                or self.array.cfg.sram_adc is not None):
            return None  # must go through array.mac
        return self.array.read_weights()

    def _matmul(self, x2d):
        """x2d @ effective weights, via array.mac when peripherals are configured."""
        weff = self._effective_weights()
        if weff is None:
            y = self.array.mac(x2d)
            self._w_used = self.array.last_weights
        else:
            y = x2d @ weff
            self._w_used = weff
        return y

    def _apply_weight_delta(self, dw):
        if self.array is None:
            self.w -= dw
            return
        if self.update_mode == "reset_and_set":
            if self.master is not None:
                self.master = np.clip(self.master - dw, -self.array.weight_limit,
                                      self.array.weight_limit)
                # rewrite only where the step is nonzero (the write-path
                # guard); with write noise off a full rewrite is identical
                mask = (dw != 0) if self.array.c2c_write.enabled else None
                self.array.write_weights(self.master, mask=mask)
            else:
                # in-situ: the device state is the only weight memory
                lim = self.array.weight_limit
                target = np.clip(self.array.programmed_weights() - dw, -lim, lim)
                self.array.write_weights(target, mask=dw != 0)
        elif self.update_mode == "accumulated":
            self.array.accumulated_update(dw)
        else:
            self.array.linear_update(dw)

    def reprogram(self, w: np.ndarray):
        """Load externally supplied real weights through the device write path."""
        if self.array is None:
            self.w = w.copy()
            return
        if self.master is not None:
            self.master = np.clip(w, -self.array.weight_limit, self.array.weight_limit)
            self.array.write_weights(self.master)
        else:
            self.array.initialize_weights(w)


class Dense(_WeightedLayer):
    kind = "dense"

    def __init__(self, in_dim, units, rng, hardware=None, array_id=0, use_bias=True):
        self.in_dim, self.units = in_dim, units
        w0 = self._init_weights(in_dim, (in_dim, units), rng)
        self.array = None
        self.w = None
        if hardware is not None:
            self._attach_array(w0, hardware, array_id)
        else:
            self.w = w0
        self.b = np.zeros(units) if use_bias else None
        self.sram_adc: SramAdcParams | None = None
        self.sram_full_scale = 1.0

    def forward(self, x, train):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise NetworkError(f"dense layer expected (*, {self.in_dim}), got {x.shape}")
        self._x = x
        if self.sram_adc is not None:
            y = self._sram_forward(x)
        else:
            y = self._matmul(x)
        if self.b is not None:
            y = y + self.b
        return y

    def _sram_forward(self, x):
        """Bitline readout: positive/negative columns digitized separately.

        The straight-through estimator is used in backward, so training can
        recover from the transfer distortion.
        """
        weff = self._effective_weights()
        self._w_used = weff
        w_pos = np.maximum(weff, 0.0)
        w_neg = np.maximum(-weff, 0.0)
        s, fs = self.sram_adc, self.sram_full_scale
        half = 2.0 ** (s.adc_bits - 1)

        def convert(y):
            v = s.v_min + np.clip(y / fs, 0.0, 1.0) * (s.v_max - s.v_min)
            return dev.mac_nlop(v, s) / half * fs

        return convert(x @ w_pos) - convert(x @ w_neg)

    def backward(self, grad):
        self._g_w = self._x.T @ grad
        if self.b is not None:
            self._g_b = grad.sum(axis=0)
        return grad @ self._w_used.T

    def grads(self):
        out = {"w": self._g_w}
        if self.b is not None:
            out["b"] = self._g_b
        return out

    def apply_update(self, deltas):
        self._apply_weight_delta(deltas["w"])
        if self.b is not None and "b" in deltas:
            self.b -= deltas["b"]

    def out_shape(self, in_shape):
        return (self.units,)


class Conv2D(_WeightedLayer):
    """Valid/same convolution via im2col; the kernel matrix is crossbar-resident."""

    kind = "conv2d"

    def __init__(self, in_shape, channels, kernel, rng, stride=1, pad=0,
                 hardware=None, array_id=0, use_bias=True):
        h, w, c_in = in_shape
        if kernel < 1:
            raise NetworkError(f"kernel must be >= 1, got {kernel}")
        self.kernel, self.stride, self.pad = kernel, stride, pad
        self.c_in, self.channels = c_in, channels
        self.in_shape = in_shape
        fan_in = kernel * kernel * c_in
        w0 = self._init_weights(fan_in, (fan_in, channels), rng)
        self.array = None
        self.w = None
        if hardware is not None:
            self._attach_array(w0, hardware, array_id)
        else:
            self.w = w0
        self.b = np.zeros(channels) if use_bias else None

    def _cols(self, x):
        k, s = self.kernel, self.stride
        if self.pad:
            x = np.pad(x, ((0, 0), (self.pad, self.pad), (self.pad, self.pad), (0, 0)))
        win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
        win = win[:, ::s, ::s]  # (B, OH, OW, C, k, k)
        win = win.transpose(0, 1, 2, 4, 5, 3)  # (B, OH, OW, k, k, C)
        self._col_shape = win.shape
        return win.reshape(-1, k * k * self.c_in)

    def forward(self, x, train):
        if x.ndim != 4 or x.shape[1:] != self.in_shape:
            raise NetworkError(f"conv layer expected (*, {self.in_shape}), got {x.shape}")
        self._x_shape = x.shape
        cols = self._cols(x)
        self._cols_cache = cols
        y = self._matmul(cols)
        if self.b is not None:
            y = y + self.b
        b, oh, ow = self._col_shape[:3]
        return y.reshape(b, oh, ow, self.channels)

    def backward(self, grad):
        b, oh, ow, _ = grad.shape
        g2 = grad.reshape(-1, self.channels)
        self._g_w = self._cols_cache.T @ g2
        if self.b is not None:
            self._g_b = g2.sum(axis=0)
        dcols = (g2 @ self._w_used.T).reshape(self._col_shape)
        k, s, p = self.kernel, self.stride, self.pad
        bh, h, w, c = self._x_shape
        dxp = np.zeros((bh, h + 2 * p, w + 2 * p, c))
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + oh * s:s, j:j + ow * s:s, :] += dcols[:, :, :, i, j, :]
        return dxp[:, p:p + h, p:p + w, :] if p else dxp

    def grads(self):
        out = {"w": self._g_w}
        if self.b is not None:
            out["b"] = self._g_b
        return out

    def apply_update(self, deltas):
        self._apply_weight_delta(deltas["w"])
        if self.b is not None and "b" in deltas:
            self.b -= deltas["b"]

    def out_shape(self, in_shape):
        h, w, _ = in_shape
        oh = (h + 2 * self.pad - self.kernel) // self.stride + 1
        ow = (w + 2 * self.pad - self.kernel) // self.stride + 1
        if oh < 1 or ow < 1:
            raise NetworkError(f"conv output collapses on input {in_shape}")
        return (oh, ow, self.channels)


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------

class Network:
    def __init__(self, layers, spec: NetworkSpec, input_shape):
        self.layers = layers
        self.spec = spec
        self.input_shape = tuple(input_shape)
        self._forward_done = False

    def forward(self, x, train=False):
        x = np.asarray(x, dtype=float)
        if x.ndim == len(self.input_shape):
            x = x[None]
        for layer in self.layers:
            x = layer.forward(x, train)
        self._forward_done = True
        return x

    def backward(self, grad):
        if not self._forward_done:
            raise TrainingStateError("backward called before a training forward pass")
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def trainable_layers(self):
        return [(i, l) for i, l in enumerate(self.layers) if l.trainable]

    def enable_sram_adc(self, params: SramAdcParams, calibration_x: np.ndarray):
        """Attach the nonlinear bitline ADC to every dense layer.

        Full scale per layer is calibrated to the largest positive/negative
        column sum observed on the calibration batch, so the transfer covers
        the layer's operating range deterministically.
        """
        x = np.asarray(calibration_x, dtype=float)
        if x.ndim == len(self.input_shape):
            x = x[None]
        for layer in self.layers:
            if isinstance(layer, Dense):
                weff = layer.w if layer.array is None else layer.array.programmed_weights()
                yp = np.abs(x) @ np.maximum(weff, 0.0)
                yn = np.abs(x) @ np.maximum(-weff, 0.0)
                layer.sram_adc = params
                layer.sram_full_scale = float(max(yp.max(), yn.max(), 1e-9))
            x = layer.forward(x, train=False)

    def disable_sram_adc(self):
        for layer in self.layers:
            if isinstance(layer, Dense):
                layer.sram_adc = None


def build_network(spec: NetworkSpec, input_shape, hardware: HardwareContext | None = None,
                  seed: int = 0) -> Network:
    """Instantiate layers with propagated shapes and seeded initialization."""
    rng = stream(seed, 0x1A7E)
    shape = tuple(input_shape)
    layers = []
    array_id = 0
    for ls in spec.layers:
        kind, p = ls.kind, ls.params
        if kind == "dense":
            if len(shape) != 1:
                raise NetworkError(
                    f"dense layer needs flat input, got {shape} (insert flatten)")
            layer = Dense(shape[0], p["units"], rng, hardware, array_id,
                          use_bias=p.get("bias", True))
            array_id += 1
        elif kind == "conv2d":
            if len(shape) != 3:
                raise NetworkError(f"conv2d needs (H, W, C) input, got {shape}")
            layer = Conv2D(shape, p["channels"], p["kernel"], rng,
                           stride=p.get("stride", 1), pad=p.get("pad", 0),
                           hardware=hardware, array_id=array_id,
                           use_bias=p.get("bias", True))
            array_id += 1
        elif kind == "batchnorm":
            layer = BatchNorm(shape[-1])
        elif kind == "activation":
            layer = Activation(p["fn"])
        elif kind == "maxpool":
            layer = MaxPool(p.get("size", 2))
        elif kind == "dropout":
            layer = Dropout(p.get("rate", 0.5), stream(seed, 0xD0, len(layers)))
        elif kind == "flatten":
            layer = Flatten()
        else:
            raise NetworkError(f"unknown layer kind {kind!r}")
        shape = layer.out_shape(shape)
        layers.append(layer)
    return Network(layers, spec, input_shape)


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

class Optimizer:
    """Maps gradients to positive weight deltas; weights update as w <- w - delta."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.state = {}
        self.t = 0

    def step(self, grads_by_key: dict) -> dict:
        self.t += 1
        return {key: self._delta(key, g) for key, g in grads_by_key.items()}

    def _delta(self, key, g):
        raise NotImplementedError


class Sgd(Optimizer):
    def _delta(self, key, g):
        return self.cfg.learning_rate * g


class RmsProp(Optimizer):
    def _delta(self, key, g):
        v = self.state.get(key)
        if v is None:
            v = np.zeros_like(g)
        v = self.cfg.rho * v + (1 - self.cfg.rho) * g * g
        self.state[key] = v
        return self.cfg.learning_rate * g / (np.sqrt(v) + self.cfg.eps)


class Adam(Optimizer):
    def _delta(self, key, g):
        m, v = self.state.get(key, (None, None))
        if m is None:
            m, v = np.zeros_like(g), np.zeros_like(g)
        b1, b2 = self.cfg.beta1, self.cfg.beta2
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        self.state[key] = (m, v)
        mhat = m / (1 - b1 ** self.t)
        vhat = v / (1 - b2 ** self.t)
        return self.cfg.learning_rate * mhat / (np.sqrt(vhat) + self.cfg.eps)


def make_optimizer(cfg: TrainConfig) -> Optimizer:
    return {"sgd": Sgd, "adam": Adam, "rmsprop": RmsProp}[cfg.optimizer](cfg)


def optimizer_step(optimizer: Optimizer, grads_by_key: dict) -> dict:
    """Functional form: gradients in, weight deltas out."""
    return optimizer.step(grads_by_key)


# ---------------------------------------------------------------------------
# Loss, training, evaluation
# ---------------------------------------------------------------------------

def cross_entropy(probs: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and the gradient at the softmax probabilities."""
    n = len(labels)
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), labels] = 1.0
    loss = -float(np.mean(np.log(np.maximum(probs[np.arange(n), labels], 1e-12))))
    grad = -onehot / np.maximum(probs, 1e-12) / n
    return loss, grad


@dataclass
class RunRecord:
    rows: list = field(default_factory=list)

    def append(self, epoch, train_loss, train_acc, test_acc, seconds):
        self.rows.append({
            "epoch": int(epoch),
            "train_loss": float(train_loss),
            "train_acc": float(train_acc),
            "test_acc": float(test_acc),
            "seconds": float(seconds),
        })

    @property
    def final_test_acc(self) -> float:
        return self.rows[-1]["test_acc"] if self.rows else float("nan")

    def to_csv(self, path: str):
        with open(path, "w") as fh:
            fh.write("epoch,train_loss,train_acc,test_acc,seconds\n")
            for r in self.rows:
                fh.write(f"{r['epoch']},{r['train_loss']:.6f},{r['train_acc']:.6f},"
                         f"{r['test_acc']:.6f},{r['seconds']:.3f}\n")


def evaluate(net: Network, ds: Dataset, batch: int = 512) -> float:
    """Top-1 accuracy with a plain inference forward pass (running BN stats)."""
    if len(ds) == 0:
        raise NetworkError("cannot evaluate on an empty dataset")
    correct = 0
    for start in range(0, len(ds), batch):
        probs = net.forward(ds.images[start:start + batch], train=False)
        correct += int(np.sum(np.argmax(probs, axis=1) == ds.labels[start:start + batch]))
    return correct / len(ds)


def train(net: Network, train_ds: Dataset, test_ds: Dataset,
          cfg: TrainConfig, verbose: bool = False) -> RunRecord:
    """Mini-batch training loop with per-epoch test evaluation.

    Retraining is the same loop started from a network whose weights were
    loaded rather than freshly initialized.
    """
    if len(train_ds) == 0:
        raise NetworkError("training dataset is empty")
    opt = make_optimizer(cfg)
    record = RunRecord()
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        losses, hits, seen = [], 0, 0
        for xb, yb in batches(train_ds, cfg.batch_size, cfg.seed, epoch):
            probs = net.forward(xb, train=True)
            loss, grad = cross_entropy(probs, yb)
            net.backward(grad)
            grads = {}
            for i, layer in net.trainable_layers():
                for name, g in layer.grads().items():
                    grads[(i, name)] = g
            deltas = opt.step(grads)
            for i, layer in net.trainable_layers():
                layer.apply_update({name: deltas[(i, name)]
                                    for name in layer.grads().keys()})
            losses.append(loss)
            hits += int(np.sum(np.argmax(probs, axis=1) == yb))
            seen += len(yb)
        test_acc = evaluate(net, test_ds, cfg.eval_batch)
        record.append(epoch, np.mean(losses), hits / seen, test_acc,
                      time.perf_counter() - t0)
        if verbose:
            r = record.rows[-1]
            print(f"epoch {epoch}: loss={r['train_loss']:.4f} "
                  f"train={r['train_acc']:.4f} test={r['test_acc']:.4f} "
                  f"({r['seconds']:.1f}s)", file=sys.stderr, flush=True)
    return record


def infer(net: Network, ds: Dataset, batch: int = 512) -> float:
    """Single forward pass per sample; reports top-1 accuracy."""
    return evaluate(net, ds, batch)


retrain = train
