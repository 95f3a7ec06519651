"""Synaptic crossbar array: quantization, write paths, and the MAC operation.

Two array schemes are supported. In the two-device scheme (2D1S) each weight
is the difference between a device in a positive and one in a negative array;
the reset-and-set write path erases both devices to g_min and programs exactly
one of them with potentiation pulses. In the one-device scheme (1D1S) a single
array is read against a reference column of fixed conductance, which halves
the representable weight range.

All computation happens in normalized weight space; conductances in siemens
are materialized only as the stored state. The array keeps two views of each
device: the physical conductance (including programming noise) used by reads,
and the controller's intended level (noiseless) used by subsequent updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from cimsim import device as dev
from cimsim.device import DeviceParams, SramAdcParams
from cimsim.variation import NO_VARIATION, D2DMap, VariationSpec, sample_d2d, stream

TWO_DEVICE = "two_device"
ONE_DEVICE = "one_device"
UPDATE_MODES = ("reset_and_set", "accumulated", "linear")


class CrossbarError(ValueError):
    """Domain error for invalid crossbar configuration or operands."""


@dataclass(frozen=True)
class CrossbarConfig:
    """Static description of one crossbar array and its peripheral behavior."""

    rows: int
    cols: int
    scheme: str = TWO_DEVICE
    bit_precision: int = 1
    update_mode: str = "reset_and_set"
    g_ref: float | None = None
    accumulate_threshold: float | None = None
    adc_bits: int | None = None
    adc_full_scale: float | None = None
    sram_adc: SramAdcParams | None = None
    input_encoding: str = "amplitude"
    input_bits: int = 8
    tile: int = 128

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise CrossbarError(f"invalid array shape ({self.rows}, {self.cols})")
        if self.scheme not in (TWO_DEVICE, ONE_DEVICE):
            raise CrossbarError(f"unknown scheme {self.scheme!r}")
        if self.bit_precision < 1:
            raise CrossbarError(f"bit_precision must be >= 1, got {self.bit_precision}")
        if self.update_mode not in UPDATE_MODES:
            raise CrossbarError(f"unknown update_mode {self.update_mode!r}")
        if self.input_encoding not in ("amplitude", "bit_serial"):
            raise CrossbarError(f"unknown input_encoding {self.input_encoding!r}")
        if self.tile < 1:
            raise CrossbarError(f"tile must be >= 1, got {self.tile}")

    def weight_limit(self, w_max: float) -> float:
        """Largest representable |weight|: halved in the one-device scheme."""
        return w_max if self.scheme == TWO_DEVICE else w_max / 2.0

    def default_p_max(self) -> int:
        """Pulse budget covering every quantizer level: 2**(b+1) - 2."""
        return 2 ** (self.bit_precision + 1) - 2

    def resolve_device(self, params: DeviceParams) -> DeviceParams:
        return params if params.p_max is not None else params.with_p_max(self.default_p_max())

    def reference_conductance(self, params: DeviceParams) -> float:
        if self.g_ref is not None:
            g = self.g_ref
        else:
            g = 0.5 * (params.g_max - params.g_min)
        if not (0 < g <= params.g_max):
            raise CrossbarError(f"g_ref={g} outside (0, g_max={params.g_max}]")
        return g


def n_levels(b: int, scheme: str = TWO_DEVICE) -> int:
    """Number of representable signed weight levels for bit precision b."""
    if b == 1:
        return 2
    return 2 ** (b + 1) - 1 if scheme == TWO_DEVICE else 2 ** b


def quantization_step(b: int, scheme: str = TWO_DEVICE, w_max: float = 1.0) -> float:
    """Spacing of the signed weight grid (the full range for b = 1)."""
    if b == 1:
        return 2.0 * (w_max if scheme == TWO_DEVICE else w_max / 2.0)
    return w_max / (2 ** b - 1)


def quantize_weight(w, b: int, scheme: str = TWO_DEVICE, w_max: float = 1.0):
    """Quantize real weights onto the representable level grid.

    b = 1 maps to the two-level set {-lim, +lim} by sign (ties to +). For
    b > 1 the two-device grid has 2**(b+1) - 1 uniform levels on
    [-w_max, +w_max]; the one-device grid has 2**b levels on
    [-w_max/2, +w_max/2] (which excludes zero). Ties round toward +inf.
    """
    w = np.asarray(w, dtype=float)
    lim = w_max if scheme == TWO_DEVICE else w_max / 2.0
    w = np.clip(w, -lim, lim)
    if b == 1:
        out = np.where(w >= 0, lim, -lim)
        return float(out) if out.ndim == 0 else out
    step = quantization_step(b, scheme, w_max)
    if scheme == TWO_DEVICE:
        k = np.floor(w / step + 0.5)
        out = np.clip(k, -(2 ** b - 1), 2 ** b - 1) * step
    else:
        k = np.floor((w + lim) / step + 0.5)
        out = np.clip(k, 0, 2 ** b - 1) * step - lim
    return float(out) if out.ndim == 0 else out


@dataclass
class SynapseArray:
    """Programmed state of one crossbar plus its frozen D2D offset maps.

    g_pos / g_neg hold physical conductances (g_neg is None for 1D1S);
    prog_pos / prog_neg hold the controller's intended device weights in
    normalized weight space, without programming noise.
    """

    device: DeviceParams
    cfg: CrossbarConfig
    g_pos: np.ndarray
    g_neg: np.ndarray | None
    prog_pos: np.ndarray
    prog_neg: np.ndarray | None
    d2d_pos: D2DMap
    d2d_neg: D2DMap | None
    c2c_read: VariationSpec = NO_VARIATION
    c2c_write: VariationSpec = NO_VARIATION
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    update_buffer: np.ndarray | None = None
    last_weights: np.ndarray | None = None

    @classmethod
    def create(cls, device_params: DeviceParams, cfg: CrossbarConfig,
               c2c_read: VariationSpec = NO_VARIATION,
               c2c_write: VariationSpec = NO_VARIATION,
               d2d_spec: VariationSpec = NO_VARIATION,
               seed: int = 0, array_id: int = 0) -> "SynapseArray":
        """Fresh array with every device erased to g_min (1D1S: parked at g_ref)."""
        params = cfg.resolve_device(device_params)
        shape = (cfg.rows, cfg.cols)
        d2d_pos = sample_d2d(shape, d2d_spec, _derive_seed(seed, array_id, 0))
        if cfg.scheme == TWO_DEVICE:
            g_pos = np.full(shape, params.g_min)
            g_neg = np.full(shape, params.g_min)
            prog_pos = np.full(shape, params.w_min)
            prog_neg = np.full(shape, params.w_min)
            d2d_neg = sample_d2d(shape, d2d_spec, _derive_seed(seed, array_id, 1))
        else:
            g_ref = cfg.reference_conductance(params)
            g_pos = np.full(shape, np.clip(g_ref, params.g_min, params.g_max))
            g_neg = None
            prog_pos = dev.weight_from_conductance(g_pos, params)
            prog_neg = None
            d2d_neg = None
        return cls(
            device=params, cfg=cfg, g_pos=g_pos, g_neg=g_neg,
            prog_pos=prog_pos, prog_neg=prog_neg,
            d2d_pos=d2d_pos, d2d_neg=d2d_neg,
            c2c_read=c2c_read, c2c_write=c2c_write,
            rng=stream(_derive_seed(seed, array_id, 2)),
            update_buffer=np.zeros(shape),
        )

    # -- geometry helpers -------------------------------------------------

    @property
    def shape(self):
        return (self.cfg.rows, self.cfg.cols)

    @property
    def weight_limit(self) -> float:
        return self.cfg.weight_limit(self.device.w_max)

    def reference_weight(self) -> float:
        g_ref = self.cfg.reference_conductance(self.device)
        return float(dev.weight_from_conductance(
            np.clip(g_ref, self.device.g_min, self.device.g_max), self.device))

    # -- write paths -------------------------------------------------------

    def _programmed_magnitude(self, magnitude: np.ndarray) -> np.ndarray:
        """Device weight reached by pulse-programming each target magnitude.

        For moderate bit widths every representable magnitude is one of few
        quantizer levels, so the pulse inversion is evaluated once per level
        and looked up; wide grids fall back to direct evaluation.
        """
        b = self.cfg.bit_precision
        if self.cfg.scheme != TWO_DEVICE or b > 12:
            return dev.ltp_weight(dev.pulses_for_weight(magnitude, self.device), self.device)
        if getattr(self, "_mag_lut", None) is None:
            if b == 1:
                levels = np.array([0.0, self.weight_limit])
                self._mag_step = self.weight_limit
            else:
                self._mag_step = quantization_step(b, self.cfg.scheme, self.device.w_max)
                levels = np.arange(2 ** b) * self._mag_step
            self._mag_lut = dev.ltp_weight(
                dev.pulses_for_weight(np.clip(levels, 0, self.device.w_max), self.device),
                self.device)
        idx = np.rint(magnitude / self._mag_step).astype(np.intp)
        return self._mag_lut[np.clip(idx, 0, len(self._mag_lut) - 1)]

    def write_weights(self, target: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
        """Reset-and-set programming of target weights; returns the quantized grid.

        Per cell under the mask: quantize the target, erase both devices to
        g_min, invert the potentiation curve for the magnitude, and program
        pulses into the positive device for positive weights or the negative
        device for negative ones (a zero target leaves both erased). Write
        noise perturbs the physical conductance of every rewritten device.
        Cells outside the mask keep their conductance untouched.
        """
        target = np.asarray(target, dtype=float)
        if target.shape != self.shape:
            raise CrossbarError(f"target shape {target.shape} != array shape {self.shape}")
        full = mask is None or bool(mask.all())
        p = self.device
        g_scale = (p.g_max - p.g_min) / (p.w_max - p.w_min)

        if self.cfg.scheme == TWO_DEVICE and self.cfg.bit_precision == 1:
            # two-level write: one comparison decides device roles
            top = float(self._programmed_magnitude(np.array([self.weight_limit]))[0])
            pos_sel = target >= 0
            w_q = np.where(pos_sel, self.weight_limit, -self.weight_limit)
            new_pos = np.where(pos_sel, top, p.w_min)
            new_neg = np.where(pos_sel, p.w_min, top)
            noisy_pos = self._to_conductance(self._with_write_noise(new_pos), g_scale)
            noisy_neg = self._to_conductance(self._with_write_noise(new_neg), g_scale)
            if full:
                self.prog_pos, self.prog_neg = new_pos, new_neg
                self.g_pos, self.g_neg = noisy_pos, noisy_neg
            else:
                self.prog_pos = np.where(mask, new_pos, self.prog_pos)
                self.prog_neg = np.where(mask, new_neg, self.prog_neg)
                self.g_pos = np.where(mask, noisy_pos, self.g_pos)
                self.g_neg = np.where(mask, noisy_neg, self.g_neg)
            return w_q

        w_q = quantize_weight(target, self.cfg.bit_precision, self.cfg.scheme, p.w_max)

        if self.cfg.scheme == TWO_DEVICE:
            programmed = self._programmed_magnitude(np.abs(w_q))
            new_pos = np.where(w_q > 0, programmed, p.w_min)
            new_neg = np.where(w_q < 0, programmed, p.w_min)
            noisy_pos = self._to_conductance(self._with_write_noise(new_pos), g_scale)
            noisy_neg = self._to_conductance(self._with_write_noise(new_neg), g_scale)
            if full:
                self.prog_pos, self.prog_neg = new_pos, new_neg
                self.g_pos, self.g_neg = noisy_pos, noisy_neg
            else:
                self.prog_pos = np.where(mask, new_pos, self.prog_pos)
                self.prog_neg = np.where(mask, new_neg, self.prog_neg)
                self.g_pos = np.where(mask, noisy_pos, self.g_pos)
                self.g_neg = np.where(mask, noisy_neg, self.g_neg)
        else:
            dev_target = np.clip(w_q + self.reference_weight(), 0.0, p.w_max)
            pulses = dev.pulses_for_weight(dev_target, p)
            programmed = dev.ltp_weight(pulses, p)
            noisy = self._to_conductance(self._with_write_noise(programmed), g_scale)
            if full:
                self.prog_pos = programmed
                self.g_pos = noisy
            else:
                self.prog_pos = np.where(mask, programmed, self.prog_pos)
                self.g_pos = np.where(mask, noisy, self.g_pos)
        return w_q

    def _to_conductance(self, w_dev: np.ndarray, g_scale: float) -> np.ndarray:
        g = w_dev * g_scale
        return np.clip(g, self.device.g_min, self.device.g_max, out=g)

    def accumulated_update(self, delta: np.ndarray) -> int:
        """Buffer weight changes; rewrite only cells whose buffer crossed threshold.

        The threshold defaults to the mean absolute buffered change. Written
        cells keep the quantization residual in the buffer so no part of the
        accumulated change is silently dropped. Returns the number of cells
        written this call.
        """
        delta = np.asarray(delta, dtype=float)
        if delta.shape != self.shape:
            raise CrossbarError(f"delta shape {delta.shape} != array shape {self.shape}")
        self.update_buffer = self.update_buffer + delta
        if self.cfg.accumulate_threshold is not None:
            thr = self.cfg.accumulate_threshold
        else:
            thr = float(np.mean(np.abs(self.update_buffer)))
        if thr <= 0:
            return 0
        mask = np.abs(self.update_buffer) >= thr
        if not mask.any():
            return 0
        desired = np.clip(self.programmed_weights() - self.update_buffer,
                          -self.weight_limit, self.weight_limit)
        w_q = self.write_weights(desired, mask)
        residual = w_q - desired
        self.update_buffer = np.where(mask, residual, self.update_buffer)
        return int(mask.sum())

    def linear_update(self, delta: np.ndarray) -> int:
        """Conventional in-place update assuming a linear pulse-to-weight relation.

        Each device moves toward its new target on the uniform 2**b-level grid
        spanning [w_min, w_max]; changes smaller than half a grid step vanish
        in the rounding. No reset step. Returns the number of devices rewritten.
        """
        delta = np.asarray(delta, dtype=float)
        if delta.shape != self.shape:
            raise CrossbarError(f"delta shape {delta.shape} != array shape {self.shape}")
        p = self.device
        b = self.cfg.bit_precision
        step = p.weight_range if b == 1 else p.weight_range / (2 ** b - 1)

        def snap(w):
            k = np.floor((w - p.w_min) / step + 0.5)
            return np.clip(k * step + p.w_min, p.w_min, p.w_max)

        if self.cfg.scheme == TWO_DEVICE:
            new_pos = snap(self.prog_pos - delta / 2.0)
            new_neg = snap(self.prog_neg + delta / 2.0)
            changed = (new_pos != self.prog_pos) | (new_neg != self.prog_neg)
            self.prog_pos, self.prog_neg = new_pos, new_neg
            self.g_pos = np.where(
                changed, dev.conductance_from_weight(self._with_write_noise(new_pos), p),
                self.g_pos)
            self.g_neg = np.where(
                changed, dev.conductance_from_weight(self._with_write_noise(new_neg), p),
                self.g_neg)
        else:
            new = snap(self.prog_pos - delta)
            changed = new != self.prog_pos
            self.prog_pos = new
            self.g_pos = np.where(
                changed, dev.conductance_from_weight(self._with_write_noise(new), p),
                self.g_pos)
        return int(np.count_nonzero(changed))

    def initialize_weights(self, w0: np.ndarray):
        """Program an initial weight matrix appropriately for the update mode.

        Reset-and-set and accumulated modes program the quantized init
        directly. The linear mode parks both devices on the representable
        level nearest mid-window (initial weight exactly zero) and then
        applies the init as one linear increment, so the stored state is the
        grid quantization of the requested init and both signs stay reachable
        without a reset step.
        """
        w0 = np.asarray(w0, dtype=float)
        if self.cfg.update_mode == "linear":
            p = self.device
            b = self.cfg.bit_precision
            step = p.weight_range if b == 1 else p.weight_range / (2 ** b - 1)
            base = np.clip(np.floor(((p.w_min + p.w_max) / 2.0 - p.w_min) / step + 0.5)
                           * step + p.w_min, p.w_min, p.w_max)
            if self.cfg.scheme == TWO_DEVICE:
                self.prog_pos = np.full(self.shape, base)
                self.prog_neg = np.full(self.shape, base)
                self.linear_update(-w0)
            else:
                self.prog_pos = np.full(self.shape, base)
                self.linear_update(-(w0 + self.reference_weight() - base))
            self.g_pos = dev.conductance_from_weight(
                self._with_write_noise(self.prog_pos), p)
            if self.g_neg is not None:
                self.g_neg = dev.conductance_from_weight(
                    self._with_write_noise(self.prog_neg), p)
        else:
            self.write_weights(np.clip(w0, -self.weight_limit, self.weight_limit))

    def _with_write_noise(self, w_dev: np.ndarray) -> np.ndarray:
        if not self.c2c_write.enabled:
            return w_dev
        noisy = w_dev + self.c2c_write.sample(w_dev.shape, self.rng)
        return np.clip(noisy, self.device.w_min, self.device.w_max)

    # -- read paths ----------------------------------------------------------

    def read_device_weights(self):
        """Effective per-device weights with D2D offsets and fresh read noise.

        Returns (positive array, negative array) for 2D1S and
        (device array, reference weight broadcast) for 1D1S. Every call is a
        new read cycle: a fresh C2C sample is drawn when enabled.
        """
        p = self.device
        scale = (p.w_max - p.w_min) / (p.g_max - p.g_min)

        def effective(g, d2d):
            w = g * scale
            if not d2d.is_zero:
                w += d2d.offsets
            if self.c2c_read.enabled:
                w += self.c2c_read.sample(w.shape, self.rng)
            return np.clip(w, p.w_min, p.w_max, out=w)

        if self.cfg.scheme == TWO_DEVICE:
            return effective(self.g_pos, self.d2d_pos), effective(self.g_neg, self.d2d_neg)
        ref = np.full(self.shape, self.reference_weight())
        return effective(self.g_pos, self.d2d_pos), ref

    def _reads_are_ideal(self) -> bool:
        return (not self.c2c_read.enabled
                and self.d2d_pos.is_zero
                and (self.d2d_neg is None or self.d2d_neg.is_zero))

    def read_weights(self) -> np.ndarray:
        """Effective signed weight matrix for one read cycle."""
        if self._reads_are_ideal():
            scale = self.device.weight_range / (self.device.g_max - self.device.g_min)
            if self.cfg.scheme == TWO_DEVICE:
                return (self.g_pos - self.g_neg) * scale
            return self.g_pos * scale - self.reference_weight()
        w_pos, w_neg = self.read_device_weights()
        return w_pos - w_neg

    def programmed_weights(self) -> np.ndarray:
        """Noiseless differential weights as intended by the controller."""
        if self.cfg.scheme == TWO_DEVICE:
            return self.prog_pos - self.prog_neg
        return self.prog_pos - self.reference_weight()

    # -- MAC -----------------------------------------------------------------

    def mac(self, x: np.ndarray) -> np.ndarray:
        """Multiply-accumulate of input rows against the effective weights.

        Amplitude encoding computes one read cycle per call; bit-serial
        encoding quantizes inputs to input_bits planes, runs one read cycle
        per plane and recombines by shift-and-add. When an ADC is configured,
        column outputs are quantized once per (tile, bit-plane) before digital
        accumulation and the reconstructed real values are returned.
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xb = np.atleast_2d(x)
        if xb.shape[1] != self.cfg.rows:
            raise CrossbarError(
                f"input length {xb.shape[1]} != array rows {self.cfg.rows}")
        if self.cfg.input_encoding == "bit_serial":
            nbits = self.cfg.input_bits
            scale = 2 ** nbits - 1
            xi = np.rint(np.clip(xb, 0.0, 1.0) * scale).astype(np.int64)
            y = np.zeros((xb.shape[0], self.cfg.cols))
            for k in range(nbits):
                plane = ((xi >> k) & 1).astype(float)
                y = y + self._mac_once(plane) * (2 ** k)
            y = y / scale
        else:
            y = self._mac_once(xb)
        return y[0] if single else y

    def _mac_once(self, xb: np.ndarray) -> np.ndarray:
        w_pos, w_neg = self.read_device_weights()
        self.last_weights = w_pos - w_neg
        if self.cfg.adc_bits is None and self.cfg.sram_adc is None:
            return xb @ self.last_weights
        y = np.zeros((xb.shape[0], self.cfg.cols))
        for start in range(0, self.cfg.rows, self.cfg.tile):
            sl = slice(start, min(start + self.cfg.tile, self.cfg.rows))
            n_rows = sl.stop - sl.start
            fs = self.cfg.adc_full_scale or n_rows * self.device.w_max
            if self.cfg.sram_adc is not None:
                yp = self._sram_readout(xb[:, sl] @ w_pos[sl], fs)
                yn = self._sram_readout(xb[:, sl] @ w_neg[sl], fs)
                y = y + (yp - yn)
            else:
                part = xb[:, sl] @ (w_pos[sl] - w_neg[sl])
                y = y + self._uniform_readout(part, fs)
        return y

    def _uniform_readout(self, y: np.ndarray, full_scale: float) -> np.ndarray:
        n = self.cfg.adc_bits
        codes = np.rint(np.clip((y + full_scale) / (2 * full_scale), 0.0, 1.0)
                        * (2 ** n - 1))
        return codes / (2 ** n - 1) * 2 * full_scale - full_scale

    def _sram_readout(self, y: np.ndarray, full_scale: float) -> np.ndarray:
        s = self.cfg.sram_adc
        v = s.v_min + np.clip(y / full_scale, 0.0, 1.0) * (s.v_max - s.v_min)
        codes = dev.mac_nlop(v, s)
        return codes / 2.0 ** (s.adc_bits - 1) * full_scale


def _derive_seed(seed: int, array_id: int, purpose: int) -> int:
    return (int(seed) * 1_000_003 + int(array_id) * 97 + purpose) & 0x7FFFFFFFFFFFFFFF


# Thin functional forms of the array operations, matching the operation map.

def write_weights(target, array: SynapseArray, mask=None):
    return array.write_weights(target, mask)


def read_weights(array: SynapseArray):
    return array.read_weights()


def mac(x, array: SynapseArray):
    return array.mac(x)


def accumulated_update(delta, array: SynapseArray):
    return array.accumulated_update(delta)


def linear_update(delta, array: SynapseArray):
    return array.linear_update(delta)
