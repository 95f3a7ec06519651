"""Synaptic device models: pulse-programmed conductance curves and SRAM/ADC readout.

A device is described by its conductance window [g_min, g_max], the normalized
weight window [w_min, w_max] it maps onto, nonlinearity factors theta for the
potentiation (LTP) and depression (LTD) branches, and a pulse budget p_max.
Small theta means a strongly saturating pulse-to-weight curve, theta near 100
is almost linear. All curve functions are pure and vectorized over numpy
arrays.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from importlib import resources

import numpy as np

THETA_MIN = 0.01
THETA_MAX = 100.0


class DeviceModelError(ValueError):
    """Domain error raised for out-of-range device inputs or parameters."""


@dataclass(frozen=True)
class DeviceParams:
    """Parameters of one pulse-programmable synaptic device technology.

    w_min defaults to w_max * g_min / g_max (the inverse ON/OFF ratio), which
    makes the conductance->weight normalization exact at both window edges.
    p_max may be left None and resolved later from the array bit precision.
    """

    g_max: float
    g_min: float
    theta_ltp: float
    theta_ltd: float
    p_max: int | None = None
    w_max: float = 1.0
    w_min: float | None = None
    name: str = ""

    def __post_init__(self):
        if not (self.g_max > self.g_min > 0):
            raise DeviceModelError(
                f"require g_max > g_min > 0, got g_max={self.g_max}, g_min={self.g_min}"
            )
        for label, theta in (("theta_ltp", self.theta_ltp), ("theta_ltd", self.theta_ltd)):
            if not (THETA_MIN <= theta <= THETA_MAX):
                raise DeviceModelError(
                    f"{label}={theta} outside the supported range [{THETA_MIN}, {THETA_MAX}]"
                )
        if self.w_min is None:
            object.__setattr__(self, "w_min", self.w_max * self.g_min / self.g_max)
        if not self.w_max > self.w_min:
            raise DeviceModelError(f"require w_max > w_min, got {self.w_max} <= {self.w_min}")
        if self.p_max is not None and self.p_max < 1:
            raise DeviceModelError(f"p_max must be >= 1, got {self.p_max}")

    @property
    def on_off_ratio(self) -> float:
        return self.g_min / self.g_max

    @property
    def weight_range(self) -> float:
        return self.w_max - self.w_min

    def with_p_max(self, p_max: int) -> "DeviceParams":
        return replace(self, p_max=int(p_max))

    def require_p_max(self) -> int:
        if self.p_max is None:
            raise DeviceModelError(
                "device p_max is unresolved; set it explicitly or via CrossbarConfig"
            )
        return self.p_max


@dataclass(frozen=True)
class SramAdcParams:
    """SRAM bitline MAC nonlinearity and ADC resolution parameters."""

    theta_sram: float
    adc_bits: int
    v_min: float
    v_max: float

    def __post_init__(self):
        if not (self.v_max > self.v_min >= 0):
            raise DeviceModelError(
                f"require v_max > v_min >= 0, got v_min={self.v_min}, v_max={self.v_max}"
            )
        if not (1 <= self.adc_bits <= 16):
            raise DeviceModelError(f"adc_bits must be in [1, 16], got {self.adc_bits}")
        if not self.theta_sram > 0:
            raise DeviceModelError(f"theta_sram must be > 0, got {self.theta_sram}")


def weight_from_conductance(g, p: DeviceParams):
    """Normalize conductance to a device weight in [w_min, w_max].

    Linear map g * (w_max - w_min) / (g_max - g_min); exact at both window
    edges when w_min is derived from the ON/OFF ratio. The result is clamped
    to [w_min, w_max] to absorb floating-point overshoot at g = g_max.
    """
    g = np.asarray(g, dtype=float)
    if np.any(g < p.g_min) or np.any(g > p.g_max):
        bad = g[(g < p.g_min) | (g > p.g_max)].flat[0]
        raise DeviceModelError(
            f"conductance {bad!r} outside device window [{p.g_min}, {p.g_max}]"
        )
    w = g * (p.w_max - p.w_min) / (p.g_max - p.g_min)
    out = np.clip(w, p.w_min, p.w_max)
    return float(out) if out.ndim == 0 else out


def conductance_from_weight(w, p: DeviceParams):
    """Inverse of weight_from_conductance, clamped to [g_min, g_max]."""
    w = np.asarray(w, dtype=float)
    g = w * (p.g_max - p.g_min) / (p.w_max - p.w_min)
    out = np.clip(g, p.g_min, p.g_max)
    return float(out) if out.ndim == 0 else out


def alpha(theta: float, p_max: int) -> float:
    """Curve rate constant: alpha = theta * p_max."""
    if theta <= 0:
        raise DeviceModelError(f"theta must be > 0, got {theta}")
    if p_max < 1:
        raise DeviceModelError(f"p_max must be >= 1, got {p_max}")
    return theta * p_max

def beta(p: DeviceParams, branch: str = "ltp") -> float:
    """Curve amplitude chosen so the branch spans [w_min, w_max] over p_max pulses.

    beta = (w_max - w_min) / (1 - exp(-p_max / alpha)); since alpha =
    theta * p_max this reduces to range / (1 - exp(-1/theta)).
    """
    theta = _branch_theta(p, branch)
    return p.weight_range / -math.expm1(-1.0 / theta)


def _branch_theta(p: DeviceParams, branch: str) -> float:
    if branch == "ltp":
        return p.theta_ltp
    if branch == "ltd":
        return p.theta_ltd
    raise DeviceModelError(f"unknown branch {branch!r}, expected 'ltp' or 'ltd'")


def ltp_weight(pulses, p: DeviceParams):
    """Device weight after a potentiation pulse train starting from w_min.

    w = beta_ltp * (1 - exp(-P / alpha_ltp)) + w_min, strictly increasing in P,
    with w(0) = w_min and w(p_max) = w_max exactly.
    """
    p_max = p.require_p_max()
    pulses = np.asarray(pulses, dtype=float)
    if np.any(pulses < 0) or np.any(pulses > p_max):
        bad = pulses[(pulses < 0) | (pulses > p_max)].flat[0]
        raise DeviceModelError(f"pulse count {bad!r} outside [0, {p_max}]")
    a = alpha(p.theta_ltp, p_max)
    w = beta(p, "ltp") * -np.expm1(-pulses / a) + p.w_min
    out = np.clip(w, p.w_min, p.w_max)
    return float(out) if out.ndim == 0 else out


def ltd_weight(depression_pulses, p: DeviceParams):
    """Device weight after a depression pulse train starting from w_max.

    Evaluates the depression branch at P = p_max - d:
    w = -beta_ltd * (1 - exp((P - p_max) / alpha_ltd)) + w_max,
    strictly decreasing in d, with w(0) = w_max and w(p_max) = w_min exactly.
    """
    p_max = p.require_p_max()
    d = np.asarray(depression_pulses, dtype=float)
    if np.any(d < 0) or np.any(d > p_max):
        bad = d[(d < 0) | (d > p_max)].flat[0]
        raise DeviceModelError(f"depression pulse count {bad!r} outside [0, {p_max}]")
    a = alpha(p.theta_ltd, p_max)
    w = beta(p, "ltd") * np.expm1(-d / a) + p.w_max
    out = np.clip(w, p.w_min, p.w_max)
    return float(out) if out.ndim == 0 else out


def pulses_for_weight(w_target, p: DeviceParams):
    """Number of potentiation pulses that programs the device closest to w_target.

    Inverts the LTP curve: P = round(-alpha_ltp * ln(1 - (w - w_min) / beta_ltp)),
    clamped to [0, p_max]. Targets below w_min round down to 0 pulses; a log
    argument <= 0 (floating-point noise above w_max) saturates to p_max rather
    than raising.
    """
    p_max = p.require_p_max()
    w = np.asarray(w_target, dtype=float)
    if np.any(w < 0) or np.any(w > p.w_max * (1 + 1e-12)):
        bad = w[(w < 0) | (w > p.w_max * (1 + 1e-12))].flat[0]
        raise DeviceModelError(f"target weight {bad!r} outside [0, {p.w_max}]")
    a = alpha(p.theta_ltp, p_max)
    arg = 1.0 - (w - p.w_min) / beta(p, "ltp")
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.where(arg > 0, -a * np.log(np.maximum(arg, 1e-300)), np.inf)
    pulses = np.clip(np.rint(raw), 0, p_max)
    if pulses.ndim == 0:
        return int(pulses)
    return pulses.astype(np.int64)


def sram_alpha(s: SramAdcParams) -> float:
    """ADC transfer rate constant: alpha = theta_sram * 2**(adc_bits - 1)."""
    return s.theta_sram * 2.0 ** (s.adc_bits - 1)


def sram_beta(s: SramAdcParams) -> float:
    """ADC transfer amplitude: (1 - v_min/v_max) / (1 - exp(-2**(b-1)/alpha))."""
    half_codes = 2.0 ** (s.adc_bits - 1)
    return (1.0 - s.v_min / s.v_max) / -math.expm1(-half_codes / sram_alpha(s))


def mac_nlop(v, s: SramAdcParams):
    """Nonlinear SRAM bitline-voltage-to-code transfer.

    S = |v/v_max - v_min/v_max - beta| / beta; code = round(-alpha * ln(S)),
    clamped to [0, 2**adc_bits - 1]. v_min maps to code 0 and v_max to code
    2**(adc_bits - 1) exactly. S == 0 returns the clamp ceiling.
    """
    v = np.asarray(v, dtype=float)
    if np.any(v < s.v_min) or np.any(v > s.v_max):
        bad = v[(v < s.v_min) | (v > s.v_max)].flat[0]
        raise DeviceModelError(f"voltage {bad!r} outside [{s.v_min}, {s.v_max}]")
    a = sram_alpha(s)
    b = sram_beta(s)
    ceiling = 2 ** s.adc_bits - 1
    sval = np.abs(v / s.v_max - s.v_min / s.v_max - b) / b
    with np.errstate(divide="ignore"):
        raw = -a * np.log(sval)
    codes = np.where(sval == 0, ceiling, np.clip(np.rint(raw), 0, ceiling))
    if codes.ndim == 0:
        return int(codes)
    return codes.astype(np.int64)


def bitline_voltage_drop(weight_bits, input_bits, unit_drop: float):
    """Idealized SRAM read-bitline discharge: unit_drop per (1,1) cell.

    A cell discharges the bitline only when both its stored bit and the input
    bit are 1, so the total drop is unit_drop * popcount(W AND x).
    """
    w = np.asarray(weight_bits)
    x = np.asarray(input_bits)
    if w.shape != x.shape:
        raise DeviceModelError(
            f"weight/input bit vectors differ in shape: {w.shape} vs {x.shape}"
        )
    if unit_drop <= 0:
        raise DeviceModelError(f"unit_drop must be > 0, got {unit_drop}")
    return unit_drop * float(np.sum((w != 0) & (x != 0)))


def fit_theta(pulses, weights, p_max: int, w_min: float, w_max: float,
              tol: float = 1e-6) -> float:
    """Least-squares fit of the LTP nonlinearity factor to a measured trace.

    Minimizes the sum of squared residuals of the potentiation curve against
    (pulse count, normalized weight) samples using golden-section search over
    theta in [THETA_MIN, THETA_MAX]. The objective is unimodal in theta for
    monotone traces.
    """
    pulses = np.asarray(pulses, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if pulses.shape != weights.shape or pulses.size < 2:
        raise DeviceModelError("need matching pulse/weight arrays with >= 2 samples")
    rng = w_max - w_min

    def sse(theta: float) -> float:
        b = rng / -math.expm1(-1.0 / theta)
        model = b * -np.expm1(-pulses / (theta * p_max)) + w_min
        return float(np.sum((model - weights) ** 2))

    # search in log-space, where the curve family is better conditioned
    lo, hi = math.log(THETA_MIN), math.log(THETA_MAX)
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = hi - invphi * (hi - lo)
    d = lo + invphi * (hi - lo)
    fc, fd = sse(math.exp(c)), sse(math.exp(d))
    while hi - lo > tol:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - invphi * (hi - lo)
            fc = sse(math.exp(c))
        else:
            lo, c, fc = c, d, fd
            d = lo + invphi * (hi - lo)
            fd = sse(math.exp(d))
    return math.exp((lo + hi) / 2.0)


def _preset_table() -> dict:
    with resources.files("cimsim.presets").joinpath("devices.json").open("r") as fh:
        return json.load(fh)


def available_device_presets() -> list[str]:
    return sorted(_preset_table().keys())


def load_device_preset(name_or_path: str, p_max: int | None = None) -> DeviceParams:
    """Load a device preset by shipped name or from a JSON file path.

    The JSON keys match DeviceParams field names. p_max, when absent from the
    file, stays None until resolved by the crossbar configuration.
    """
    table = _preset_table()
    if name_or_path in table:
        raw = dict(table[name_or_path])
        raw.setdefault("name", name_or_path)
    else:
        try:
            with open(name_or_path, "r") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise DeviceModelError(
                f"unknown device preset {name_or_path!r} "
                f"(shipped: {available_device_presets()}) and not a readable file: {exc}"
            ) from exc
    known = {"g_max", "g_min", "theta_ltp", "theta_ltd", "p_max", "w_max", "w_min", "name"}
    unknown = set(raw) - known
    if unknown:
        raise DeviceModelError(f"unknown device preset keys: {sorted(unknown)}")
    params = DeviceParams(**raw)
    if p_max is not None:
        params = params.with_p_max(p_max)
    return params
