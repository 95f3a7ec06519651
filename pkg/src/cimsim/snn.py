"""Unsupervised spiking network with timing-dependent plasticity on RRAM fits.

Topology is all-to-all, 784 rate-encoded inputs onto N excitatory leaky
integrate-and-fire neurons with winner-take-all lateral inhibition and
adaptive thresholds. Synaptic changes follow the exponential
timing-dependence fitted to measured devices (amplitudes a_plus/a_minus,
time constants tau_plus/tau_minus) with weights bounded by the device's
relative conductance-change window [w_min_rel, w_max_rel].

The per-event kernel stdp_delta operates in device pulse time. Inside the
simulation the device amplitudes act on presentation-time traces: pulse
shaping maps spike-timing differences into the device's own window, so the
device time constants set realizable change magnitudes rather than the
biological pairing window. All neuron-dynamics constants are declared
defaults, exposed on SnnConfig.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from cimsim.data import Dataset
from cimsim.variation import stream


class SnnError(ValueError):
    """Raised for invalid spiking network parameters."""


@dataclass(frozen=True)
class StdpParams:
    """Device STDP fit: amplitudes, time constants and weight-change bounds."""

    a_plus: float
    a_minus: float
    tau_plus: float
    tau_minus: float
    w_max_rel: float
    w_min_rel: float
    name: str = ""
    pulse_scheme: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.tau_plus > 0 and self.tau_minus > 0):
            raise SnnError("tau_plus and tau_minus must be > 0")
        if not (self.a_plus > 0 > self.a_minus):
            raise SnnError("require a_plus > 0 > a_minus")
        if not self.w_min_rel < self.w_max_rel:
            raise SnnError("require w_min_rel < w_max_rel")


def _snn_table() -> dict:
    with resources.files("cimsim.presets").joinpath("snn.json").open("r") as fh:
        return json.load(fh)


def available_snn_presets() -> list[str]:
    return sorted(_snn_table().keys())


def load_snn_preset(name: str) -> StdpParams:
    table = _snn_table()
    if name not in table:
        raise SnnError(f"unknown SNN preset {name!r} (shipped: {available_snn_presets()})")
    raw = dict(table[name])
    return StdpParams(name=name, **raw)


def stdp_delta(dt, p: StdpParams):
    """Relative weight change for a post-minus-pre spike time difference.

    dt >= 0 potentiates by a_plus * exp(-dt / tau_plus); dt < 0 depresses by
    a_minus * exp(dt / tau_minus). Antisymmetric in sign for all dt != 0.
    """
    dt = np.asarray(dt, dtype=float)
    if not np.all(np.isfinite(dt)):
        raise SnnError("spike time difference must be finite")
    out = np.where(dt >= 0,
                   p.a_plus * np.exp(-np.abs(dt) / p.tau_plus),
                   p.a_minus * np.exp(-np.abs(dt) / p.tau_minus))
    return float(out) if out.ndim == 0 else out


def apply_stdp(w, dt, p: StdpParams):
    """Update a weight by the timing kernel, clamped to the device window."""
    out = np.clip(np.asarray(w, dtype=float) + stdp_delta(dt, p),
                  p.w_min_rel, p.w_max_rel)
    return float(out) if out.ndim == 0 else out


def dynamic_range(p: StdpParams) -> float:
    """Ratio of the largest to the smallest realizable weight change.

    The largest single-event change is the peak amplitude; the smallest
    registrable change is the device's minimum relative conductance step
    w_min_rel (changes below it do not program).
    """
    return max(p.a_plus, abs(p.a_minus)) / p.w_min_rel


@dataclass(frozen=True)
class SnnConfig:
    """Neuron dynamics and learning-loop constants (declared defaults)."""

    duration: float = 0.35          # presentation window per image, seconds
    dt: float = 1e-3                # simulation timestep, seconds
    max_rate: float = 63.75         # input rate at pixel intensity 1.0, Hz
    tau_m: float = 0.1              # membrane time constant, seconds
    v_reset: float = 0.0
    v_threshold: float = 18.0
    refractory: float = 5e-3        # seconds
    theta_inc: float = 1.5          # adaptive threshold bump per spike
    theta_decay: float = 1e-5       # per-timestep relative threshold decay
    inhibition: float = float("inf")  # membrane drop on non-winners (inf: full reset)
    eta: float = 0.05               # learning-rate multiplier on device amplitudes
    trace_tau: float = 0.02         # presynaptic trace time constant, seconds
    x_offset: float = 0.50          # baseline depression drive (target trace)
    norm_sum: float | None = 78.4   # per-neuron weight-sum normalization target
    seed: int = 0


def encode_rate(image, rng: np.random.Generator, cfg: SnnConfig = SnnConfig()):
    """Poisson spike raster for one image: (timesteps, pixels) booleans.

    Firing probability per step is intensity * max_rate * dt; zero pixels
    never spike. Deterministic for a given generator state.
    """
    flat = np.asarray(image, dtype=float).reshape(-1)
    if flat.min() < 0 or flat.max() > 1:
        raise SnnError("pixel intensities must lie in [0, 1]")
    steps = int(round(cfg.duration / cfg.dt))
    prob = flat * cfg.max_rate * cfg.dt
    return rng.random((steps, flat.size)) < prob


class SpikingNetwork:
    """784 x N all-to-all excitatory layer with WTA inhibition and STDP."""

    def __init__(self, n_inputs: int, n_neurons: int, params: StdpParams,
                 cfg: SnnConfig = SnnConfig()):
        if n_neurons < 1:
            raise SnnError(f"need at least one output neuron, got {n_neurons}")
        self.params = params
        self.cfg = cfg
        self.n_inputs = n_inputs
        self.n_neurons = n_neurons
        rng = stream(cfg.seed, 0x500)
        self.w = rng.uniform(params.w_min_rel, params.w_max_rel,
                             (n_inputs, n_neurons))
        self._normalize()
        self.theta = np.zeros(n_neurons)
        self.events_generated = 0
        self.events_processed = 0

    def _normalize(self):
        if self.cfg.norm_sum is None:
            return
        sums = self.w.sum(axis=0)
        self.w *= self.cfg.norm_sum / np.maximum(sums, 1e-12)
        np.clip(self.w, self.params.w_min_rel, self.params.w_max_rel, out=self.w)

    def present(self, spikes: np.ndarray, learn: bool) -> np.ndarray:
        """Run one presentation; returns per-neuron spike counts.

        Event-driven over the input raster: each input spike deposits its
        synaptic weight onto every neuron's membrane; thresholds are adaptive
        and a single winner fires per timestep, inhibiting the rest.
        """
        p, cfg = self.params, self.cfg
        decay = np.exp(-cfg.dt / cfg.tau_m)
        trace_decay = np.exp(-cfg.dt / cfg.trace_tau)
        refrac_steps = int(round(cfg.refractory / cfg.dt))
        v = np.full(self.n_neurons, cfg.v_reset)
        refrac = np.zeros(self.n_neurons, dtype=int)
        x_pre = np.zeros(self.n_inputs)
        counts = np.zeros(self.n_neurons, dtype=int)
        self.events_generated += int(spikes.sum())

        for t in range(spikes.shape[0]):
            active = np.flatnonzero(spikes[t])
            v *= decay
            x_pre *= trace_decay
            if active.size:
                v += self.w[active].sum(axis=0)
                x_pre[active] += 1.0
                self.events_processed += int(active.size)
            self.theta *= 1.0 - cfg.theta_decay
            ready = refrac == 0
            refrac[~ready] -= 1
            over = (v - (cfg.v_threshold + self.theta)) * ready
            k = int(np.argmax(over))
            if over[k] > 0:
                counts[k] += 1
                v -= cfg.inhibition
                v[k] = cfg.v_reset
                np.maximum(v, cfg.v_reset, out=v)
                refrac[k] = refrac_steps
                self.theta[k] += cfg.theta_inc
                if learn:
                    col = self.w[:, k]
                    up = p.a_plus * x_pre * (p.w_max_rel - col)
                    down = abs(p.a_minus) * cfg.x_offset * (col - p.w_min_rel)
                    col += cfg.eta * (up - down)
                    np.clip(col, p.w_min_rel, p.w_max_rel, out=col)
        if learn:
            self._normalize()
        return counts


@dataclass
class SnnResult:
    assignments: np.ndarray
    accuracy: float
    train_counts: np.ndarray
    events_generated: int
    events_processed: int


def assign_classes(counts: np.ndarray, labels: np.ndarray, n_classes: int = 10):
    """Give each neuron the class it responded to most over the labeled set."""
    per_class = np.zeros((n_classes, counts.shape[1]))
    for c in range(n_classes):
        sel = labels == c
        if sel.any():
            per_class[c] = counts[sel].mean(axis=0)
    return np.argmax(per_class, axis=0)


def classify(counts: np.ndarray, assignments: np.ndarray, n_classes: int = 10):
    """Majority vote: the class whose assigned neurons responded most."""
    scores = np.full((len(counts), n_classes), -np.inf)
    for c in range(n_classes):
        sel = assignments == c
        if sel.any():
            scores[:, c] = counts[:, sel].mean(axis=1)
    return np.argmax(scores, axis=1)


def run_snn(train_ds: Dataset, test_ds: Dataset, params: StdpParams,
            n_neurons: int = 100, cfg: SnnConfig = SnnConfig(),
            assign_subset: int | None = None, verbose: bool = False) -> SnnResult:
    """Unsupervised training, class assignment and test evaluation.

    Training presents each image once with plasticity on. Assignment replays
    a labeled subset with plasticity frozen, then test accuracy is the
    majority-vote classification rate.
    """
    if n_neurons < train_ds.n_classes:
        raise SnnError(
            f"{n_neurons} neurons cannot cover {train_ds.n_classes} classes")
    net = SpikingNetwork(int(np.prod(train_ds.images.shape[1:])), n_neurons,
                         params, cfg)
    enc_rng = stream(cfg.seed, 0x5E)

    for i in range(len(train_ds)):
        net.present(encode_rate(train_ds.images[i], enc_rng, cfg), learn=True)
        if verbose and (i + 1) % 1000 == 0:
            print(f"trained on {i + 1} images", flush=True)

    n_assign = min(assign_subset or len(train_ds), len(train_ds))
    counts = np.zeros((n_assign, n_neurons), dtype=int)
    for i in range(n_assign):
        counts[i] = net.present(encode_rate(train_ds.images[i], enc_rng, cfg),
                                learn=False)
    assignments = assign_classes(counts, train_ds.labels[:n_assign],
                                 train_ds.n_classes)

    test_counts = np.zeros((len(test_ds), n_neurons), dtype=int)
    for i in range(len(test_ds)):
        test_counts[i] = net.present(encode_rate(test_ds.images[i], enc_rng, cfg),
                                     learn=False)
    predicted = classify(test_counts, assignments, train_ds.n_classes)
    accuracy = float(np.mean(predicted == test_ds.labels))
    return SnnResult(assignments, accuracy, counts,
                     net.events_generated, net.events_processed)
