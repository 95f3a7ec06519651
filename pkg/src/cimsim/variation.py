"""Cycle-to-cycle (C2C) and device-to-device (D2D) stochastic weight perturbations.

C2C draws a fresh perturbation on every read and every write cycle; D2D is a
map of offsets frozen once per simulated chip. Both are applied additively in
normalized weight space. Counter-based Philox streams keyed by
(global seed, array id) make every draw reproducible and independent of
scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class VariationSpec:
    """Distribution of one variation source; sigma == 0 disables it.

    Log-normal draws are recentered by subtracting the median exp(mu) so the
    perturbation has zero median and the programmed value stays the center of
    the perturbed distribution.
    """

    distribution: str = "normal"
    mu: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        if self.distribution not in ("normal", "lognormal"):
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")

    @property
    def enabled(self) -> bool:
        return self.sigma > 0

    def sample(self, shape, rng: np.random.Generator) -> np.ndarray:
        if not self.enabled:
            return np.zeros(shape)
        if self.distribution == "normal":
            return rng.normal(self.mu, self.sigma, shape)
        return np.exp(rng.normal(self.mu, self.sigma, shape)) - np.exp(self.mu)


NO_VARIATION = VariationSpec()


@dataclass
class D2DMap:
    """Frozen per-device offsets for one crossbar array."""

    offsets: np.ndarray
    seed: int

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=float)
        self.offsets.setflags(write=False)
        self._zero = not self.offsets.any()

    @property
    def is_zero(self) -> bool:
        return self._zero

    @property
    def shape(self):
        return self.offsets.shape


def stream(*key_words: int) -> np.random.Generator:
    """Independent counter-based RNG stream for a tuple of integer keys."""
    seq = np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in key_words])
    return np.random.Generator(np.random.Philox(seq))


def sample_d2d(shape, spec: VariationSpec, seed: int) -> D2DMap:
    """Draw a frozen device-to-device offset map, deterministic in seed."""
    rows, cols = shape
    if rows < 1 or cols < 1:
        raise ValueError(f"invalid D2D map shape {shape}")
    return D2DMap(spec.sample((rows, cols), stream(seed)), seed=int(seed))


def apply_c2c(w, spec: VariationSpec, rng: np.random.Generator):
    """Perturb w with a fresh cycle-to-cycle sample (one new draw per call)."""
    if not spec.enabled:
        return w
    w = np.asarray(w, dtype=float)
    return w + spec.sample(w.shape, rng)
