"""Desk-scale simulator for computing-in-memory neural network accelerators.

Weights live in models of pulse-programmed synaptic memory (RRAM / FeFET
conductance curves, SRAM bitline readout). The package provides the device
models, crossbar array write/read/MAC paths, a from-scratch neural network
engine whose trainable layers are crossbar-backed, an unsupervised spiking
network, dataset loaders, model serialization and a config-driven CLI.
"""

from cimsim.device import DeviceParams, SramAdcParams
from cimsim.variation import VariationSpec, D2DMap
from cimsim.crossbar import CrossbarConfig, SynapseArray

__all__ = [
    "DeviceParams",
    "SramAdcParams",
    "VariationSpec",
    "D2DMap",
    "CrossbarConfig",
    "SynapseArray",
]

__version__ = "0.1.0"
