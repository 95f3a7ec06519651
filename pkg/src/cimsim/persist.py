"""Model serialization: trained networks, crossbar states and external imports.

File layout (extension .cimf): magic "CIMF", u32 little-endian format version,
u32 little-endian header length, a deterministic JSON header, then the payload
region. Every block payload is IEEE-754 float64 little-endian, row-major, and
carries its own CRC32 recorded in the header. Loading a container on a
big-endian host byte-swaps transparently because payload dtype is declared as
little-endian.

Importing a container that holds only real-weight blocks into a fresh
crossbar-backed network quantizes and programs those weights through the
normal device write path; full containers restore conductances bit-exactly.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"CIMF"
FORMAT_VERSION = 1
PAYLOAD_KINDS = ("real_weights", "conductances", "bn_stats", "optimizer_state")


class PersistError(ValueError):
    """Raised for malformed, truncated or corrupted model containers."""


@dataclass
class Block:
    name: str
    kind: str
    payload: str
    array: np.ndarray

    def __post_init__(self):
        if self.payload not in PAYLOAD_KINDS:
            raise PersistError(f"block {self.name!r}: unknown payload kind {self.payload!r}")
        self.array = np.ascontiguousarray(self.array, dtype="<f8")


@dataclass
class ModelContainer:
    format_version: int = FORMAT_VERSION
    network: list = field(default_factory=list)
    input_shape: tuple = ()
    meta: dict = field(default_factory=dict)
    blocks: list = field(default_factory=list)

    def block(self, name: str) -> Block:
        for b in self.blocks:
            if b.name == name:
                return b
        raise PersistError(f"container has no block named {name!r}")

    def has_block(self, name: str) -> bool:
        return any(b.name == name for b in self.blocks)


def save(container: ModelContainer, path: str):
    """Write the container; deterministic bytes for identical contents."""
    index = []
    payloads = []
    offset = 0
    for b in container.blocks:
        raw = b.array.tobytes()
        index.append({
            "name": b.name,
            "kind": b.kind,
            "payload": b.payload,
            "dims": list(b.array.shape),
            "offset": offset,
            "crc32": zlib.crc32(raw) & 0xFFFFFFFF,
        })
        payloads.append(raw)
        offset += len(raw)
    header = {
        "blocks": index,
        "input_shape": list(container.input_shape),
        "meta": container.meta,
        "network": container.network,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", container.format_version, len(head)))
        fh.write(head)
        for raw in payloads:
            fh.write(raw)


def load(path: str) -> ModelContainer:
    """Read and verify a container; every block checksum is enforced."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != MAGIC:
        raise PersistError(f"{path}: not a model container (bad magic at offset 0)")
    version, head_len = struct.unpack("<II", data[4:12])
    if version != FORMAT_VERSION:
        raise PersistError(
            f"{path}: unsupported format version {version} (expected {FORMAT_VERSION})")
    if len(data) < 12 + head_len:
        raise PersistError(f"{path}: truncated header (offset {len(data)})")
    try:
        header = json.loads(data[12:12 + head_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise PersistError(f"{path}: unreadable header: {exc}") from exc
    payload = data[12 + head_len:]
    blocks = []
    for entry in header["blocks"]:
        dims = tuple(entry["dims"])
        nbytes = int(np.prod(dims, dtype=np.int64)) * 8 if dims else 8
        start = entry["offset"]
        raw = payload[start:start + nbytes]
        if len(raw) != nbytes:
            raise PersistError(
                f"{path}: block {entry['name']!r} truncated at payload offset {start}")
        crc = zlib.crc32(raw) & 0xFFFFFFFF
        if crc != entry["crc32"]:
            raise PersistError(
                f"{path}: checksum failure in block {entry['name']!r} "
                f"(payload offset {start}): {crc:#x} != {entry['crc32']:#x}")
        arr = np.frombuffer(raw, dtype="<f8").reshape(dims)
        blocks.append(Block(entry["name"], entry["kind"], entry["payload"], arr))
    return ModelContainer(
        format_version=version,
        network=header.get("network", []),
        input_shape=tuple(header.get("input_shape", ())),
        meta=header.get("meta", {}),
        blocks=blocks,
    )


# ---------------------------------------------------------------------------
# Network <-> container
# ---------------------------------------------------------------------------

def from_network(net, meta: dict | None = None,
                 optimizer_state: dict | None = None) -> ModelContainer:
    """Snapshot every layer's weights, crossbar state and batch-norm stats."""
    from cimsim import nn as _nn

    blocks = []
    for i, layer in enumerate(net.layers):
        tag = f"layer{i}"
        if isinstance(layer, (_nn.Dense, _nn.Conv2D)):
            if layer.array is None:
                blocks.append(Block(f"{tag}.w", layer.kind, "real_weights", layer.w))
            else:
                arr = layer.array
                if layer.master is not None:
                    blocks.append(Block(f"{tag}.master", layer.kind, "real_weights",
                                        layer.master))
                blocks.append(Block(f"{tag}.g_pos", layer.kind, "conductances",
                                    arr.g_pos))
                blocks.append(Block(f"{tag}.prog_pos", layer.kind, "real_weights",
                                    arr.prog_pos))
                if arr.g_neg is not None:
                    blocks.append(Block(f"{tag}.g_neg", layer.kind, "conductances",
                                        arr.g_neg))
                    blocks.append(Block(f"{tag}.prog_neg", layer.kind, "real_weights",
                                        arr.prog_neg))
                if arr.update_buffer is not None:
                    blocks.append(Block(f"{tag}.buffer", layer.kind, "real_weights",
                                        arr.update_buffer))
            if layer.b is not None:
                blocks.append(Block(f"{tag}.b", layer.kind, "real_weights", layer.b))
        elif isinstance(layer, _nn.BatchNorm):
            stats = np.stack([layer.nu, layer.xi, layer.running_mean,
                              layer.running_var])
            blocks.append(Block(f"{tag}.bn", layer.kind, "bn_stats", stats))
    if optimizer_state:
        for key, arr in sorted(optimizer_state.items()):
            blocks.append(Block(f"opt.{key}", "optimizer", "optimizer_state", arr))
    return ModelContainer(
        network=net.spec.to_dicts(),
        input_shape=net.input_shape,
        meta=dict(meta or {}),
        blocks=blocks,
    )


def restore_into(net, container: ModelContainer):
    """Load container state into a structurally matching network.

    Containers holding full crossbar state restore it bit-exactly. Containers
    holding only plain weight blocks ("layerN.w") are treated as external
    pretrained imports: the weights are programmed through the device write
    path, acquiring quantization and programming effects.
    """
    from cimsim import nn as _nn

    for i, layer in enumerate(net.layers):
        tag = f"layer{i}"
        if isinstance(layer, (_nn.Dense, _nn.Conv2D)):
            if container.has_block(f"{tag}.w"):
                w = container.block(f"{tag}.w").array
                _check_shape(tag + ".w", w, layer.w.shape if layer.array is None
                             else layer.array.shape)
                layer.reprogram(w.copy())
            elif container.has_block(f"{tag}.g_pos"):
                if layer.array is None:
                    raise PersistError(
                        f"{tag}: container holds crossbar state but the layer is float")
                arr = layer.array
                if container.has_block(f"{tag}.master"):
                    layer.master = container.block(f"{tag}.master").array.copy()
                arr.g_pos = container.block(f"{tag}.g_pos").array.copy()
                arr.prog_pos = container.block(f"{tag}.prog_pos").array.copy()
                if arr.g_neg is not None:
                    arr.g_neg = container.block(f"{tag}.g_neg").array.copy()
                    arr.prog_neg = container.block(f"{tag}.prog_neg").array.copy()
                if container.has_block(f"{tag}.buffer"):
                    arr.update_buffer = container.block(f"{tag}.buffer").array.copy()
            else:
                raise PersistError(f"container lacks weights for layer {i}")
            if layer.b is not None and container.has_block(f"{tag}.b"):
                layer.b = container.block(f"{tag}.b").array.copy()
        elif isinstance(layer, _nn.BatchNorm):
            if container.has_block(f"{tag}.bn"):
                stats = container.block(f"{tag}.bn").array
                _check_shape(tag + ".bn", stats, (4, len(layer.nu)))
                layer.nu = stats[0].copy()
                layer.xi = stats[1].copy()
                layer.running_mean = stats[2].copy()
                layer.running_var = stats[3].copy()
    return net


def optimizer_state_blocks(container: ModelContainer) -> dict:
    prefix = "opt."
    return {b.name[len(prefix):]: b.array for b in container.blocks
            if b.name.startswith(prefix)}


def _check_shape(name, arr, expected):
    if tuple(arr.shape) != tuple(expected):
        raise PersistError(
            f"block {name!r} has shape {tuple(arr.shape)}, expected {tuple(expected)}")
