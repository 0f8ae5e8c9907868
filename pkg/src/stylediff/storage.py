"""Binary containers for datasets and model checkpoints.

Dataset container ("DSDS"):

    magic  4s   b"DSDS"
    version u32 little-endian, currently 1
    n      u64  window count
    L      u32  window length
    F      u32  feature count
    min    f64[F] per-feature normalization minimum
    max    f64[F] per-feature normalization maximum
    values f64[n*L*F] row-major (window, time, feature)
    crc    u32  CRC32 of every preceding byte

Checkpoint container ("DSDF"):

    magic  4s   b"DSDF"
    version u32
    mlen   u32  metadata length
    meta   utf-8 canonical JSON {"kind": ..., "config": {...}}
    count  u64  parameter count
    weights f64[count] in the model's documented flat layout
    crc    u32  CRC32 of every preceding byte

All integers and floats are little-endian; round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .backbone import Denoiser, DenoiserConfig, build_denoiser, flatten_parameters, load_flat_parameters
from .data import NormalizationState
from .errors import ChecksumError, FormatError, MagicError, ValidationError, VersionError
from .guidance import GuidanceConfig, GuidanceNet, build_guidance

DATASET_MAGIC = b"DSDS"
CHECKPOINT_MAGIC = b"DSDF"
FORMAT_VERSION = 1

BACKBONE_KIND = "backbone"
GUIDANCE_TREND_KIND = "guidance-trend"
GUIDANCE_SEASONAL_KIND = "guidance-seasonal"


def _finish(path: Path, body: bytearray) -> None:
    body += struct.pack("<I", zlib.crc32(bytes(body)))
    path.write_bytes(bytes(body))


class _Reader:
    def __init__(self, path: Path, magic: bytes):
        self.blob = path.read_bytes()
        if len(self.blob) < 12:
            raise FormatError(f"{path}: truncated container ({len(self.blob)} bytes)")
        payload, (crc,) = self.blob[:-4], struct.unpack("<I", self.blob[-4:])
        if zlib.crc32(payload) != crc:
            raise ChecksumError(f"{path}: CRC32 mismatch, file is corrupted")
        if payload[:4] != magic:
            raise MagicError(f"{path}: bad magic {payload[:4]!r}, expected {magic!r}")
        self.payload = payload
        self.offset = 4
        version = self.u32()
        if version != FORMAT_VERSION:
            raise VersionError(f"{path}: unsupported format version {version}")

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.payload):
            raise FormatError("container payload shorter than its declared contents")
        chunk = self.payload[self.offset : self.offset + count]
        self.offset += count
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64s(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").copy()

    def done(self) -> None:
        if self.offset != len(self.payload):
            raise FormatError(
                f"{len(self.payload) - self.offset} unexpected trailing bytes in container"
            )


def save_dataset(path, values: np.ndarray, state: NormalizationState) -> None:
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.ndim != 3:
        raise ValidationError(f"values must be (n, L, F), got {values.shape}")
    n, length, features = values.shape
    if state.features != features:
        raise ValidationError(
            f"normalization state has {state.features} features, values have {features}"
        )
    body = bytearray()
    body += DATASET_MAGIC
    body += struct.pack("<IQII", FORMAT_VERSION, n, length, features)
    body += state.minimum.astype("<f8").tobytes()
    body += state.maximum.astype("<f8").tobytes()
    body += values.astype("<f8").tobytes()
    _finish(Path(path), body)


def load_dataset(path):
    reader = _Reader(Path(path), DATASET_MAGIC)
    n = reader.u64()
    length = reader.u32()
    features = reader.u32()
    minimum = reader.f64s(features)
    maximum = reader.f64s(features)
    values = reader.f64s(n * length * features).reshape(n, length, features)
    reader.done()
    return values, NormalizationState(minimum=minimum, maximum=maximum)


def save_checkpoint(path, kind: str, config: dict, weights: np.ndarray) -> None:
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    meta = json.dumps({"kind": kind, "config": config}, sort_keys=True, separators=(",", ":"))
    body = bytearray()
    body += CHECKPOINT_MAGIC
    body += struct.pack("<II", FORMAT_VERSION, len(meta.encode()))
    body += meta.encode()
    body += struct.pack("<Q", weights.size)
    body += weights.astype("<f8").tobytes()
    _finish(Path(path), body)


def load_checkpoint(path):
    reader = _Reader(Path(path), CHECKPOINT_MAGIC)
    mlen = reader.u32()
    try:
        meta = json.loads(reader.take(mlen).decode())
        kind = meta["kind"]
        config = meta["config"]
    except (ValueError, KeyError) as exc:
        raise FormatError(f"{path}: malformed checkpoint metadata: {exc}") from exc
    count = reader.u64()
    weights = reader.f64s(count)
    reader.done()
    return kind, config, weights


def save_backbone(path, net: Denoiser) -> None:
    config = asdict(net.config)
    config["channel_multipliers"] = list(config["channel_multipliers"])
    save_checkpoint(path, BACKBONE_KIND, config, flatten_parameters(net))


def load_backbone(path) -> Denoiser:
    kind, config, weights = load_checkpoint(path)
    if kind != BACKBONE_KIND:
        raise FormatError(f"{path}: expected a {BACKBONE_KIND!r} checkpoint, found {kind!r}")
    config["channel_multipliers"] = tuple(config["channel_multipliers"])
    net = build_denoiser(DenoiserConfig(**config), seed=0)
    load_flat_parameters(net, weights)
    return net


def save_guidance(path, net: GuidanceNet, role: str) -> None:
    kind = {"trend": GUIDANCE_TREND_KIND, "seasonal": GUIDANCE_SEASONAL_KIND}.get(role)
    if kind is None:
        raise ValidationError(f"role must be 'trend' or 'seasonal', got {role!r}")
    save_checkpoint(path, kind, asdict(net.config), flatten_parameters(net))


def load_guidance(path, role: str | None = None) -> GuidanceNet:
    kind, config, weights = load_checkpoint(path)
    expected = {
        "trend": GUIDANCE_TREND_KIND,
        "seasonal": GUIDANCE_SEASONAL_KIND,
        None: None,
    }.get(role, "?")
    if kind not in (GUIDANCE_TREND_KIND, GUIDANCE_SEASONAL_KIND):
        raise FormatError(f"{path}: expected a guidance checkpoint, found {kind!r}")
    if expected not in (None,) and kind != expected:
        raise FormatError(f"{path}: expected a {expected!r} checkpoint, found {kind!r}")
    net = build_guidance(GuidanceConfig(**config), seed=0)
    load_flat_parameters(net, weights)
    return net
