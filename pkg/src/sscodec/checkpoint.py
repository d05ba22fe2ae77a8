"""Binary checkpoint files for codec models (and optional discriminators).

Layout: 4-byte magic "SSCK", a version byte, a length-prefixed JSON
header (model config, quantizer state flag, discriminator configs when
present), then length-prefixed named float32 tensor records. All
integers little-endian.
"""

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .model import CodecModel, ModelConfig

MAGIC = b"SSCK"
VERSION = 1


def _jsonable(config):
    """Dataclass config as a dict that survives a JSON round trip."""
    return {k: list(v) if isinstance(v, tuple) else v
            for k, v in asdict(config).items()}


def _records_of(model, discs):
    for name, p in model.named_parameters():
        yield "param/" + name, p.data
    if model.rvq.initialized:
        for q, layer in enumerate(model.rvq.layers):
            yield f"rvq/{q}/vectors", layer.vectors
            yield f"rvq/{q}/ema_count", layer.ema_count
            yield f"rvq/{q}/ema_sum", layer.ema_sum
            yield f"rvq/{q}/usage_ema", layer.usage_ema
    if discs is not None:
        for name, p in discs.named_parameters():
            yield "disc/" + name, p.data


def save_checkpoint(model, path, discs=None):
    """Serialize model weights and quantizer statistics to ``path``."""
    header = {
        "model": model.config.to_dict(),
        "rvq_initialized": bool(model.rvq.initialized),
    }
    if discs is not None:
        header["wave_config"] = _jsonable(discs.wave_config)
        header["stft_config"] = _jsonable(discs.stft_config)
    records = list(_records_of(model, discs))
    blob = bytearray(MAGIC)
    blob += struct.pack("<B", VERSION)
    head = json.dumps(header, sort_keys=True).encode()
    blob += struct.pack("<I", len(head)) + head
    blob += struct.pack("<I", len(records))
    for name, arr in records:
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        nb = name.encode()
        blob += struct.pack("<H", len(nb)) + nb
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.astype("<f4").tobytes()
    Path(path).write_bytes(bytes(blob))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ValueError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _assign(named, records, prefix):
    for name, p in named:
        key = prefix + name
        if key not in records:
            raise ValueError(f"checkpoint is missing record {key!r}")
        arr = records[key]
        if arr.shape != p.data.shape:
            raise ValueError(
                f"shape mismatch for {key!r}: checkpoint has {arr.shape}, "
                f"target expects {p.data.shape}")
        p.data[...] = arr


def _take_record(records, key, shape):
    if key not in records:
        raise ValueError(f"checkpoint is missing record {key!r}")
    arr = records[key]
    if arr.shape != tuple(shape):
        raise ValueError(
            f"shape mismatch for {key!r}: checkpoint has {arr.shape}, "
            f"target expects {tuple(shape)}")
    return arr


def load_checkpoint(path, model=None, discs=None):
    """Rebuild (or fill in) a model from a checkpoint file.

    With ``model`` given, its config must match the stored one exactly;
    without, a fresh model is built from the stored config. Pass
    ``discs`` to also restore discriminator weights (the file must have
    been saved with them). Returns the model.
    """
    r = _Reader(Path(path).read_bytes())
    if bytes(r.take(4)) != MAGIC:
        raise ValueError(f"{path}: not a codec checkpoint (bad magic)")
    (version,) = r.unpack("<B")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = r.unpack("<I")
    header = json.loads(bytes(r.take(hlen)).decode())
    stored = header["model"]
    if model is None:
        model = CodecModel(ModelConfig.from_dict(stored), np.random.default_rng(0))
    elif model.config.to_dict() != stored:
        raise ValueError(
            f"checkpoint config does not match the model's: "
            f"{stored} vs {model.config.to_dict()}")
    (count,) = r.unpack("<I")
    records = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = bytes(r.take(nlen)).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        raw = r.take(4 * n)
        records[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(r.data):
        raise ValueError(f"{path}: unexpected trailing data")

    _assign(model.named_parameters(), records, "param/")
    if header["rvq_initialized"]:
        for q, layer in enumerate(model.rvq.layers):
            layer.vectors = _take_record(records, f"rvq/{q}/vectors",
                                         layer.vectors.shape).copy()
            layer.ema_count = _take_record(records, f"rvq/{q}/ema_count",
                                           layer.ema_count.shape).copy()
            layer.ema_sum = _take_record(records, f"rvq/{q}/ema_sum",
                                         layer.ema_sum.shape).copy()
            layer.usage_ema = _take_record(records, f"rvq/{q}/usage_ema",
                                           layer.usage_ema.shape).copy()
        model.rvq.initialized = True
    if discs is not None:
        if "wave_config" not in header:
            raise ValueError(f"{path}: checkpoint has no discriminator weights")
        if (_jsonable(discs.wave_config) != header["wave_config"]
                or _jsonable(discs.stft_config) != header["stft_config"]):
            raise ValueError(
                "checkpoint discriminator configs do not match the given set")
        _assign(discs.named_parameters(), records, "disc/")
    return model
