"""Mono 16-bit PCM WAV reading and writing on top of the stdlib wave
module. Samples map to float32 in [-1, 1] as value / 32767; writing
clamps, scales by 32767, and rounds half away from zero.
"""

import wave

import numpy as np


def write_wav(path, x, sample_rate):
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 1:
        raise ValueError(f"expected mono waveform (T,), got shape {x.shape}")
    if sample_rate < 1:
        raise ValueError("sample_rate must be positive")
    y = np.clip(x, -1.0, 1.0).astype(np.float64) * 32767.0
    pcm = np.trunc(y + np.copysign(0.5, y)).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(sample_rate))
        w.writeframes(pcm.tobytes())


def read_wav(path):
    """Returns (samples float32 in [-1, 1], sample_rate)."""
    try:
        handle = wave.open(str(path), "rb")
    except EOFError:
        # the wave module raises bare EOFError on empty/short files
        raise ValueError(f"{path} is not a wav file: unexpected end of file")
    with handle as w:
        if w.getnchannels() != 1:
            raise ValueError(f"expected mono audio, got {w.getnchannels()} channels")
        if w.getsampwidth() != 2:
            raise ValueError(f"expected 16-bit samples, got {8 * w.getsampwidth()}-bit")
        if w.getcomptype() != "NONE":
            raise ValueError(f"expected uncompressed PCM, got {w.getcomptype()}")
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2")
    return (pcm.astype(np.float32) / 32767.0), rate
