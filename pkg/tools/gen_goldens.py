"""Regenerate the golden bitstream files under tests/golden/.

The files pin the normative byte layout; regenerate only when the format
version changes, and update docs/formats.md to match.
"""

from pathlib import Path

import numpy as np

from sscodec.bitstream import pack
from sscodec.model import ModelConfig

OUT = Path(__file__).resolve().parent.parent / "tests" / "golden"


def main():
    OUT.mkdir(parents=True, exist_ok=True)

    # one frame, one layer, binary codebook: payload is the single bit 1
    cfg = ModelConfig(sample_rate=24000, strides=(2, 4, 5, 8),
                      embedding_dim=256, num_quantizers=1, codebook_size=2)
    (OUT / "single_frame.ssbc").write_bytes(
        pack(np.array([[1]]), cfg).to_bytes())

    # one second at the default rate: 75 frames x 8 layers x 10 bits
    cfg = ModelConfig(sample_rate=24000, strides=(2, 4, 5, 8),
                      embedding_dim=256, num_quantizers=8, codebook_size=1024)
    rng = np.random.default_rng(2024)
    (OUT / "one_second.ssbc").write_bytes(
        pack(rng.integers(0, 1024, size=(75, 8)), cfg).to_bytes())

    # many shallow layers: 80 binary quantizers, 3 frames
    cfg = ModelConfig(sample_rate=24000, strides=(2, 4, 5, 8),
                      embedding_dim=256, num_quantizers=80, codebook_size=2)
    rng = np.random.default_rng(80)
    (OUT / "deep_rvq.ssbc").write_bytes(
        pack(rng.integers(0, 2, size=(3, 80)), cfg).to_bytes())

    for name in ("single_frame.ssbc", "one_second.ssbc", "deep_rvq.ssbc"):
        data = (OUT / name).read_bytes()
        print(f"{name}: {len(data)} bytes")
        print("  " + data[:23].hex(" "))


if __name__ == "__main__":
    main()
