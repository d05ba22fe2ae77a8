"""Streamable convolutional audio codec with residual vector quantization."""

from sscodec.bitstream import (EncodedStream, StreamHeader, nominal_bitrate,
                               pack, unpack)
from sscodec.checkpoint import load_checkpoint, save_checkpoint
from sscodec.model import CodecModel, ModelConfig
from sscodec.streaming import (ChunkAccumulator, StreamingState, rtf_benchmark,
                               stream_decode, stream_encode)
from sscodec.tensor import Tape, Tensor, backward
from sscodec.train import TrainConfig, Trainer, WavDataset, parse_config_file
from sscodec.wavio import read_wav, write_wav

__version__ = "0.1.0"

__all__ = [
    "ChunkAccumulator", "CodecModel", "EncodedStream", "ModelConfig",
    "StreamHeader", "StreamingState", "Tape", "Tensor", "TrainConfig",
    "Trainer", "WavDataset", "backward", "load_checkpoint",
    "nominal_bitrate", "pack", "parse_config_file", "read_wav",
    "rtf_benchmark", "save_checkpoint", "stream_decode", "stream_encode",
    "unpack", "write_wav", "__version__",
]
