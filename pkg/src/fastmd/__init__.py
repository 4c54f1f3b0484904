"""Multi-decoder speech translation with fast hidden-intermediate decoding."""

from .decode import DecodeConfig, DecodeResult, decode
from .model import Counters, LossWeights, MDModel, MDModelConfig

__all__ = ["Counters", "DecodeConfig", "DecodeResult", "LossWeights", "MDModel", "MDModelConfig", "decode"]
__version__ = "0.1.0"
