"""Two-stage low-light RAW to sRGB enhancement on a minimal autodiff core."""

from .errors import ConfigError, DataError, HimaError, NumericsError, ShapeError
from .model import (HimaNet, ModelConfig, PriorPyramid, build_model,
                    load_weights, save_weights)
from .rawio import (BAYER, XTRANS, NoiseModel, PackedRaw, SamplePair,
                    pack_bayer, pack_xtrans, synth_pair, unpack_bayer,
                    unpack_xtrans)
from .tensor import Tensor, no_grad, real32, real64

__version__ = "0.1.0"

__all__ = [
    "BAYER", "XTRANS", "ConfigError", "DataError", "HimaError", "HimaNet",
    "ModelConfig", "NoiseModel", "NumericsError", "PackedRaw", "PriorPyramid",
    "SamplePair", "ShapeError", "Tensor", "build_model", "load_weights",
    "no_grad", "pack_bayer", "pack_xtrans", "real32", "real64",
    "save_weights", "synth_pair", "unpack_bayer", "unpack_xtrans",
    "__version__",
]
