"""Phase-aware stride-1 wavelet scattering encoder-decoder for image denoising."""
from ._accel import backend_name
from .config import ExperimentConfig, parse_config
from .decoder import Decoder, DecoderFlags, skip_planes
from .encoder import ScatterOutput, count_channels, extract_polar, scatter
from .filters import DegenerateBankWarning, FilterBank, build_bank, build_gaussian, build_morlet, littlewood_paley
from .io import ImageFile, load_pgm, render_overlay, save_pgm
from .metrics import evaluate, psnr, ssim
from .tensor import ConfigError, DataError, cconv2, circular_shift, fft2, ifft2, load_tensor, modulus, save_tensor

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "Decoder", "DecoderFlags", "DegenerateBankWarning", "ExperimentConfig",
    "FilterBank", "ImageFile", "ScatterOutput", "backend_name", "build_bank", "build_gaussian", "build_morlet",
    "cconv2", "circular_shift", "count_channels", "evaluate", "extract_polar", "fft2", "ifft2",
    "littlewood_paley", "load_pgm", "load_tensor", "modulus", "parse_config", "psnr", "render_overlay",
    "save_pgm", "save_tensor", "scatter", "skip_planes", "ssim",
]
