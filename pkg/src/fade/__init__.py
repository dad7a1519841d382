"""Dynamic x2 feature upsampling from encoder and decoder features.

Kernels are predicted jointly from the high-resolution encoder feature and the
low-resolution decoder feature with a semi-shift convolution, used to
reassemble the decoder feature, and the result is refined with a
decoder-conditioned gate that lets encoder detail through.
"""
from .errors import FadeError
from .kernel_gen import (
    KernelGenParams,
    KernelMap,
    gen_kernels_naive,
    gen_kernels_oracle,
    gen_kernels_semishift,
    semishift_subprocess,
)
from .tensor_core import ConvWeights, Padding
from .upsample import (
    FadeParams,
    GateMap,
    GateParams,
    KernelPredictorParams,
    carafe_forward,
    encoder_only_kernels,
    fade_forward,
    gate_generate,
    gated_blend,
    reassemble,
)

__all__ = [
    "ConvWeights", "FadeError", "FadeParams", "GateMap", "GateParams", "KernelGenParams", "KernelMap",
    "KernelPredictorParams", "Padding", "carafe_forward", "encoder_only_kernels", "fade_forward",
    "gate_generate", "gated_blend", "gen_kernels_naive", "gen_kernels_oracle", "gen_kernels_semishift",
    "reassemble", "semishift_subprocess",
]
__version__ = "0.1.0"
