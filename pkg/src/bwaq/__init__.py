"""1+1-bit weight / 4x1-bit activation quantization with a popcount kernel."""

from .actquant import (
    ActBitplanes,
    balance_scales,
    decompose_bitplanes,
    plane_corrections,
    quantize_activations,
    reconstruct,
    rtn_dequantize,
    rtn_quantize,
)
from .bitkernel import BitBlock, bench_forward, forward, forward_reference, group_counts, popc_and
from .calibration import (
    CalibrationStats,
    accumulate_hessian,
    calibrate,
    channel_permutation,
    damped_inverse_cholesky,
)
from .config import QuantConfig
from .errors import ConfigError, DataError, FormatError, InternalError
from .modelio import inspect_model, layer_nbytes, model_nbytes, read_model, write_model
from .tensorio import read_tensor, write_tensor
from .weightquant import (
    EmResult,
    QuantizedLinear,
    QuantReport,
    dequant_weights,
    e_step,
    em_binarize,
    em_binarize_plain,
    gptq_compensate,
    init_centers,
    m_step,
    quant_outliers_int8,
    quantize_linear,
    recover_affine,
)

__all__ = [
    "ActBitplanes",
    "BitBlock",
    "CalibrationStats",
    "ConfigError",
    "DataError",
    "EmResult",
    "FormatError",
    "InternalError",
    "QuantConfig",
    "QuantReport",
    "QuantizedLinear",
    "accumulate_hessian",
    "balance_scales",
    "bench_forward",
    "calibrate",
    "channel_permutation",
    "damped_inverse_cholesky",
    "decompose_bitplanes",
    "dequant_weights",
    "e_step",
    "em_binarize",
    "em_binarize_plain",
    "forward",
    "forward_reference",
    "gptq_compensate",
    "group_counts",
    "init_centers",
    "inspect_model",
    "layer_nbytes",
    "m_step",
    "model_nbytes",
    "plane_corrections",
    "popc_and",
    "quant_outliers_int8",
    "quantize_activations",
    "quantize_linear",
    "read_model",
    "read_tensor",
    "reconstruct",
    "recover_affine",
    "rtn_dequantize",
    "rtn_quantize",
    "write_model",
    "write_tensor",
]
