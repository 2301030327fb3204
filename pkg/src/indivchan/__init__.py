"""Communication over individual channels: rate functions, coding schemes and their overheads."""

from .core import (
    Alphabet,
    Channel,
    InvalidInput,
    InvalidParameter,
    OverheadReport,
    Prior,
    ResourceLimit,
    SharedRandomness,
    SymbolSequence,
    apply_channel,
    sample_prior,
)
from .ratefn import get_rate_function, list_registry
from .coding import (
    AdaptiveSession,
    FixedRateCode,
    fixed_decode,
    fixed_encode,
    run_adaptive,
    run_doubling,
)
from .analysis import intrinsic_redundancy, nml_constant, theorem_framework_params
from .mimo import MimoConfig, gaussian_theorem_params

__all__ = [
    "Alphabet", "Channel", "InvalidInput", "InvalidParameter", "OverheadReport", "Prior", "ResourceLimit",
    "SharedRandomness", "SymbolSequence", "apply_channel", "sample_prior", "get_rate_function", "list_registry",
    "AdaptiveSession", "FixedRateCode", "fixed_decode", "fixed_encode", "run_adaptive", "run_doubling",
    "intrinsic_redundancy", "nml_constant", "theorem_framework_params", "MimoConfig", "gaussian_theorem_params",
]
__version__ = "0.1.0"
