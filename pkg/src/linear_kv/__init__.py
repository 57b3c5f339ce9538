"""Line-granular KV cache compression for raster-order decoding."""

from .baselines import POLICY_NAMES, make_policy
from .cache import VisualKVCache
from .config import RunConfig
from .decoder import ModelConfig, RasterDecoder, synth_condition
from .errors import ConfigError, LinearKVError
from .grid import BudgetConfig, GridSpec, budget_from_ratio
from .policy import EvictionPolicy, LineGuidedPolicy, bottom_k, saliency
from .trace import DecodeTrace

__version__ = "0.1.0"

__all__ = [
    "POLICY_NAMES",
    "make_policy",
    "VisualKVCache",
    "RunConfig",
    "ModelConfig",
    "RasterDecoder",
    "synth_condition",
    "ConfigError",
    "LinearKVError",
    "BudgetConfig",
    "GridSpec",
    "budget_from_ratio",
    "EvictionPolicy",
    "LineGuidedPolicy",
    "bottom_k",
    "saliency",
    "DecodeTrace",
    "__version__",
]
