"""AoI-aware two-stage content caching and delivery for connected vehicles."""

from .aoi import AoiLedger, ContractError, InfeasibleActionError, advance_aoi, build_layout
from .caching import CachingAction, ChannelLimits, UtilityParams, caching_utility, enumerate_actions
from .config import parse_config
from .harness import ConfigError, ScenarioConfig, run_scenario
from .service import DppParams, RequestQueue, dpp_decide, queue_step

__all__ = [
    "AoiLedger", "CachingAction", "ChannelLimits", "ConfigError", "ContractError",
    "DppParams", "InfeasibleActionError", "RequestQueue", "ScenarioConfig", "UtilityParams",
    "advance_aoi", "build_layout", "caching_utility", "dpp_decide", "enumerate_actions",
    "parse_config", "queue_step", "run_scenario",
]
__version__ = "0.1.0"
