"""American basket options priced and hedged with per-timestep networks trained on the BSDE residual."""

__version__ = "0.1.0"

from .market import MarketParams, PayoffKind, PayoffSpec  # noqa: E402
from .training import TrainConfig, ValueSurface, backward_sweep  # noqa: E402

__all__ = ["MarketParams", "PayoffKind", "PayoffSpec", "TrainConfig", "ValueSurface", "backward_sweep",
           "__version__"]
