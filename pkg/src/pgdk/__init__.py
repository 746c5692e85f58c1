"""Policy gradient on a deep Koopman representation.

A learned lifting network with least-squares linear maps serves as the
dynamics surrogate, a TD-trained network approximates the discounted cost,
and a deterministic policy is trained through the surrogate's input
sensitivity.
"""

from ._accel import BACKEND
from .config import TrainConfig, parse_config
from .koopman import DataBatch, KoopmanModel
from .trainer import convergence_report, evaluate, train

__all__ = [
    "BACKEND", "DataBatch", "KoopmanModel", "TrainConfig", "convergence_report",
    "evaluate", "parse_config", "train",
]
__version__ = "0.1.0"
