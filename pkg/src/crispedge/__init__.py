"""Crisp edge detection: autodiff engine, LUS-Net, hybrid focal losses and S/C evaluation."""

from .losses import LossConfig, focal_loss, focal_tversky_loss, hybrid_focal_loss, tversky_index, weighted_ce
from .network import LUSNet, NetConfig
from .tensor import Tensor, backward

__all__ = [
    "LossConfig", "focal_loss", "focal_tversky_loss", "hybrid_focal_loss", "tversky_index",
    "weighted_ce", "LUSNet", "NetConfig", "Tensor", "backward",
]
__version__ = "0.1.0"
