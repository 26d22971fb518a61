"""Minimal reverse-mode network stack for neural SDFs and spatial warpings."""

from .checkpoint import load_net, net_from_bytes, net_to_bytes, save_net
from .networks import SdfNet, WarpNet, eval_sdf, forward_warp, grad_sdf
from .train import (
    Adam,
    TrainConfig,
    WarpLoss,
    fit_sdf,
    huber,
    pair_permutation,
    sdf_loss_and_grad,
    train_warp,
    warp_loss_and_grad,
)

__all__ = [
    "Adam", "SdfNet", "TrainConfig", "WarpLoss", "WarpNet", "eval_sdf", "fit_sdf", "forward_warp", "grad_sdf",
    "huber", "load_net", "net_from_bytes", "net_to_bytes", "pair_permutation", "save_net", "sdf_loss_and_grad",
    "train_warp", "warp_loss_and_grad",
]
