"""3D U-Net, loss and training on top of torch tensors and autograd."""
from .loss import loss_and_grad, loss_bce_dice, soft_dice
from .train import (TrainConfig, TrainResult, evaluate_loss, load_checkpoint, predict,
                    save_checkpoint, train)
from .unet import UNet3D, UNetConfig, build_unet, count_parameters

__all__ = [
    "UNet3D", "UNetConfig", "build_unet", "count_parameters",
    "loss_bce_dice", "loss_and_grad", "soft_dice",
    "TrainConfig", "TrainResult", "train", "predict", "evaluate_loss",
    "save_checkpoint", "load_checkpoint",
]
