"""Minimal differentiable-tensor engine: layers, losses, Adam, training."""

from .gradcheck import check_layer, finite_difference, grad_check, relative_error
from .layers import (Conv3x3, ConvTranspose2, Layer, LayerSpec, Linear, MaxPool2,
                     ReLU, Sigmoid, build_layer, kaiming_uniform)
from .losses import (bce_grad, bce_loss, bce_with_logits, bce_with_logits_grad,
                     kl_gauss, kl_gauss_grads, mse_grad, mse_loss, smooth_l1,
                     smooth_l1_grad)
from .optim import Adam, adam_step
from .training import EpochRecord, TrainConfig, TrainResult, train_loop
from .weights import MODEL_TAGS, ModelWeights, load_weights, save_weights

__all__ = [
    "Adam", "Conv3x3", "ConvTranspose2", "EpochRecord", "Layer", "LayerSpec",
    "Linear", "MaxPool2", "MODEL_TAGS", "ModelWeights", "ReLU", "Sigmoid",
    "TrainConfig", "TrainResult", "adam_step", "bce_grad", "bce_loss",
    "bce_with_logits", "bce_with_logits_grad", "build_layer", "check_layer",
    "finite_difference", "grad_check", "kaiming_uniform", "kl_gauss",
    "kl_gauss_grads", "load_weights", "mse_grad", "mse_loss", "relative_error",
    "save_weights", "smooth_l1", "smooth_l1_grad", "train_loop",
]
