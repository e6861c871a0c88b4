"""Small numpy neural-network engine with exact backprop.

Tensors are plain ``numpy.ndarray`` objects in float32.
"""

from .gradcheck import BCE, gradient_check, projection_loss
from .layers import (
    DTYPE, BatchNorm, Conv3x3, Dense, Dropout, Flatten, Layer, LayerSpec, MaxPool2,
    ReLU, Sigmoid, UpSample2, build_layer, concat_channels, split_channels,
)
from .model import Module, Sequential
from .optim import (
    Adam, AdamState, TrainConfig, adam_step, bce_grad, bce_loss, lr_at_epoch,
    steps_per_epoch,
)
from .serialize import decode_weights, encode_weights, load_weights, save_weights
from .training import LossRecord, TrainResult, evaluate_loss, train

__all__ = [
    "BCE", "gradient_check", "projection_loss",
    "DTYPE", "BatchNorm", "Conv3x3", "Dense", "Dropout", "Flatten", "Layer",
    "LayerSpec", "MaxPool2", "ReLU", "Sigmoid", "UpSample2", "build_layer",
    "concat_channels", "split_channels",
    "Module", "Sequential",
    "Adam", "AdamState", "TrainConfig", "adam_step", "bce_grad", "bce_loss",
    "lr_at_epoch", "steps_per_epoch",
    "decode_weights", "encode_weights", "load_weights", "save_weights",
    "LossRecord", "TrainResult", "evaluate_loss", "train",
]
