"""Minimal trainable CNN engine on numpy."""

from .checkpoint import load, save
from .metrics import count_flops, count_params, layer_flops, layer_params
from .model import ModelState, backward, forward, init_model, predict
from .regularizer import FilterPair, filter_matrix, similarity_regularizer
from .spec import Conv, Dense, Dropout, Flatten, MaxPool, NetworkSpec, Output, layer_shapes
from .train import (
    PlateauDecay,
    SnapshotStore,
    evaluate,
    evaluate_accuracy,
    one_hot,
    train,
    train_step,
    weighted_cross_entropy,
)
