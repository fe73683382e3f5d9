"""Hyperspectral image classification with a hybrid 3D/2D convolution + Bi-LSTM network."""

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (HsiCube, LabelMap, PatchSet, PcaModel, extract_patches, load_dataset, pca_apply,
                   pca_fit, save_dataset, stratified_split, synth_generate)
from .metrics import ConfusionMatrix, average_accuracy, kappa, overall_accuracy
from .network import (Architecture, HssnbModel, TrainConfig, build_model, grad_check, predict,
                      predict_proba, preset, train)
from .tensor import make_rng

__version__ = "0.1.0"
