"""Noise-robust classifier training with meta-learned soft labels."""

from .dataio import Dataset, NoiseSpec, desk_benchmark, inject_noise, load_csv, make_blobs, save_csv, split
from .errors import DivergenceError, InvalidInputError, ParseError, UnsupportedModeError
from .model import MlpModel, OptimizerState, forward, grad_loss, init_mlp
from .softlabels import SoftLabelBank, init_soft_labels, label_hypergrad, meta_label_update, virtual_step
from .trainer import EpochMetrics, TrainConfig, run_experiment

__version__ = "0.1.0"
