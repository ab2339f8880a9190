"""Shifted-window recurrent video frame predictor on a small numpy autodiff core."""
from ._kernels import BACKEND
from .cell import CellState, SwinLSTMCell, degenerate_gate_check, gate_update
from .config import ModelConfig, RunConfig, TrainConfig
from .errors import (CheckpointConfigError, CheckpointError, CheckpointTruncatedError,
                     CheckpointVersionError, ConfigError, DataFormatError, GradientCheckError,
                     NonDeterministicError, NonFiniteError, ShapeError, SwinLSTMError,
                     TruncatedDataError)
from .metrics import MetricReport, mae, mse, psnr, ssim
from .model import SwinLSTM
from .tensor import Tensor, backward, grad_check, no_grad
from .training import Trainer, load_checkpoint, save_checkpoint, train_step

__version__ = "0.1.0"
