"""W-Cell-Net: dual-encoder CNN for interpolating fluorescence microscopy frames."""

from .autodiff import ParamStore, Tensor, backward, no_grad
from .data import FrameSample, VideoStack, extract_windows, split_dataset, synth_generate
from .losses import LossConfig, combined_loss
from .metrics import BaselineKind, baseline_predict, mse, psnr
from .model import ModelConfig, WCellNet, count_parameters, load_checkpoint, save_checkpoint
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"
