"""Encoder-decoder transformer that generates a ranked differential diagnosis
and predicts the most likely pathology from a structured patient record."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .dataset import PatientInfo, PatientRecord, generate_synthetic, parse_ddxplus
from .errors import DDxTError
from .inference import Diagnosis, Predictor, batch_diagnose, diagnose, evaluate
from .metrics import ConfusionMatrix, EvalReport, build_report
from .model import ModelConfig, forward, init_params
from .tensor import Tensor, backward, no_grad
from .tokenizer import Vocabulary
from .training import TrainConfig, TrainState, fit

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "PatientInfo",
    "PatientRecord",
    "generate_synthetic",
    "parse_ddxplus",
    "DDxTError",
    "Diagnosis",
    "Predictor",
    "batch_diagnose",
    "diagnose",
    "evaluate",
    "ConfusionMatrix",
    "EvalReport",
    "build_report",
    "ModelConfig",
    "forward",
    "init_params",
    "Tensor",
    "backward",
    "no_grad",
    "Vocabulary",
    "TrainConfig",
    "TrainState",
    "fit",
]
