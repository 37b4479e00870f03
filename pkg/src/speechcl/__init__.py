"""Contrastive self-supervised speech representation learning toolkit."""

from .alteration import AlterationConfig, AlterationRecord, alter
from .augment import AugmentConfig, NoiseBank, make_views
from .autodiff import DiffTensor
from .config import RunConfig, load_config
from .dsp import Waveform, read_wav, write_wav
from .features import FeatureMatrix, FrontendConfig, fbank
from .model import EncoderConfig, ModelParams, encode, init_params, project, reconstruct
from .objective import ContrastiveBatch, combined_loss, cosine_sim, nt_xent, recon_l1
from .trainer import TrainConfig, Trainer, extract_features, load_checkpoint, lr_at

__version__ = "0.1.0"

__all__ = [
    "AlterationConfig",
    "AlterationRecord",
    "AugmentConfig",
    "ContrastiveBatch",
    "DiffTensor",
    "EncoderConfig",
    "FeatureMatrix",
    "FrontendConfig",
    "ModelParams",
    "NoiseBank",
    "RunConfig",
    "TrainConfig",
    "Trainer",
    "Waveform",
    "alter",
    "combined_loss",
    "cosine_sim",
    "encode",
    "extract_features",
    "fbank",
    "init_params",
    "load_checkpoint",
    "load_config",
    "lr_at",
    "make_views",
    "nt_xent",
    "project",
    "read_wav",
    "recon_l1",
    "reconstruct",
    "write_wav",
    "__version__",
]
