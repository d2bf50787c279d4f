"""Transformer model: network, loss, training, generation, adapters."""

from .checkpoint import CorruptCheckpoint, load_checkpoint, save_checkpoint
from .config import ModelConfig, tiny_config
from .generate import generate
from .gradcheck import grad_check
from .lora import LoraModel, RankTooLarge, attach_lora, merge_lora
from .loss import EmptyMask, ntp_loss, ntp_loss_and_grad
from .network import AttentionTensor, SequenceTooLong, Transformer
from .train import AdamW, DivergenceError, TrainConfig, TrainResult, train

__all__ = [
    "AdamW",
    "AttentionTensor",
    "CorruptCheckpoint",
    "DivergenceError",
    "EmptyMask",
    "LoraModel",
    "ModelConfig",
    "RankTooLarge",
    "SequenceTooLong",
    "TrainConfig",
    "TrainResult",
    "Transformer",
    "attach_lora",
    "generate",
    "grad_check",
    "load_checkpoint",
    "merge_lora",
    "ntp_loss",
    "ntp_loss_and_grad",
    "save_checkpoint",
    "tiny_config",
    "train",
]
