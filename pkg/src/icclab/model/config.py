"""Model hyperparameters."""

from __future__ import annotations

from dataclasses import dataclass

from ..codec import VOCAB


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 4
    heads: int = 4
    d_model: int = 128
    d_ff: int = 512
    vocab_size: int = len(VOCAB)
    max_seq: int = 1024
    seed: int = 0

    def __post_init__(self):
        for field in ("layers", "heads", "d_model", "d_ff", "vocab_size", "max_seq"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be positive")
        if self.d_model % self.heads != 0:
            raise ValueError(
                f"d_model={self.d_model} not divisible by heads={self.heads}"
            )
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads

    def to_dict(self) -> dict:
        return {
            "layers": self.layers,
            "heads": self.heads,
            "d_model": self.d_model,
            "d_ff": self.d_ff,
            "vocab_size": self.vocab_size,
            "max_seq": self.max_seq,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**{k: int(v) for k, v in d.items()})


def tiny_config(seed: int = 0) -> ModelConfig:
    """Small config for gradient checks and fast tests."""
    return ModelConfig(layers=2, heads=2, d_model=16, d_ff=32, max_seq=64, seed=seed)
