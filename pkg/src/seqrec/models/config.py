"""Configuration models for the encoder, augmentation, training and losses."""

from pathlib import Path
from typing import Optional

from pydantic import BaseModel, Field, field_validator, model_validator


class ModelConfig(BaseModel):
    """Self-attentive encoder hyperparameters."""

    embed_dim: int = Field(default=64, gt=0, description="Embedding / hidden size d")
    num_heads: int = Field(default=2, gt=0, description="Attention heads per block")
    num_blocks: int = Field(default=2, gt=0, description="Self-attention blocks C (one gated FFN each)")
    max_len: int = Field(default=50, gt=0, description="Maximum sequence length T")
    attention_dropout: float = Field(default=0.0, ge=0.0, lt=1.0, description="Fixed dropout on attention weights")
    embedding_dropout: float = Field(default=0.0, ge=0.0, lt=1.0, description="Fixed dropout on input embeddings")
    lbd_init_keep: float = Field(default=0.9, gt=0.0, lt=1.0, description="Initial gate keep probability")
    layer_norm_eps: float = Field(default=1e-8, gt=0.0, description="Layer-norm epsilon")
    gates_disabled: bool = Field(default=False, description="Gates fixed at one in training and evaluation")

    @model_validator(mode="after")
    def _heads_divide_dim(self) -> "ModelConfig":
        if self.embed_dim % self.num_heads:
            raise ValueError(f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}")
        return self


class AugmentConfig(BaseModel):
    """Ratios of the five sequence operators and the correlation source."""

    crop_ratio: float = Field(default=0.6, gt=0.0, le=1.0)
    mask_ratio: float = Field(default=0.3, gt=0.0, le=1.0)
    reorder_ratio: float = Field(default=0.3, gt=0.0, le=1.0)
    substitute_ratio: float = Field(default=0.3, gt=0.0, le=1.0)
    insert_ratio: float = Field(default=0.3, gt=0.0, le=1.0)
    short_sequence_threshold: int = Field(default=4, ge=1, description="Sequences this short only get informative operators")
    correlation_window: int = Field(default=5, ge=1, description="Co-occurrence window for item correlations")
    correlation_top_k: int = Field(default=10, ge=1, description="Correlates kept per item")


class LossWeights(BaseModel):
    """Weight of the contrastive term and its temperature."""

    lambda_: float = Field(default=0.1, ge=0.0, alias="lambda", description="Weight of L_ssl in L_total")
    temperature: float = Field(default=1.0, gt=0.0, description="Similarity temperature of info_nce")
    normalize_views: bool = Field(default=True, description="Unit-normalize pooled views before info_nce")

    model_config = {"populate_by_name": True}


class TrainConfig(BaseModel):
    """Optimizer, schedule and ablation switches."""

    learning_rate: float = Field(default=1e-3, gt=0.0)
    adam_beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(default=1e-8, gt=0.0)
    batch_size: int = Field(default=256, ge=1)
    max_epochs: int = Field(default=200, ge=1)
    patience: int = Field(default=40, ge=1, description="Epochs without validation NDCG@10 gain before stopping")
    clip_norm: Optional[float] = Field(default=5.0, description="Global gradient-norm clip; None or 0 disables")
    gate_lr_multiplier: float = Field(default=1.0, ge=0.0, description="Learning-rate multiplier for gate logits")
    no_ssl: bool = Field(default=False, description="Drop the contrastive objective")
    no_lma: bool = Field(default=False, description="Use expected gates everywhere; no ARM")
    no_da: bool = Field(default=False, description="Identity data augmentation")
    disable_gates: bool = Field(default=False, description="All-ones gates in every pass (plain SASRec FFN)")
    exclude_history: bool = Field(default=False, description="Remove history items from ranking candidates")
    eval_batch_size: int = Field(default=256, ge=1)

    @field_validator("clip_norm")
    @classmethod
    def _clip_positive(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and value < 0:
            raise ValueError("clip_norm must be non-negative")
        return value


class RunConfig(BaseModel):
    """Everything one run needs; archived beside its outputs."""

    model: ModelConfig = Field(default_factory=ModelConfig)
    augment: AugmentConfig = Field(default_factory=AugmentConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    loss: LossWeights = Field(default_factory=LossWeights)
    seed: int = Field(default=42, description="Root seed for every random stream")
    data_path: Optional[Path] = Field(default=None, description="Preprocessed split cache")
    output_dir: Optional[Path] = Field(default=None, description="Directory receiving run artifacts")

    model_config = {"protected_namespaces": ()}
