"""Report models emitted by preprocessing, training and evaluation."""

from typing import Dict, List, Optional

from pydantic import BaseModel, Field

CUTOFFS = (5, 10, 20)


class StatsReport(BaseModel):
    """Dataset statistics in the layout of the dataset table."""

    users: int = Field(..., description="Number of users")
    items: int = Field(..., description="Number of items")
    interactions: int = Field(..., description="Number of interactions")
    avg_length: float = Field(..., description="Average sequence length")
    sparsity: float = Field(..., description="1 - interactions / (users * items)")
    avg_length_definition: str = Field(default="interactions / users", description="How avg_length is computed")

    def to_text(self) -> str:
        header = f"{'users':>10} {'items':>10} {'interactions':>14} {'avg.length':>11} {'sparsity':>10}"
        row = (f"{self.users:>10,} {self.items:>10,} {self.interactions:>14,} "
               f"{self.avg_length:>11.1f} {self.sparsity * 100:>9.2f}%")
        return f"{header}\n{row}\n"


class MetricsReport(BaseModel):
    """HR@K and NDCG@K over one split."""

    split: str = Field(..., description="valid or test")
    users: int = Field(..., description="Users evaluated")
    hr: Dict[int, float] = Field(..., description="Hit ratio per cutoff")
    ndcg: Dict[int, float] = Field(..., description="NDCG per cutoff")

    def metrics(self) -> Dict[str, float]:
        """The six ranking metrics keyed by column name."""
        out = {f"HR@{k}": self.hr[k] for k in CUTOFFS}
        out.update({f"NDCG@{k}": self.ndcg[k] for k in CUTOFFS})
        return out

    def to_json_dict(self) -> Dict:
        return {"split": self.split, "users": self.users, "metrics": self.metrics()}

    def to_text(self) -> str:
        names = list(self.metrics())
        header = f"{'split':<8}" + "".join(f"{n:>10}" for n in names)
        row = f"{self.split:<8}" + "".join(f"{v:>10.4f}" for v in self.metrics().values())
        return f"{header}\n{row}\n"


class EpochRecord(BaseModel):
    """One line of the training log."""

    epoch: int = Field(..., description="1-based epoch number")
    l_rs: float = Field(..., description="Mean next-item loss")
    l_ssl: Optional[float] = Field(default=None, description="Mean contrastive loss; absent when SSL is off")
    l_total: float = Field(..., description="Mean joint loss")
    valid_hr: Dict[int, float] = Field(default_factory=dict)
    valid_ndcg: Dict[int, float] = Field(default_factory=dict)
    keep_probability: List[float] = Field(default_factory=list, description="Mean gate keep probability per layer")
    steps: int = Field(default=0)
    forward_passes: int = Field(default=0, description="Encoder calls in taped evaluations")
    antithetic_passes: int = Field(default=0, description="Antithetic loss re-evaluations")
    ssl_skipped_steps: int = Field(default=0, description="Steps whose batch was too small for info_nce")
    wall_time: float = Field(default=0.0, description="Seconds spent in the epoch")


class SweepRow(BaseModel):
    """Test metrics of one hyperparameter grid point."""

    lambda_: float = Field(..., alias="lambda")
    hidden_size: int
    metrics: Dict[str, float]

    model_config = {"populate_by_name": True}

    def flat(self) -> Dict[str, float]:
        return {"lambda": self.lambda_, "hidden_size": self.hidden_size, **self.metrics}


class AblationRow(BaseModel):
    """Test metrics of one ablation variant."""

    variant: str
    metrics: Dict[str, float]

    def flat(self) -> Dict[str, float]:
        return {"variant": self.variant, **self.metrics}
