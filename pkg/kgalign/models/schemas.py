from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class Dims(BaseModel):
    model_config = ConfigDict(frozen=True)

    k_e: int = Field(..., ge=1, description="Entity-space dimension")
    k_r: int = Field(..., ge=1, description="Relation-space dimension")
    k_s: int = Field(..., ge=1, description="String-space dimension")


class TrainConfig(BaseModel):
    """Training hyperparameters. Every default here is a tuning choice, not a value fixed by the model."""

    model_config = ConfigDict(extra="forbid")

    gamma_a: float = Field(1.0, gt=0, description="Ranking margin")
    lr: float = Field(10.0, ge=0, description="SGD learning rate")
    epochs: int = Field(200, ge=1)
    batch_size: int = Field(64, ge=1)
    negatives_per_positive: int = Field(1, ge=1)
    lambda_c: float = Field(0.25, ge=0, description="Weight of the soft projected-norm penalty")
    k_e: int = Field(16, ge=1)
    k_r: int = Field(16, ge=1)
    k_s: int = Field(16, ge=1)
    seed: int = Field(0, ge=0)
    eval_every: int = Field(10, ge=0, description="Epochs between validation evaluations; 0 disables")
    init_noise: float = Field(0.01, ge=0, description="Half-width of uniform noise added to identity projections")
    negative_sampling: Literal["mode_uniform", "global_uniform"] = "mode_uniform"
    update_null: bool = Field(True, description="False keeps the null vector fixed at its initial value")
    eval_candidates: Literal["corruptions", "all_triples"] = "corruptions"
    workers: int = Field(1, ge=1, description="Threads for distance/evaluation reads only")

    @property
    def dims(self) -> Dims:
        return Dims(k_e=self.k_e, k_r=self.k_r, k_s=self.k_s)


class RunConfig(TrainConfig):
    """TrainConfig plus the file locations of one run."""

    triples_l1: Optional[Path] = None
    triples_l2: Optional[Path] = None
    types: Optional[Path] = None
    seeds_train: Optional[Path] = None
    seeds_valid: Optional[Path] = None
    seeds_test: Optional[Path] = None
    checkpoint: Optional[Path] = None
    out_dir: Optional[Path] = None
    labeled_pairs: Optional[Path] = None
    theta: Optional[float] = Field(None, ge=0)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{k: getattr(self, k) for k in TrainConfig.model_fields})


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

class RankingMetrics(BaseModel):
    mrr: float = Field(..., gt=0, le=1)
    hits_at_1: float = Field(..., ge=0, le=1)
    hits_at_10: float = Field(..., ge=0, le=1)
    mean_rank: float = Field(..., ge=1)
    n_queries: int = Field(..., ge=1)

    @model_validator(mode="after")
    def _hits_monotone(self):
        if self.hits_at_1 > self.hits_at_10:
            raise ValueError("hits_at_1 cannot exceed hits_at_10")
        return self


class ThresholdReport(BaseModel):
    theta: float
    accuracy: float = Field(..., ge=0, le=1)
    precision: float = Field(..., ge=0, le=1)
    recall: float = Field(..., ge=0, le=1)
    n_pairs: int = Field(..., ge=1)


class EpochRecord(BaseModel):
    epoch: int
    mean_loss: float = Field(..., ge=0)
    active_fraction: float = Field(..., ge=0, le=1)
    violations: int = Field(..., ge=0, description="Projected vectors outside the unit ball in the epoch's batches")
    penalty: float = Field(..., ge=0, description="Summed composite penalty over the epoch")
    clamped: int = Field(..., ge=0, description="Embedding rows rescaled onto the unit sphere")
    skipped: int = Field(..., ge=0, description="Positives skipped for an empty corruption set")
    validation: Optional[RankingMetrics] = None


class TrainReport(BaseModel):
    epochs: List[EpochRecord] = Field(default_factory=list)
    wall_clock_seconds: float = 0.0
    workers: int = 1

    @property
    def reproducible(self) -> bool:
        return self.workers == 1

    @property
    def loss_sequence(self) -> List[float]:
        return [e.mean_loss for e in self.epochs]

    def to_tsv(self) -> str:
        lines = [
            f"# workers={self.workers} reproducible={str(self.reproducible).lower()}",
            "epoch\tmean_loss\tactive_fraction\tviolations\tval_mrr\tval_hits1\tval_hits10\tpenalty\tclamped\tskipped",
        ]
        for e in self.epochs:
            v = e.validation
            val = (f"{v.mrr!r}\t{v.hits_at_1!r}\t{v.hits_at_10!r}" if v else "\t\t")
            lines.append(
                f"{e.epoch}\t{e.mean_loss!r}\t{e.active_fraction!r}\t{e.violations}\t{val}"
                f"\t{e.penalty!r}\t{e.clamped}\t{e.skipped}"
            )
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        final = self.epochs[-1] if self.epochs else None
        last_val = next((e.validation for e in reversed(self.epochs) if e.validation), None)
        return {
            "epochs": len(self.epochs),
            "final_mean_loss": final.mean_loss if final else None,
            "final_active_fraction": final.active_fraction if final else None,
            "last_validation": last_val.model_dump() if last_val else None,
            "wall_clock_seconds": self.wall_clock_seconds,
            "workers": self.workers,
            "reproducible": self.reproducible,
            "loss_sequence": self.loss_sequence,
        }
