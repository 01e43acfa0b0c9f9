from pydantic import BaseModel, Field
from typing import Literal


class EpochRecord(BaseModel):
    epoch: int
    phase: Literal["pretrain", "train", "augment"]
    mean_loss: float | None = None
    train_accuracy: float | None = None
    store_size: int


class AugmentationEvent(BaseModel):
    """Batch-mean losses before and after one augmentation event.

    Pixel-space (PGD) events report the classification loss only.
    """

    epoch: int
    n_generated: int
    initial_cls: float
    final_cls: float
    initial_const: float | None = None
    final_const: float | None = None
    const_increase_fraction: float | None = None


class TrainLog(BaseModel):
    mode: str
    surrogate: str | None = None
    seed: int
    fingerprint: str
    epochs: list[EpochRecord] = []
    events: list[AugmentationEvent] = []
    # kept in memory for progress reporting, never serialized
    wall_time: float = Field(default=0.0, exclude=True)

    def augmentation_epochs(self) -> list[int]:
        return [e.epoch for e in self.events]


class ConditionResult(BaseModel):
    condition: str
    accuracy: float = Field(ge=0.0, le=100.0)
    n: int = Field(gt=0)


class EvalReport(BaseModel):
    architecture: str
    fingerprint: str
    seed: int
    results: list[ConditionResult] = []

    def accuracy(self, condition: str) -> float:
        for r in self.results:
            if r.condition == condition:
                return r.accuracy
        raise KeyError(condition)

    def conditions(self) -> list[str]:
        return [r.condition for r in self.results]


class SweepRow(BaseModel):
    axis: str
    level: float
    accuracy: float
    n: int


class ShapeAttributes(BaseModel):
    """Generation metadata for one shapes-dataset sample."""

    shape: Literal["disc", "square", "triangle"]
    size: Literal["small", "medium", "large"]
    position: Literal["NW", "NE", "SW", "SE"]
    material: Literal["rubber", "metal"]
    color: int
    cx: float
    cy: float
    scale: float


class GradcheckResult(BaseModel):
    group: str
    max_relative_error: float
    passed: bool
