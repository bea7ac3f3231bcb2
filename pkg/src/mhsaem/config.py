"""Experiment configuration documents (YAML or JSON), one per subcommand.

Unknown keys are rejected.  Defaults follow the usual GMM protocol: step
size 1 for 50 iterations then 0.05, anti-annealing 0.1 -> 1.2 at 2T/3 ->
1.0, means uniform in the unit cube, identity covariances.
"""

from pathlib import Path
from typing import List, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticError, model_validator

from .errors import ValidationError
from .schedules import AnnealSchedule, Schedule
from .trainers import TrainerConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GenerateConfig(_Strict):
    D: int = Field(2, ge=1, description="data dimension")
    K: int = Field(10, ge=1, description="number of components")
    N: int = Field(1000, ge=1, description="number of datapoints")
    omega: float = Field(0.5, gt=0, lt=1, description="target maximum pairwise overlap")
    seed: int = Field(..., description="generator seed")
    mc_samples: int = Field(10_000, ge=1, description="Monte-Carlo draws per overlap estimate")
    tolerance: float = Field(0.1, gt=0, description="relative tolerance on omega")
    labels: bool = Field(True, description="write the label column")


class ScheduleConfig(_Strict):
    kind: Literal["constant", "piecewise", "robbins-monro"] = "piecewise"
    value: float = Field(0.05, ge=0, le=1)
    warmup: int = Field(50, ge=0)
    exponent: float = 0.6

    def build(self):
        return Schedule(self.kind, self.value, self.warmup, self.exponent)


class AnnealConfig(_Strict):
    enabled: bool = True
    beta_min: float = Field(0.1, gt=0)
    beta_max: float = Field(1.2, gt=0)
    tau_fraction: float = Field(2.0 / 3.0, gt=0, lt=1)

    def build(self, T):
        if not self.enabled:
            return None
        return AnnealSchedule(self.beta_min, self.beta_max, self.tau_fraction, T)


class TrainConfig(_Strict):
    seed: int = Field(..., description="run seed (initialization, minibatches, chains)")
    data: Optional[str] = Field(None, description="data CSV")
    K: int = Field(10, ge=1, description="number of model components")
    family: Literal["gaussian", "sinh_arcsinh"] = "gaussian"
    algorithm: Literal["em", "saem", "mcsaem", "ssaem", "tsaem", "mhsaem"] = "mhsaem"
    B: int = Field(100, ge=1, description="minibatch size")
    M: int = Field(1, ge=1, description="samples or selections per datapoint")
    T: int = Field(1000, ge=1, description="iterations")
    Mbar: Optional[int] = Field(None, ge=1, description="TSAEM nearest means (defaults to M)")
    proposal: Literal["uniform", "optimal", "tabular", "tabular_forgetting", "u", "o", "t", "tf"] = "uniform"
    proposal_floor: float = Field(1e-6, ge=0)
    m_step: Literal["suffstats", "gradient"] = "suffstats"
    optimizer: Literal["plain", "adam"] = "plain"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    anneal: AnnealConfig = Field(default_factory=AnnealConfig)
    init: Optional[str] = Field(None, description="initial parameter checkpoint")
    truth: Optional[str] = Field(None, description="ground-truth checkpoint for the absolute error")
    loglik_every: Optional[int] = Field(None, ge=0)
    bias_every: int = Field(0, ge=0)
    checkpoint_every: int = Field(0, ge=0, description="write resumable state every n iterations")
    stop_at: Optional[int] = Field(None, ge=1, description="stop after this iteration (resumable)")
    inline_timing: bool = Field(False, description="also write wall_time_s into metrics.csv")
    accelerate: bool = Field(True, description="compiled kernels for Gaussian sampling paths")

    def trainer_config(self):
        return TrainerConfig(
            algorithm=self.algorithm, B=self.B, M=self.M, T=self.T, Mbar=self.Mbar,
            proposal=self.proposal, m_step=self.m_step, optimizer=self.optimizer,
            adam_beta1=self.adam_beta1, adam_beta2=self.adam_beta2, adam_eps=self.adam_eps,
            schedule=self.schedule.build(), anneal=self.anneal.build(self.T), seed=self.seed,
            loglik_every=self.loglik_every, bias_every=self.bias_every,
            proposal_floor=self.proposal_floor, accelerate=self.accelerate)


class SweepGrid(_Strict):
    algorithm: List[str] = Field(default_factory=lambda: ["mhsaem"])
    K: List[int] = Field(default_factory=lambda: [10])
    B: List[int] = Field(default_factory=lambda: [100])
    M: List[int] = Field(default_factory=lambda: [1])
    D: List[int] = Field(default_factory=lambda: [2])
    seed: List[int] = Field(default_factory=lambda: [0])


class SweepConfig(_Strict):
    seed: int = Field(..., description="data-generation seed")
    data: GenerateConfig = Field(None, description="dataset spec; D and K are taken from the grid")
    train: dict = Field(default_factory=dict, description="TrainConfig fields shared by every cell")
    grid: SweepGrid = Field(default_factory=SweepGrid)

    @model_validator(mode="before")
    @classmethod
    def _fill_data_seed(cls, values):
        if isinstance(values, dict):
            data = dict(values.get("data") or {})
            data.setdefault("seed", values.get("seed"))
            values = {**values, "data": data}
        return values

    @model_validator(mode="after")
    def _check_train(self):
        forbidden = {"algorithm", "K", "B", "M", "seed", "data"} & set(self.train)
        if forbidden:
            raise ValueError(f"grid keys cannot be set in 'train': {sorted(forbidden)}")
        TrainConfig(seed=0, **self.train)
        return self


class EvalConfig(_Strict):
    checkpoint: str
    data: str
    truth: Optional[str] = None
    metrics: Optional[str] = None


def read_document(path):
    path = Path(path)
    text = path.read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: expected a mapping at the top level")
    return doc


def build(model, doc):
    try:
        return model.model_validate(doc)
    except PydanticError as exc:
        raise ValidationError(str(exc)) from None


def merge(base, overrides):
    """Flag values override file values; nested keys are joined with a double underscore."""
    out = dict(base)
    for key, val in overrides.items():
        if val is None:
            continue
        parts = key.split("__")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = val
    return out
