"""Experiment configuration: one JSON document fully determines a run.

Every random choice draws from a seed named in the config; seeds have no
defaults, so a config without them fails validation.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import data, nn
from .errors import InsufficientDataError
from .decompose import BASELINES, DEFAULT_FRACTIONS, FACTORS, SCORERS
from .influence import InfluenceConfig
from .solvers import LISSA_SCALE_GRID
from .train import ProtocolConfig, TrainConfig

MODES = ("decompose", "correlate", "sweep", "mislabel", "influence-scores")


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SyntheticSource(_Block):
    kind: Literal["classification", "regression"] = "classification"
    n: int = Field(gt=0)
    p: int = Field(gt=0)
    classes: int = Field(2, gt=0)
    seed: int
    separation: float = 3.0
    clusters_per_class: int = Field(1, gt=0)
    noise: float = Field(1.0, ge=0)
    n_outputs: int = Field(1, gt=0)


class CsvSource(_Block):
    path: str
    targets: list[str]
    features: Optional[list[str]] = None
    task: Literal["regression", "classification"] = "regression"
    num_classes: Optional[int] = None


class Subsample(_Block):
    fraction: float = Field(gt=0, le=1)
    seed: int


class Corruption(_Block):
    fraction: float = Field(ge=0, le=1)
    seed: int


class DatasetBlock(_Block):
    synthetic: Optional[SyntheticSource] = None
    csv: Optional[CsvSource] = None
    normalize: bool = False
    subsample: Optional[Subsample] = None
    corruption: Optional[Corruption] = None
    test_size: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _one_source(self):
        if (self.synthetic is None) == (self.csv is None):
            raise ValueError("exactly one of 'synthetic' or 'csv' must be given")
        return self


class ModelBlock(_Block):
    layer_widths: list[int]
    activation: Union[str, list[str]] = "relu"
    loss_kind: str = "squared_error"
    l2_strength: float = Field(0.0, ge=0)
    init_seed: int


class TrainBlock(_Block):
    optimizer: str = "sgd"
    learning_rate: float = Field(0.1, gt=0)
    momentum: float = Field(0.0, ge=0, lt=1)
    batch_size: Union[int, Literal["full"]] = "full"
    epochs: int = Field(100, ge=1)
    seed: int
    lr_decay: list[tuple[int, float]] = []
    grad_tol: Optional[float] = None


class ProtocolBlock(_Block):
    damping: float = Field(1e-3, ge=0)
    retrain_epochs: Optional[int] = None
    bregman_lr_factor: float = Field(0.1, gt=0)
    bregman_epochs: Optional[int] = None
    bregman_batch_size: Union[int, Literal["full"], None] = None
    bregman_momentum: Optional[float] = None
    epsilon: Optional[float] = None


class InfluenceBlock(_Block):
    epsilon: Optional[float] = None
    damping: float = Field(1e-3, ge=0)
    curvature: Literal["gnh", "hessian"] = "gnh"
    solver: Literal["exact", "cg", "lissa"] = "exact"
    cg_tol: float = 1e-10
    cg_max_iter: Optional[int] = None
    lissa_depth: int = 5000
    lissa_repeats: int = 1
    lissa_scale: float = 10.0
    lissa_batch_size: Optional[int] = None
    lissa_grid: list[float] = list(LISSA_SCALE_GRID)
    lissa_tune_tol: float = 1e-3
    seed: Optional[int] = None
    exact_max_dim: int = 2000


class SweepBlock(_Block):
    factor: Literal[FACTORS]
    grid: list[float] = Field(min_length=1)


class ExperimentBlock(_Block):
    mode: Literal[MODES]
    seed: int
    trials: int = Field(20, ge=1)
    group_size: int = Field(1, ge=0)
    test_ids: Optional[list[int]] = None
    n_test_points: int = Field(5, ge=1)
    baselines: list[Literal[BASELINES]] = list(BASELINES)
    sanity: bool = False
    scorer: Literal[SCORERS] = "influence_self"
    fractions: list[float] = list(DEFAULT_FRACTIONS)
    sweep: Optional[SweepBlock] = None

    @model_validator(mode="after")
    def _sweep_given(self):
        if self.mode == "sweep" and self.sweep is None:
            raise ValueError("sweep mode needs a 'sweep' block")
        return self


class ExperimentConfig(_Block):
    dataset: DatasetBlock
    model: ModelBlock
    train: TrainBlock
    protocol: ProtocolBlock = ProtocolBlock()
    influence: InfluenceBlock = InfluenceBlock()
    experiment: ExperimentBlock
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def _consistent(self):
        # build the runtime objects once so their own checks run at validation time
        self.network_spec()
        self.train_config()
        self.protocol_config()
        self.influence_config()
        if self.experiment.mode == "mislabel":
            if self.dataset.corruption is None:
                raise ValueError("mislabel mode needs a 'dataset.corruption' block")
        if self.experiment.mode in ("correlate", "influence-scores") and self.dataset.test_size < 1:
            raise ValueError(f"{self.experiment.mode} mode needs dataset.test_size >= 1")
        return self

    def network_spec(self):
        m = self.model
        act = m.activation if isinstance(m.activation, str) else tuple(m.activation)
        return nn.NetworkSpec(tuple(m.layer_widths), act, m.loss_kind, m.l2_strength)

    def train_config(self):
        return TrainConfig(**self.train.model_dump())

    def protocol_config(self):
        return ProtocolConfig(**self.protocol.model_dump())

    def influence_config(self):
        d = self.influence.model_dump()
        d.pop("lissa_grid")
        d.pop("lissa_tune_tol")
        if d["seed"] is None:
            d["seed"] = self.experiment.seed
        return InfluenceConfig(**d)

    def seeds(self):
        """Every seed in the config by dotted path."""
        out = {}
        ds = self.dataset
        if ds.synthetic is not None:
            out["dataset.synthetic.seed"] = ds.synthetic.seed
        if ds.subsample is not None:
            out["dataset.subsample.seed"] = ds.subsample.seed
        if ds.corruption is not None:
            out["dataset.corruption.seed"] = ds.corruption.seed
        out["model.init_seed"] = self.model.init_seed
        out["train.seed"] = self.train.seed
        out["influence.seed"] = self.influence_config().seed
        out["experiment.seed"] = self.experiment.seed
        return out

    def with_seed(self, seed):
        """Copy with every seed replaced by ``seed``."""
        d = self.model_dump()
        for path in self.seeds():
            node = d
            *head, last = path.split(".")
            for k in head:
                node = node[k]
            node[last] = seed
        return ExperimentConfig.model_validate(d)


def load_config(path):
    """Parse a config file, or the resolved config inside a run manifest."""
    raw = json.loads(Path(path).read_text())
    if isinstance(raw, dict) and "config" in raw and "manifest_version" in raw:
        raw = raw["config"]
    return ExperimentConfig.model_validate(raw)


def build_datasets(cfg):
    """Training set, test set (possibly ``None``) and corruption record."""
    ds_cfg = cfg.dataset
    n_test = ds_cfg.test_size
    if ds_cfg.synthetic is not None:
        s = ds_cfg.synthetic
        if s.kind == "classification":
            full = data.synth_classification(
                s.n + n_test, s.p, s.classes, s.seed, s.separation, s.clusters_per_class, s.noise
            )
        else:
            full = data.synth_regression(s.n + n_test, s.p, s.seed, s.noise, s.n_outputs)
    else:
        c = ds_cfg.csv
        schema = data.CsvSchema(
            tuple(c.targets), None if c.features is None else tuple(c.features), c.task, c.num_classes
        )
        full = data.load_csv(c.path, schema)
    if ds_cfg.subsample is not None:
        full = data.subsample(full, ds_cfg.subsample.fraction, ds_cfg.subsample.seed)
    if n_test >= len(full):
        raise InsufficientDataError(f"test_size {n_test} leaves no training rows")
    train_ds, test_ds = data.split(full, len(full) - n_test)
    if ds_cfg.normalize:
        train_ds, params = data.normalize(train_ds)
        if n_test:
            test_ds = data.apply_normalization(test_ds, params)
    record = None
    if ds_cfg.corruption is not None:
        train_ds, record = data.corrupt_labels(
            train_ds, ds_cfg.corruption.fraction, ds_cfg.corruption.seed
        )
    return train_ds, (test_ds if n_test else None), record
