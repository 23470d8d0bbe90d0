"""Declarative experiment configuration: dataclass, text-file round trip
(configparser key/value format) and content hashing."""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field

from .data import SCENARIOS, condition_dim
from .losses import LossConfig
from .networks import CONDITIONING_CHOICES, BackboneConfig
from .optim import OptimizerConfig

METHODS = tuple(m for m in CONDITIONING_CHOICES if m != "none")


@dataclass
class ExperimentConfig:
    method: str = "inside-multi"
    scenario: str = "quadrant"
    folds: int = 3
    seeds: tuple = (0, 1, 2)
    dataset_size: int = 1200
    dataset_seed: int = 0
    canvas: tuple = (64, 64)
    backbone_kind: str = "encoder-decoder"
    base_channels: int = 16
    depth: int = 3
    num_classes: int = 2
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown conditioning method: {self.method!r}")
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario: {self.scenario!r}")
        if self.folds < 1:
            raise ValueError("folds must be >= 1")
        if not self.seeds:
            raise ValueError("need at least one seed")

    def make_backbone(self):
        return BackboneConfig(
            kind=self.backbone_kind,
            base_channels=self.base_channels,
            depth=self.depth,
            num_classes=self.num_classes,
            conditioning=self.method,
            input_size=tuple(self.canvas),
            in_channels=3,
            z_dim=condition_dim(self.scenario),
        )

    # -- text round trip ------------------------------------------------------

    def to_text(self):
        parser = configparser.ConfigParser()
        parser["experiment"] = {
            "method": self.method,
            "scenario": self.scenario,
            "folds": str(self.folds),
            "seeds": ",".join(str(s) for s in self.seeds),
            "dataset_size": str(self.dataset_size),
            "dataset_seed": str(self.dataset_seed),
        }
        parser["backbone"] = {
            "kind": self.backbone_kind,
            "base_channels": str(self.base_channels),
            "depth": str(self.depth),
            "num_classes": str(self.num_classes),
            "input_height": str(self.canvas[0]),
            "input_width": str(self.canvas[1]),
        }
        parser["loss"] = {
            "focal_weight": repr(self.loss.focal_weight),
            "focal_gamma": repr(self.loss.focal_gamma),
            "eta": repr(self.loss.eta),
            "dice_smooth": repr(self.loss.dice_smooth),
        }
        parser["optimizer"] = {
            "learning_rate": repr(self.optimizer.learning_rate),
            "beta1": repr(self.optimizer.beta1),
            "beta2": repr(self.optimizer.beta2),
            "adam_epsilon": repr(self.optimizer.adam_epsilon),
            "batch_size": str(self.optimizer.batch_size),
            "max_epochs": str(self.optimizer.max_epochs),
            "patience": str(self.optimizer.patience),
        }
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @staticmethod
    def load(path):
        parser = configparser.ConfigParser()
        with open(path) as fh:
            parser.read_file(fh)
        exp = parser["experiment"]
        bb = parser["backbone"] if parser.has_section("backbone") else {}
        loss = parser["loss"] if parser.has_section("loss") else {}
        opt = parser["optimizer"] if parser.has_section("optimizer") else {}
        return ExperimentConfig(
            method=exp.get("method", "inside-multi"),
            scenario=exp.get("scenario", "quadrant"),
            folds=int(exp.get("folds", 3)),
            seeds=tuple(int(s) for s in exp.get("seeds", "0,1,2").split(",")),
            dataset_size=int(exp.get("dataset_size", 1200)),
            dataset_seed=int(exp.get("dataset_seed", 0)),
            canvas=(int(bb.get("input_height", 64)), int(bb.get("input_width", 64))),
            backbone_kind=bb.get("kind", "encoder-decoder"),
            base_channels=int(bb.get("base_channels", 16)),
            depth=int(bb.get("depth", 3)),
            num_classes=int(bb.get("num_classes", 2)),
            loss=LossConfig(
                focal_weight=float(loss.get("focal_weight", 0.1)),
                focal_gamma=float(loss.get("focal_gamma", 0.5)),
                eta=float(loss.get("eta", 1e-4)),
                dice_smooth=float(loss.get("dice_smooth", 1.0)),
            ),
            optimizer=OptimizerConfig(
                learning_rate=float(opt.get("learning_rate", 1e-4)),
                beta1=float(opt.get("beta1", 0.9)),
                beta2=float(opt.get("beta2", 0.999)),
                adam_epsilon=float(opt.get("adam_epsilon", 1e-8)),
                batch_size=int(opt.get("batch_size", 16)),
                max_epochs=int(opt.get("max_epochs", 200)),
                patience=int(opt.get("patience", 10)),
            ),
        )

    def hash(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]
