"""The four trainable pipelines compared by the evaluation protocols.

``di-nids``       scaler -> DANN feature extractor -> one-class SVM on benign source features
``dann``          scaler -> DANN, predictions from its label classifier
``feed-forward``  scaler -> the same G_f/G_C stack trained without the domain branch
``osvm``          scaler -> one-class SVM on raw scaled benign source rows
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from dinids.dann import DannModel, DannTrainConfig, TrainHistory, extract_features, predict_labels, train_dann
from dinids.dataset import ScalerParams, apply_scaler, fit_scaler, split_indices
from dinids.errors import DataError
from dinids.osvm import GAMMA_GRID, NU_GRID, OsvmConfig, OsvmModel, predict, select_osvm_params, train_osvm

log = logging.getLogger(__name__)

PIPELINES = ("di-nids", "dann", "feed-forward", "osvm")


@dataclass(frozen=True)
class ModelConfig:
    dann: DannTrainConfig = field(default_factory=DannTrainConfig)
    osvm: OsvmConfig = field(default_factory=OsvmConfig)
    osvm_grid: bool = True
    gammas: tuple = GAMMA_GRID
    nus: tuple = NU_GRID
    osvm_val_fraction: float = 0.3
    osvm_max_train: int = 5000  # cap on benign rows handed to the O(n^2) solver

    def __post_init__(self):
        if not 0 < self.osvm_val_fraction < 1:
            raise ValueError("osvm_val_fraction must lie strictly between 0 and 1")
        if self.osvm_max_train < 2:
            raise ValueError("osvm_max_train must be at least 2")


class StageError(RuntimeError):
    """Marks which pipeline stage failed; the original exception is the cause."""

    def __init__(self, stage, exc):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage


@dataclass(eq=False)
class FittedPipeline:
    kind: str
    scaler: ScalerParams
    dann: DannModel | None = None
    osvm: OsvmModel | None = None
    history: TrainHistory | None = None
    osvm_selection_f1: float | None = None

    def transform(self, x_raw) -> np.ndarray:
        """Scaled input, projected through G_f when the pipeline has one in front of the SVM."""
        x = apply_scaler(self.scaler, x_raw)
        if self.kind == "di-nids":
            return extract_features(self.dann, x)
        return x

    def predict(self, x_raw) -> np.ndarray:
        if self.kind in ("dann", "feed-forward"):
            return predict_labels(self.dann, apply_scaler(self.scaler, x_raw))
        return np.asarray(predict(self.osvm, self.transform(x_raw)))


def _fit_osvm(features, y, cfg: ModelConfig, seed: int):
    fit_idx, val_idx = split_indices(len(features), cfg.osvm_val_fraction, seed)
    if not cfg.osvm_grid:
        # without a grid the validation split is not needed: use every benign row
        fit_idx = np.arange(len(features))
    benign = fit_idx[y[fit_idx] == 0]
    if len(benign) < 2:
        raise DataError("fewer than two benign rows available for the one-class SVM")
    if len(benign) > cfg.osvm_max_train:
        rng = np.random.default_rng([seed, 0x05F3])
        benign = np.sort(rng.choice(benign, size=cfg.osvm_max_train, replace=False))
    x_fit = features[benign]
    if not cfg.osvm_grid:
        return train_osvm(x_fit, cfg.osvm), None
    chosen, f1, model = select_osvm_params(x_fit, features[val_idx], y[val_idx], cfg.osvm, cfg.gammas, cfg.nus)
    log.info("osvm grid picked gamma=%g nu=%g (validation F1 %.4f)", chosen.gamma, chosen.nu, f1)
    return model, f1


def fit_pipeline(kind: str, source_x, source_y, target_x, cfg: ModelConfig = ModelConfig(), seed: int = 0) -> FittedPipeline:
    """Fit one pipeline. ``target_x`` is unlabelled and only read by the adversarial pipelines."""
    if kind not in PIPELINES:
        raise ValueError(f"unknown pipeline {kind!r}; choose from {', '.join(PIPELINES)}")
    source_x = np.asarray(source_x, dtype=np.float64)
    source_y = np.asarray(source_y).astype(np.int64)
    scaler = fit_scaler(source_x)
    xs = apply_scaler(scaler, source_x)
    out = FittedPipeline(kind, scaler)

    if kind != "osvm":
        dcfg = replace(cfg.dann, sgd=replace(cfg.dann.sgd, seed=seed), input_dim=xs.shape[1],
                       adversarial=cfg.dann.adversarial and kind != "feed-forward")
        xt = apply_scaler(scaler, target_x) if dcfg.adversarial else None
        try:
            out.dann, out.history = train_dann(xs, source_y, xt, dcfg)
        except Exception as exc:
            raise StageError("train_dann", exc) from exc
    if kind in ("di-nids", "osvm"):
        features = extract_features(out.dann, xs) if kind == "di-nids" else xs
        try:
            out.osvm, out.osvm_selection_f1 = _fit_osvm(features, source_y, cfg, seed)
        except Exception as exc:
            raise StageError("train_osvm", exc) from exc
    return out
