"""Domain-adversarial network: feature extractor, label classifier, domain classifier.

Training alternates nothing: every batch runs both sub-processes on the same
parameter snapshot and applies their SGD updates together.

* label sub-process: source rows through ``g_f -> g_c``; loss on the class units.
* domain sub-process: half source, half target rows through ``g_f -> g_d``;
  ``g_d`` descends the domain loss, ``g_f`` receives the reversed gradient.

With ``adversarial=False`` the domain sub-process is skipped entirely and the
loop trains the plain ``g_f -> g_c`` feed-forward baseline.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from dinids.errors import DataError, DivergenceError, ShapeError
from dinids.nn import DenseNetwork, SgdConfig, backward, forward, grl_backward, sgd_step

log = logging.getLogger(__name__)

P_MIN, P_MAX = 1e-12, 1.0 - 1e-12
SOURCE, TARGET = 0, 1


@dataclass(frozen=True)
class DannTrainConfig:
    epochs: int = 50
    sgd: SgdConfig = field(default_factory=SgdConfig)
    validation_split: float = 0.3
    gamma_rate: float = 10.0
    lambda_fixed: float | None = None  # None selects the progress schedule
    lambda_max: float = 1.0  # scale of the scheduled value
    folds: int = 5
    early_stop_patience: int = 5
    adversarial: bool = True
    # "one_hot": cross-entropy on both sigmoid units; "true_class": only -log p_y
    label_loss_mode: str = "one_hot"
    input_dim: int = 39
    hidden: int = 10
    feature_dim: int = 10

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if not 0 < self.validation_split < 1:
            raise ValueError("validation_split must lie strictly between 0 and 1")
        if self.lambda_fixed is not None and self.lambda_fixed < 0:
            raise ValueError("fixed lambda must be non-negative")
        if self.early_stop_patience < 1 or self.folds < 1:
            raise ValueError("patience and folds must be positive")
        if self.label_loss_mode not in ("one_hot", "true_class"):
            raise ValueError(f"unknown label_loss_mode {self.label_loss_mode!r}")

    @property
    def feature_sizes(self):
        return [self.input_dim, self.hidden, self.hidden, self.feature_dim]

    @property
    def label_sizes(self):
        return [self.feature_dim, 2]

    @property
    def domain_sizes(self):
        return [self.feature_dim, self.hidden, 2]


@dataclass(eq=False)
class DannModel:
    g_f: DenseNetwork
    g_c: DenseNetwork
    g_d: DenseNetwork
    lambda_fixed: float | None = None

    def __post_init__(self):
        k = self.g_f.out_dim
        if self.g_c.in_dim != k or self.g_d.in_dim != k:
            raise ShapeError("label and domain classifiers must read the feature extractor output")
        if self.g_c.out_dim != 2 or self.g_d.out_dim != 2:
            raise ShapeError("classifier heads must have two output units")

    @classmethod
    def initialize(cls, cfg: DannTrainConfig, seed: int = 0) -> "DannModel":
        rngs = _streams(seed)
        return cls(
            DenseNetwork.initialize(cfg.feature_sizes, rngs["init_fc"]),
            DenseNetwork.initialize(cfg.label_sizes, rngs["init_fc"]),
            DenseNetwork.initialize(cfg.domain_sizes, rngs["init_d"]),
            cfg.lambda_fixed,
        )

    @property
    def input_dim(self) -> int:
        return self.g_f.in_dim

    def clone(self) -> "DannModel":
        return DannModel(self.g_f.clone(), self.g_c.clone(), self.g_d.clone(), self.lambda_fixed)


@dataclass
class TrainHistory:
    label_loss: list = field(default_factory=list)
    domain_loss: list = field(default_factory=list)
    validation_f1: list = field(default_factory=list)
    lambda_value: list = field(default_factory=list)
    best_epoch: int = -1

    def append(self, label_loss, domain_loss, val_f1, lam):
        self.label_loss.append(float(label_loss))
        self.domain_loss.append(float(domain_loss))
        self.validation_f1.append(float(val_f1))
        self.lambda_value.append(float(lam))

    def __len__(self):
        return len(self.label_loss)

    def to_csv(self) -> str:
        lines = ["epoch,label_loss,domain_loss,val_f1,lambda"]
        for i, row in enumerate(zip(self.label_loss, self.domain_loss, self.validation_f1, self.lambda_value)):
            lines.append(f"{i + 1}," + ",".join(repr(v) for v in row))
        return "\n".join(lines) + "\n"


def _streams(seed: int) -> dict:
    # independent generators per consumer so that skipping the domain
    # sub-process leaves every label-path draw unchanged
    names = ("split", "init_fc", "init_d", "label", "domain")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(s) for name, s in zip(names, children)}


def _clamp(p):
    return np.clip(p, P_MIN, P_MAX)


def label_loss(p_true_class):
    """``-log p`` of the probability assigned to the true class."""
    out = -np.log(_clamp(np.asarray(p_true_class, dtype=np.float64)))
    return float(out) if out.ndim == 0 else out


def domain_loss(p_target, gamma):
    """Binary cross-entropy of the target-domain probability against gamma (0 source, 1 target)."""
    p = _clamp(np.asarray(p_target, dtype=np.float64))
    gamma = np.asarray(gamma)
    if not np.all((gamma == 0) | (gamma == 1)):
        raise ValueError("domain labels must be 0 (source) or 1 (target)")
    out = -(gamma * np.log(p) + (1 - gamma) * np.log1p(-p))
    return float(out) if out.ndim == 0 else out


def lambda_at(progress: float, cfg: DannTrainConfig) -> float:
    if not 0.0 <= progress <= 1.0:
        raise ValueError(f"training progress must lie in [0, 1], got {progress}")
    if cfg.lambda_fixed is not None:
        return float(cfg.lambda_fixed)
    return cfg.lambda_max * float(2.0 / (1.0 + np.exp(-cfg.gamma_rate * progress)) - 1.0)


def two_unit_loss(p, target, mode="one_hot"):
    """Mean loss over rows of a two-unit sigmoid head and its gradient w.r.t. ``p``.

    ``target`` holds the index of the correct unit per row.
    """
    n = len(p)
    onehot = np.zeros_like(p)
    onehot[np.arange(n), target] = 1.0
    pc = _clamp(p)
    if mode == "one_hot":
        per_row = -(onehot * np.log(pc) + (1 - onehot) * np.log1p(-pc)).sum(axis=1)
        grad = (-(onehot / pc) + (1 - onehot) / (1 - pc)) / n
    else:
        per_row = -np.log(pc[np.arange(n), target])
        grad = -(onehot / pc) / n
    # no gradient flows through the clamp
    grad = np.where((p < P_MIN) | (p > P_MAX), 0.0, grad)
    return float(per_row.mean()), grad


def _check_matrix(x, cols, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cols:
        raise ShapeError(f"{name} must have {cols} columns, got shape {x.shape}")
    return x


def extract_features(model: DannModel, x) -> np.ndarray:
    """Project rows through the trained feature extractor (inference mode)."""
    x = np.asarray(x, dtype=np.float64)
    _check_matrix(x if x.ndim == 2 else x[None, :], model.input_dim, "x")
    return forward(model.g_f, x)


def label_scores(model: DannModel, x) -> np.ndarray:
    return forward(model.g_c, extract_features(model, x))


def predict_labels(model: DannModel, x) -> np.ndarray:
    """Argmax over the two class units; ties go to class 0."""
    return np.argmax(np.atleast_2d(label_scores(model, x)), axis=1)


def predict_domain(model: DannModel, x) -> np.ndarray:
    return np.argmax(np.atleast_2d(forward(model.g_d, extract_features(model, x))), axis=1)


def label_gradients(model: DannModel, xs, ys, cfg: DannTrainConfig, rng=None):
    """Label sub-process: returns ``(loss, g_c grads, g_f grads)``."""
    f = forward(model.g_f, xs, training=True, dropout_ratio=cfg.sgd.dropout_ratio if rng is not None else 0.0, rng=rng)
    p = forward(model.g_c, f, training=True)
    loss, dp = two_unit_loss(p, ys, cfg.label_loss_mode)
    gc = backward(model.g_c, dp)
    gf = backward(model.g_f, gc.input_grad)
    return loss, gc, gf


def domain_gradients(model: DannModel, x_mix, gamma, lam, dropout_ratio=0.0, rng=None, reverse=True):
    """Domain sub-process: returns ``(loss, g_d grads, g_f grads)``.

    The loss is the source-mean plus target-mean domain cross-entropy. With
    ``reverse`` the feature-extractor gradient passes through the reversal
    layer scaled by ``lam``; without it ``g_f`` gets the plain gradient.
    """
    gamma = np.asarray(gamma)
    n_t = int(gamma.sum())
    n_s = len(gamma) - n_t
    if n_s == 0 or n_t == 0:
        raise DataError("domain batch needs rows from both domains")
    f = forward(model.g_f, x_mix, training=True, dropout_ratio=dropout_ratio, rng=rng)
    q = forward(model.g_d, f, training=True)
    onehot = np.zeros_like(q)
    onehot[np.arange(len(q)), gamma] = 1.0
    qc = _clamp(q)
    per_row = -(onehot * np.log(qc) + (1 - onehot) * np.log1p(-qc)).sum(axis=1)
    weight = np.where(gamma == 1, 1.0 / n_t, 1.0 / n_s)
    loss = float(np.sum(per_row * weight))
    dq = (-(onehot / qc) + (1 - onehot) / (1 - qc)) * weight[:, None]
    dq = np.where((q < P_MIN) | (q > P_MAX), 0.0, dq)
    gd = backward(model.g_d, dq)
    feat_grad = grl_backward(gd.input_grad, lam) if reverse else gd.input_grad
    gf = backward(model.g_f, feat_grad)
    return loss, gd, gf


def _f1(y_true, y_pred) -> float:
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    fp = int(np.sum((y_true == 0) & (y_pred == 1)))
    fn = int(np.sum((y_true == 1) & (y_pred == 0)))
    return 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)


def _cycled(rng, n, length):
    reps = -(-length // n)
    return np.concatenate([rng.permutation(n) for _ in range(reps)])[:length]


def train_dann(source_x, source_y, target_x, cfg: DannTrainConfig = DannTrainConfig()):
    """Train on labelled source rows and unlabelled target rows.

    Returns ``(model, history)`` where ``model`` is the snapshot with the best
    validation F1 on the held-out source split. ``target_x`` may be ``None``
    only when ``cfg.adversarial`` is off.
    """
    source_x = _check_matrix(source_x, cfg.input_dim, "source_x")
    source_y = np.asarray(source_y).astype(np.int64)
    if len(source_x) == 0:
        raise DataError("source data is empty")
    if len(source_y) != len(source_x):
        raise ShapeError("source_x and source_y differ in length")
    if not np.all((source_y == 0) | (source_y == 1)):
        raise ValueError("source labels must be binary")
    if cfg.adversarial:
        if target_x is None or len(target_x) == 0:
            raise DataError("target data is empty")
        target_x = _check_matrix(target_x, cfg.input_dim, "target_x")

    seed = cfg.sgd.seed
    rngs = _streams(seed)
    order = rngs["split"].permutation(len(source_x))
    n_val = int(np.floor(len(source_x) * cfg.validation_split))
    if n_val == 0 or n_val == len(source_x):
        raise DataError("validation split leaves an empty training or validation set")
    val_idx, tr_idx = order[:n_val], order[n_val:]
    xs, ys = source_x[tr_idx], source_y[tr_idx]
    xv, yv = source_x[val_idx], source_y[val_idx]

    model = DannModel(
        DenseNetwork.initialize(cfg.feature_sizes, rngs["init_fc"]),
        DenseNetwork.initialize(cfg.label_sizes, rngs["init_fc"]),
        DenseNetwork.initialize(cfg.domain_sizes, rngs["init_d"]),
        cfg.lambda_fixed,
    )
    sgd = cfg.sgd
    bsz = min(sgd.batch_size, len(xs))
    n_batches = -(-len(xs) // bsz)
    half = max(1, bsz // 2)
    total_steps = cfg.epochs * n_batches
    history = TrainHistory()
    best, best_f1, since_best = model.clone(), -1.0, 0

    for epoch in range(cfg.epochs):
        perm = rngs["label"].permutation(len(xs))
        if cfg.adversarial:
            dom_src = _cycled(rngs["domain"], len(xs), n_batches * half)
            dom_tgt = _cycled(rngs["domain"], len(target_x), n_batches * half)
        y_losses, d_losses = [], []
        lam = 0.0
        for b in range(n_batches):
            lam = lambda_at((epoch * n_batches + b) / total_steps, cfg)
            idx = perm[b * bsz : (b + 1) * bsz]
            loss_y, gc, gf = label_gradients(model, xs[idx], ys[idx], cfg, rngs["label"])
            y_losses.append(loss_y)
            if cfg.adversarial:
                s_idx = dom_src[b * half : (b + 1) * half]
                t_idx = dom_tgt[b * half : (b + 1) * half]
                x_mix = np.concatenate([xs[s_idx], target_x[t_idx]])
                gamma = np.concatenate([np.full(len(s_idx), SOURCE), np.full(len(t_idx), TARGET)])
                loss_d, gd, gf_dom = domain_gradients(
                    model, x_mix, gamma, lam, sgd.dropout_ratio, rngs["domain"]
                )
                d_losses.append(loss_d)
                gf = gf + gf_dom
                sgd_step(model.g_d, gd, sgd)
            sgd_step(model.g_c, gc, sgd)
            sgd_step(model.g_f, gf, sgd)

        mean_y = float(np.mean(y_losses))
        mean_d = float(np.mean(d_losses)) if d_losses else 0.0
        if not (np.isfinite(mean_y) and np.isfinite(mean_d)):
            raise DivergenceError(f"non-finite loss in epoch {epoch + 1}", epoch=epoch + 1)
        val_f1 = _f1(yv, predict_labels(model, xv))
        history.append(mean_y, mean_d, val_f1, lam)
        log.debug("epoch %d: L_y=%.4f L_D=%.4f val_f1=%.4f lambda=%.3f", epoch + 1, mean_y, mean_d, val_f1, lam)
        if val_f1 >= best_f1:
            best, best_f1, since_best = model.clone(), val_f1, 0
            history.best_epoch = epoch + 1
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                break
    return best, history
