"""Synthetic source/target flow matrices with a controlled covariate shift.

Three kinds of columns:

* ``signal`` columns separate benign from attack identically in both domains;
* ``shortcut`` columns carry a weaker class signal in the source and are
  translated in the target, pushing target benign rows past the source
  attack mode;
* the rest are class- and domain-independent noise.

A classifier fit on the source leans on the shortcut columns and collapses on
the target; a representation that ignores the shortcut transfers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ShiftSpec:
    dim: int = 39
    n_signal: int = 2
    n_shortcut: int = 4
    attack_fraction: float = 0.2
    signal_gap: float = 0.3
    signal_std: float = 0.06
    shortcut_gap: float = 0.2
    shortcut_std: float = 0.1
    shift: float = 0.5
    noise_std: float = 0.1


def _domain(rng, n, spec: ShiftSpec, shifted: bool):
    y = (rng.random(n) < spec.attack_fraction).astype(np.int64)
    x = rng.normal(0.5, spec.noise_std, size=(n, spec.dim))
    s = slice(0, spec.n_signal)
    x[:, s] = rng.normal(0.35 + spec.signal_gap * y[:, None], spec.signal_std, size=(n, spec.n_signal))
    c = slice(spec.n_signal, spec.n_signal + spec.n_shortcut)
    base = 0.3 + spec.shortcut_gap * y[:, None] + (spec.shift if shifted else 0.0)
    x[:, c] = rng.normal(base, spec.shortcut_std, size=(n, spec.n_shortcut))
    return x, y


def make_shifted_domains(n_source=3000, n_target=3000, seed=0, spec: ShiftSpec = ShiftSpec()):
    """Return ``(source_x, source_y, target_x, target_y)``."""
    rng = np.random.default_rng(seed)
    xs, ys = _domain(rng, n_source, spec, shifted=False)
    xt, yt = _domain(rng, n_target, spec, shifted=True)
    return xs, ys, xt, yt


def synthetic_model_config(epochs=100, seed=0):
    """Training settings under which the shifted-domain experiment is run.

    The reference optimiser settings (lr 1e-4, batch 512) barely move a sigmoid
    net on a few thousand rows, so the synthetic runs use a larger step.
    """
    from dinids.dann import DannTrainConfig
    from dinids.nn import SgdConfig
    from dinids.pipeline import ModelConfig

    sgd = SgdConfig(learning_rate=0.5, batch_size=32, dropout_ratio=0.2, seed=seed)
    return ModelConfig(dann=DannTrainConfig(epochs=epochs, sgd=sgd))


def make_blobs(n=2000, seed=0, dim=39, informative=8, attack_fraction=0.3, gap=0.4, std=0.08):
    """Two separable Gaussian blobs in ``informative`` columns, padded with uniform noise."""
    rng = np.random.default_rng(seed)
    y = (rng.random(n) < attack_fraction).astype(np.int64)
    x = rng.uniform(0, 1, size=(n, dim))
    x[:, :informative] = rng.normal(0.3 + gap * y[:, None], std, size=(n, informative))
    return x, y


def write_nfv2_csv(path, x, y, seed=0, attack_names=("DoS", "Exploits"), schema=None):
    """Write feature rows as an NFv2-style CSV with random endpoints.

    Feature columns are filled from ``x`` in schema order; attack rows get a
    class name drawn from ``attack_names``.
    """
    import pandas as pd

    from dinids.dataset import BENIGN_LABEL, default_schema

    schema = schema or default_schema()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    n = len(x)
    feats = schema.feature_names
    if x.shape[1] != len(feats):
        raise ValueError(f"expected {len(feats)} feature columns, got {x.shape[1]}")
    cols = {}
    for c in schema.columns:
        if c.role == "identifier":
            if c.type == "categorical":
                cols[c.name] = [f"10.0.{a}.{b}" for a, b in rng.integers(0, 256, size=(n, 2))]
            else:
                cols[c.name] = rng.integers(1, 65536, size=n)
        elif c.role == "feature":
            cols[c.name] = x[:, feats.index(c.name)]
        elif c.type != "label":
            cols[c.name] = y.astype(np.int64)
    names = np.where(y == 0, BENIGN_LABEL, np.asarray(attack_names, dtype=object)[rng.integers(0, len(attack_names), n)])
    cols[schema.class_column] = names
    frame = pd.DataFrame(cols)[schema.names]
    frame.to_csv(path, index=False, float_format="%.17g")
    return path
