"""One-class SVM with an RBF kernel, trained by SMO on the nu-scaled dual.

The dual solved here is

    min_a  1/2 a^T K a   s.t.  0 <= a_i <= 1/(nu n),  sum_i a_i = 1

and the decision value is ``sum_i a_i K(x, x_i) - rho``; positive scores are
inliers (benign), negative scores are anomalies.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.spatial.distance import cdist

from dinids.errors import ConvergenceError, DataError, NumericInputError, ShapeError

log = logging.getLogger(__name__)

BENIGN, ANOMALY = 0, 1
GAMMA_GRID = (0.01, 0.1, 1.0)
NU_GRID = (0.01, 0.05, 0.1)


@dataclass(frozen=True)
class KernelParams:
    gamma: float
    kind: str = "rbf"

    def __post_init__(self):
        if self.kind != "rbf":
            raise ValueError(f"unsupported kernel {self.kind!r}")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")


@dataclass(frozen=True)
class OsvmConfig:
    nu: float = 0.05
    gamma: float | None = None  # None: 1 / (d * mean per-column variance)
    tolerance: float = 1e-4
    max_passes: int = 1000  # iteration budget is max_passes * n
    seed: int = 0
    cache_mb: float = 200.0

    def __post_init__(self):
        if not 0 < self.nu < 1:
            raise ValueError("nu must lie strictly between 0 and 1")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_passes < 1:
            raise ValueError("max_passes must be positive")

    def kernel_for(self, x) -> KernelParams:
        if self.gamma is not None:
            return KernelParams(self.gamma)
        return KernelParams(default_gamma(x))


@dataclass(eq=False)
class OsvmModel:
    support_vectors: np.ndarray
    alphas: np.ndarray
    rho: float
    kernel: KernelParams
    nu: float
    n_train: int
    iterations: int = 0
    gap: float = 0.0
    train_scores: np.ndarray | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]

    def validate(self, tol=1e-6):
        """Raise ValueError if the stored dual coefficients are infeasible."""
        a = self.alphas
        if self.support_vectors.ndim != 2 or len(a) != len(self.support_vectors):
            raise ShapeError("alphas and support vectors disagree in count")
        if not (np.all(np.isfinite(a)) and np.isfinite(self.rho) and np.all(np.isfinite(self.support_vectors))):
            raise ValueError("model contains non-finite values")
        if abs(a.sum() - 1.0) > tol:
            raise ValueError(f"dual coefficients sum to {a.sum():.9g}, expected 1")
        cap = 1.0 / (self.nu * self.n_train)
        if np.any(a <= 0) or np.any(a > cap + 1e-9):
            raise ValueError("dual coefficients outside (0, 1/(nu n)]")
        return self


def default_gamma(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    var = float(np.mean(np.var(x, axis=0)))
    if var <= 0:
        return 1.0
    return 1.0 / (x.shape[1] * var)


def rbf_kernel(x, y, gamma: float) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"kernel arguments differ in shape: {x.shape} vs {y.shape}")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    return float(np.exp(-gamma * np.sum((x - y) ** 2)))


def rbf_matrix(a, b, gamma: float) -> np.ndarray:
    # cdist sums squared differences directly, so identical rows give exactly 1
    return np.exp(-gamma * cdist(a, b, "sqeuclidean"))


class _KernelColumns:
    def __init__(self, x, gamma, cache_mb):
        self.x = x
        self.gamma = gamma
        self.capacity = max(4, int(cache_mb * 1e6 / (8 * len(x))))
        self._cache = OrderedDict()

    def __call__(self, i):
        col = self._cache.get(i)
        if col is not None:
            self._cache.move_to_end(i)
            return col
        col = rbf_matrix(self.x, self.x[i : i + 1], self.gamma)[:, 0]
        self._cache[i] = col
        if len(self._cache) > self.capacity:
            self._cache.popitem(last=False)
        return col


def smo_solve(x, nu, gamma, tolerance=1e-4, max_iter=None, cache_mb=200.0):
    """Return ``(alpha, grad, iterations, gap)`` for the one-class dual.

    Working pairs come from maximal-violation selection for the first index
    and second-order gain for the second (Fan, Chen and Lin style).
    """
    n = len(x)
    cap = 1.0 / (nu * n)
    kcol = _KernelColumns(x, gamma, cache_mb)
    diag = np.ones(n)

    alpha = np.zeros(n)
    n_full = min(int(nu * n), n)
    alpha[:n_full] = cap
    if n_full < n:
        alpha[n_full] = max(0.0, 1.0 - n_full * cap)
    grad = np.zeros(n)
    for i in np.flatnonzero(alpha):
        grad += alpha[i] * kcol(i)

    max_iter = max_iter if max_iter is not None else 1000 * n
    it = 0
    gap = np.inf
    while True:
        up = alpha < cap
        low = alpha > 0
        if not up.any() or not low.any():
            gap = 0.0
            break
        g_up = np.where(up, grad, np.inf)
        i = int(np.argmin(g_up))
        g_low = np.where(low, grad, -np.inf)
        gap = float(g_low.max() - g_up[i])
        if gap < tolerance:
            break
        if it >= max_iter:
            raise ConvergenceError(
                f"SMO did not reach tolerance {tolerance} within {max_iter} iterations (gap {gap:.3g})",
                gap=gap,
                iterations=it,
            )
        ki = kcol(i)
        # second-order choice of j among violating lower-side indices
        diff = grad - grad[i]
        eta = np.maximum(diag[i] + diag - 2.0 * ki, 1e-12)
        cand = low & (diff > 0)
        gain = np.where(cand, diff * diff / eta, -np.inf)
        j = int(np.argmax(gain))
        kj = kcol(j)

        delta = diff[j] / eta[j]
        room_i = cap - alpha[i]
        room_j = alpha[j]
        if delta >= room_i or delta >= room_j:
            if room_i <= room_j:
                delta = room_i
                alpha[i] = cap
                alpha[j] = 0.0 if room_i == room_j else alpha[j] - delta
            else:
                delta = room_j
                alpha[i] += delta
                alpha[j] = 0.0
        else:
            alpha[i] += delta
            alpha[j] -= delta
        grad += delta * (ki - kj)
        it += 1
    return alpha, grad, it, gap


def _as_matrix(x, name="x"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ShapeError(f"{name} must be a 2-D matrix")
    if not np.all(np.isfinite(x)):
        raise NumericInputError(f"{name} contains NaN or infinite values")
    return x


def train_osvm(x, cfg: OsvmConfig = OsvmConfig()) -> OsvmModel:
    x = _as_matrix(x)
    n = len(x)
    if n < 2:
        raise DataError("one-class SVM needs at least two training rows")
    kernel = cfg.kernel_for(x)
    alpha, _, iterations, gap = smo_solve(
        x, cfg.nu, kernel.gamma, cfg.tolerance, cfg.max_passes * n, cfg.cache_mb
    )
    cap = 1.0 / (cfg.nu * n)
    keep = alpha > 0
    model = OsvmModel(x[keep].copy(), alpha[keep].copy(), 0.0, kernel, cfg.nu, n, iterations, gap)

    # rho from the same scoring path used at prediction time
    raw = decision_function(model, x)
    free = keep & (alpha < cap)
    if free.any():
        vals = raw[free]
        rho = float(vals[0]) if np.all(vals == vals[0]) else float(np.mean(vals))
    else:
        lo = raw[alpha >= cap].max() if np.any(alpha >= cap) else raw.min()
        hi = raw[~keep].min() if np.any(~keep) else lo
        rho = float(lo) if lo == hi else float(0.5 * (lo + hi))
    model.rho = rho
    model.train_scores = raw - rho
    log.debug("osvm: n=%d sv=%d iters=%d gap=%.2e rho=%.6g", n, keep.sum(), iterations, gap, rho)
    return model


def decision_function(model: OsvmModel, x) -> np.ndarray | float:
    """``sum_i alpha_i K(x, sv_i) - rho`` for a row (1-D) or a batch of rows (2-D)."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    arr = _as_matrix(arr[None, :] if single else arr)
    if arr.shape[1] != model.dim:
        raise ShapeError(f"expected {model.dim} features, got {arr.shape[1]}")
    out = np.empty(len(arr))
    step = 2048
    for start in range(0, len(arr), step):
        k = rbf_matrix(arr[start : start + step], model.support_vectors, model.kernel.gamma)
        out[start : start + step] = k @ model.alphas - model.rho
    return float(out[0]) if single else out


def predict_from_scores(scores):
    """Anomaly (1) iff score < 0; a score of exactly zero is benign."""
    return (np.asarray(scores) < 0).astype(np.int64)


def predict(model: OsvmModel, x):
    scores = decision_function(model, x)
    labels = predict_from_scores(scores)
    return int(labels) if np.ndim(labels) == 0 else labels


def dual_objective(model: OsvmModel) -> float:
    k = rbf_matrix(model.support_vectors, model.support_vectors, model.kernel.gamma)
    return float(0.5 * model.alphas @ k @ model.alphas)


def select_osvm_params(x_train, x_val, y_val, cfg: OsvmConfig = OsvmConfig(), gammas=GAMMA_GRID, nus=NU_GRID):
    """Grid-search (gamma, nu) on validation F1 (attack positive).

    Returns ``(config, f1, model)`` for the best grid point. Ties keep the
    earlier grid point, so the search is deterministic.
    """
    from dinids.evaluation import confusion, metrics

    best = (None, -1.0, None)
    for gamma, nu in product(gammas, nus):
        trial = OsvmConfig(nu=nu, gamma=gamma, tolerance=cfg.tolerance, max_passes=cfg.max_passes,
                           seed=cfg.seed, cache_mb=cfg.cache_mb)
        model = train_osvm(x_train, trial)
        f1 = metrics(confusion(y_val, predict(model, x_val)), warn=False).f1
        log.debug("grid gamma=%g nu=%g f1=%.4f", gamma, nu, f1)
        if f1 > best[1]:
            best = (trial, f1, model)
    return best
