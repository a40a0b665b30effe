"""Metrics, the two evaluation protocols, comparison reports and PCA embeddings."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from dinids.dataset import split_indices
from dinids.errors import DataError, ShapeError

log = logging.getLogger(__name__)


class MetricWarning(UserWarning):
    """A metric was undefined (zero denominator) and reported as 0."""


# ---------------------------------------------------------------- metrics


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    accuracy: float
    support: dict = field(default_factory=dict)  # {"benign": n, "attack": n}
    fold_f1: tuple = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fold_f1"] = list(self.fold_f1)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        d["fold_f1"] = tuple(d.get("fold_f1", ()))
        return cls(**d)


def confusion(y_true, y_pred) -> ConfusionMatrix:
    """Counts with attack (1) as the positive class."""
    t = np.asarray(y_true).ravel()
    p = np.asarray(y_pred).ravel()
    if t.shape != p.shape:
        raise ShapeError(f"label vectors differ in length: {t.size} vs {p.size}")
    for v, name in ((t, "y_true"), (p, "y_pred")):
        if not np.all((v == 0) | (v == 1)):
            raise ValueError(f"{name} must be binary")
    t, p = t.astype(bool), p.astype(bool)
    return ConfusionMatrix(
        tp=int(np.sum(t & p)), fp=int(np.sum(~t & p)), tn=int(np.sum(~t & ~p)), fn=int(np.sum(t & ~p))
    )


def _ratio(num, den, name, warn):
    if den == 0:
        if warn:
            warnings.warn(f"{name} undefined (zero denominator); reported as 0", MetricWarning, stacklevel=3)
        return 0.0
    return num / den


def metrics(cm: ConfusionMatrix, warn: bool = True) -> MetricsReport:
    precision = _ratio(cm.tp, cm.tp + cm.fp, "precision", warn)
    recall = _ratio(cm.tp, cm.tp + cm.fn, "recall", warn)
    f1 = _ratio(2 * precision * recall, precision + recall, "F1", warn)
    accuracy = _ratio(cm.tp + cm.tn, cm.total, "accuracy", warn)
    return MetricsReport(precision, recall, f1, accuracy, {"benign": cm.tn + cm.fp, "attack": cm.tp + cm.fn})


def degradation(ds_f1: float, cd_f1: float) -> float:
    """Domain-specific minus cross-domain F1, in whatever unit both share."""
    return ds_f1 - cd_f1


# ---------------------------------------------------------------- protocols


@dataclass(eq=False)
class Domain:
    """A named labelled dataset, raw (unscaled) features."""

    name: str
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y).astype(np.int64)
        if self.x.ndim != 2 or len(self.x) != len(self.y):
            raise ShapeError("domain x must be 2-D with one label per row")

    @classmethod
    def from_table(cls, table, name=None) -> "Domain":
        from dinids.dataset import select_features

        return cls(name or table.meta.name, select_features(table).values, table.binary_label)

    def __len__(self):
        return len(self.y)


@dataclass(frozen=True)
class ProtocolConfig:
    folds: int = 5
    test_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.folds < 1:
            raise ValueError("folds must be positive")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie strictly between 0 and 1")

    def fold_seeds(self):
        return [self.seed + k for k in range(self.folds)]


def _mean_report(reports) -> MetricsReport:
    support = {k: sum(r.support[k] for r in reports) for k in ("benign", "attack")}
    return MetricsReport(
        precision=float(np.mean([r.precision for r in reports])),
        recall=float(np.mean([r.recall for r in reports])),
        f1=float(np.mean([r.f1 for r in reports])),
        accuracy=float(np.mean([r.accuracy for r in reports])),
        support=support,
        fold_f1=tuple(float(r.f1) for r in reports),
    )


def _annotate(exc: Exception, fold: int):
    exc.fold = fold
    if exc.args and isinstance(exc.args[0], str):
        exc.args = (f"fold {fold}: {exc.args[0]}",) + exc.args[1:]
    return exc


def _score(y_true, y_pred, where):
    if not np.any(y_true == 1):
        log.warning("%s: test split holds no attack rows; F1 reported as 0", where)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MetricWarning)
        return metrics(confusion(y_true, y_pred))


def run_domain_specific(pipeline: str, dataset: Domain, cfg: ProtocolConfig, model_cfg=None) -> MetricsReport:
    """Train and test on disjoint splits of one dataset; mean over fold seeds.

    For the adversarial pipelines the unlabelled target is the test split itself.
    """
    from dinids.pipeline import ModelConfig, fit_pipeline

    model_cfg = model_cfg or ModelConfig()
    reports = []
    for k, seed in enumerate(cfg.fold_seeds()):
        tr, te = split_indices(len(dataset), cfg.test_fraction, seed)
        try:
            fitted = fit_pipeline(pipeline, dataset.x[tr], dataset.y[tr], dataset.x[te], model_cfg, seed)
        except Exception as exc:
            raise _annotate(exc, k)
        reports.append(_score(dataset.y[te], fitted.predict(dataset.x[te]), f"{dataset.name} fold {k}"))
    return _mean_report(reports)


def run_cross_domain(pipeline: str, source: Domain, target: Domain, cfg: ProtocolConfig, model_cfg=None) -> MetricsReport:
    """Train on the source train split (plus unlabelled target train rows), test on the target test split."""
    from dinids.pipeline import ModelConfig, fit_pipeline

    if source.name == target.name:
        raise DataError("cross-domain evaluation needs two distinct datasets")
    model_cfg = model_cfg or ModelConfig()
    reports = []
    for k, seed in enumerate(cfg.fold_seeds()):
        s_tr, _ = split_indices(len(source), cfg.test_fraction, seed)
        t_tr, t_te = split_indices(len(target), cfg.test_fraction, seed)
        try:
            fitted = fit_pipeline(pipeline, source.x[s_tr], source.y[s_tr], target.x[t_tr], model_cfg, seed)
        except Exception as exc:
            raise _annotate(exc, k)
        # target labels are read here and nowhere else
        reports.append(_score(target.y[t_te], fitted.predict(target.x[t_te]), f"{source.name}->{target.name} fold {k}"))
    return _mean_report(reports)


# ---------------------------------------------------------------- reports

CIC, UNSW = "NFv2-CIC-2018", "NFv2-UNSW-NB15"


def direction(source: str, target: str) -> str:
    return f"{source}->{target}"


# Reference full-scale values (percent). Non-binding: shown beside measured values.
REFERENCE_DS = {
    "random-forest": {CIC: 95.44, UNSW: 92.17},
    "extra-tree": {CIC: 84.62, UNSW: 91.73},
    "lstm": {CIC: 90.17, UNSW: 92.82},
    "feed-forward": {CIC: 97.72, UNSW: 92.24},
    "osvm": {CIC: 92.97, UNSW: 98.28},
    "dann": {CIC: 97.81, UNSW: 93.38},
    "di-nids": {CIC: 93.23, UNSW: 98.68},
}
# direction -> (cross-domain F1, degradation as printed)
REFERENCE_CD = {
    "random-forest": {direction(CIC, UNSW): (0.84, 94.60), direction(UNSW, CIC): (7.70, 84.47)},
    "extra-tree": {direction(CIC, UNSW): (0.57, 84.05), direction(UNSW, CIC): (17.47, 74.26)},
    "lstm": {direction(CIC, UNSW): (9.63, 80.54), direction(UNSW, CIC): (14.20, 78.62)},
    "feed-forward": {direction(CIC, UNSW): (3.09, 94.63), direction(UNSW, CIC): (30.79, 61.45)},
    "osvm": {direction(CIC, UNSW): (86.15, 6.79), direction(UNSW, CIC): (15.74, 82.54)},
    "dann": {direction(CIC, UNSW): (17.31, 80.50), direction(UNSW, CIC): (61.94, 31.44)},
    "di-nids": {direction(CIC, UNSW): (85.79, 7.44), direction(UNSW, CIC): (93.29, 5.39)},
}


def canonical_dataset(name: str) -> str:
    """Map file stems such as ``NF-UNSW-NB15-v2`` onto the reference keys."""
    up = name.upper()
    if "UNSW" in up:
        return UNSW
    if "CIC" in up and "2018" in up:
        return CIC
    return name


def reference_inconsistencies(tol: float = 0.005) -> list:
    """Reference rows whose printed degradation differs from the subtraction."""
    out = []
    for model, rows in REFERENCE_CD.items():
        for d, (cd, printed) in rows.items():
            src = d.split("->")[0]
            computed = float(format_pct(degradation(REFERENCE_DS[model][src], cd)))
            if abs(computed - printed) > tol:
                out.append({"model": model, "direction": d, "printed": printed, "computed": computed})
    return out


@dataclass(frozen=True)
class ProtocolResult:
    """One protocol run; ``source == target`` marks a domain-specific run. F1 as a fraction."""

    model: str
    source: str
    target: str
    f1: float
    fold_f1: tuple = ()
    seed: int = 0

    @property
    def cross(self) -> bool:
        return self.source != self.target

    def to_dict(self):
        d = asdict(self)
        d["fold_f1"] = list(self.fold_f1)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["fold_f1"] = tuple(d.get("fold_f1", ()))
        return cls(**{k: d[k] for k in ("model", "source", "target", "f1", "fold_f1", "seed")})


@dataclass
class ModelRow:
    ds_f1: dict = field(default_factory=dict)  # dataset -> percent
    cd_f1: dict = field(default_factory=dict)  # direction -> percent
    degradation: dict = field(default_factory=dict)  # direction -> percent or None when ds is absent
    avg_cd_f1: float | None = None
    avg_degradation: float | None = None


@dataclass
class ProtocolReport:
    models: dict  # name -> ModelRow
    datasets: list
    directions: list
    reference_flags: list = field(default_factory=list)

    def to_json(self) -> str:
        payload = {
            "models": {k: asdict(v) for k, v in self.models.items()},
            "datasets": self.datasets,
            "directions": self.directions,
            "reference_flags": self.reference_flags,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ProtocolReport":
        d = json.loads(text)
        return cls({k: ModelRow(**v) for k, v in d["models"].items()}, d["datasets"], d["directions"],
                   d["reference_flags"])

    def to_text(self, reference: bool = False) -> str:
        return format_report(self, reference)


def _avg(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def build_comparison_report(results) -> ProtocolReport:
    """Collect protocol results into per-model domain-specific / cross-domain rows.

    Missing cells stay absent (``None`` or no key); they are never filled with 0.
    Later results for the same cell replace earlier ones.
    """
    results = list(results)
    if not results:
        raise DataError("no results to report")
    models: dict = {}
    datasets, directions = [], []
    for r in results:
        row = models.setdefault(r.model, ModelRow())
        pct = 100.0 * r.f1
        if r.cross:
            d = direction(r.source, r.target)
            row.cd_f1[d] = pct
            if d not in directions:
                directions.append(d)
        else:
            row.ds_f1[r.source] = pct
            if r.source not in datasets:
                datasets.append(r.source)
    for row in models.values():
        for d, cd in row.cd_f1.items():
            src = d.split("->")[0]
            row.degradation[d] = degradation(row.ds_f1[src], cd) if src in row.ds_f1 else None
        row.avg_cd_f1 = _avg(row.cd_f1.values())
        row.avg_degradation = _avg(row.degradation.values())
    return ProtocolReport(models, datasets, directions, reference_inconsistencies())


def format_pct(v) -> str:
    """Two decimals, half-up, after dropping float noise beyond 1e-10 (6.414999999999999 -> 6.42)."""
    if v is None:
        return "-"
    return str(Decimal(repr(round(float(v), 10))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def _cell(v):
    return format_pct(v)


def _table(header, rows):
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    line = lambda r: "  ".join(str(c).ljust(w) if i == 0 else str(c).rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
    rule = "-" * len(line(header))
    return "\n".join([line(header), rule] + [line(r) for r in rows])


def _ref_ds(model, dataset):
    return REFERENCE_DS.get(model, {}).get(canonical_dataset(dataset))


def _ref_cd(model, d):
    src, tgt = d.split("->")
    return REFERENCE_CD.get(model, {}).get(direction(canonical_dataset(src), canonical_dataset(tgt)))


def format_report(report: ProtocolReport, reference: bool = False) -> str:
    """Aligned text tables: domain-specific F1, one table per direction, and averages."""
    blocks = []
    names = list(report.models)
    if report.datasets:
        header = ["model"]
        for ds in report.datasets:
            header += [ds] + (["ref"] if reference else [])
        rows = []
        for m in names:
            r = [m]
            for ds in report.datasets:
                r.append(_cell(report.models[m].ds_f1.get(ds)))
                if reference:
                    r.append(_cell(_ref_ds(m, ds)))
            rows.append(r)
        blocks.append("Domain-specific F1 (%)\n" + _table(header, rows))
    for d in report.directions:
        header = ["model", "F1", "degradation"] + (["ref F1", "ref degradation"] if reference else [])
        rows = []
        for m in names:
            row = report.models[m]
            if d not in row.cd_f1:
                continue
            r = [m, _cell(row.cd_f1[d]), _cell(row.degradation.get(d))]
            if reference:
                ref = _ref_cd(m, d)
                r += [_cell(ref[0]), _cell(ref[1])] if ref else ["-", "-"]
            rows.append(r)
        blocks.append(f"Cross-domain F1 (%), {d}\n" + _table(header, rows))
    if report.directions:
        header = ["model", "avg cross-domain F1", "avg degradation"]
        rows = [[m, _cell(report.models[m].avg_cd_f1), _cell(report.models[m].avg_degradation)]
                for m in names if report.models[m].cd_f1]
        blocks.append("Average over directions\n" + _table(header, rows))
    if reference and report.reference_flags:
        flags = [f"  {f['model']} {f['direction']}: printed {format_pct(f['printed'])}, "
                 f"subtraction gives {format_pct(f['computed'])}"
                 for f in report.reference_flags]
        blocks.append("Reference inconsistencies\n" + "\n".join(flags))
    return "\n\n".join(blocks) + "\n"


# ---------------------------------------------------------------- embedding


@dataclass(eq=False)
class EmbeddingExport:
    coords: np.ndarray  # (n, dims)
    domains: np.ndarray  # (n,) tags
    rows: np.ndarray  # indices of the sampled input rows
    components: np.ndarray  # (dims, d)
    variances: np.ndarray  # (dims,)

    def __post_init__(self):
        if len(self.coords) != len(self.domains) or not np.all(np.isfinite(self.coords)):
            raise ValueError("embedding needs one finite coordinate row per domain tag")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "domain"])
            for (a, b), tag in zip(self.coords[:, :2], self.domains):
                w.writerow([repr(float(a)), repr(float(b)), tag])
        return path


def _power_iteration(c, rng, iters=5000, tol=1e-13):
    v = rng.normal(size=len(c))
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = c @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return v, 0.0
        w /= norm
        if min(np.linalg.norm(w - v), np.linalg.norm(w + v)) < tol:
            v = w
            break
        v = w
    lam = float(v @ c @ v)
    return v, lam


def pca_embed(x, dims: int = 2, sample_n: int | None = None, seed: int = 0, domains=None) -> EmbeddingExport:
    """Project centred rows onto the leading principal directions.

    Directions come from power iteration with deflation on the covariance
    matrix; each is signed so its largest-magnitude entry is positive.
    """
    values = np.asarray(getattr(x, "values", x), dtype=np.float64)
    if values.ndim != 2:
        raise ShapeError("pca_embed expects a 2-D matrix")
    n, d = values.shape
    if dims > d:
        raise ValueError(f"dims={dims} exceeds column count {d}")
    tags = np.asarray(domains if domains is not None else np.zeros(n, dtype=np.int64))
    if len(tags) != n:
        raise ShapeError("one domain tag per row is required")
    rng = np.random.default_rng(seed)
    if sample_n is not None and sample_n < n:
        rows = np.sort(rng.choice(n, size=sample_n, replace=False))
    elif sample_n is not None and sample_n > n:
        raise ValueError(f"sample_n={sample_n} exceeds row count {n}")
    else:
        rows = np.arange(n)
    sub = values[rows]
    centred = sub - sub.mean(axis=0)
    cov = centred.T @ centred / max(len(sub) - 1, 1)
    scale = max(float(np.trace(cov)), 1e-300)
    comps, variances = np.zeros((dims, d)), np.zeros(dims)
    residual = cov.copy()
    for k in range(dims):
        v, lam = _power_iteration(residual, rng)
        if lam <= 1e-12 * scale:
            warnings.warn(f"data has rank < {k + 1}; component {k + 1} set to zero", MetricWarning, stacklevel=2)
            break
        v = v if v[np.argmax(np.abs(v))] > 0 else -v
        comps[k], variances[k] = v, lam
        residual = residual - lam * np.outer(v, v)
    return EmbeddingExport(centred @ comps.T, tags[rows], rows, comps, variances)


def separation_ratio(coords, domains) -> float:
    """Between-domain centroid distance over the pooled within-domain RMS radius (two domains)."""
    coords = np.asarray(coords, dtype=np.float64)
    domains = np.asarray(domains)
    tags = np.unique(domains)
    if len(tags) != 2:
        raise ValueError("separation ratio needs exactly two domains")
    a, b = (coords[domains == t] for t in tags)
    between = np.linalg.norm(a.mean(axis=0) - b.mean(axis=0))
    within = np.sqrt(0.5 * (np.mean(np.sum((a - a.mean(0)) ** 2, 1)) + np.mean(np.sum((b - b.mean(0)) ** 2, 1))))
    return float(between / within) if within > 0 else float("inf")
