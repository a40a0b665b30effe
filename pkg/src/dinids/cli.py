"""``dinids`` command line: ingest, train, eval, report, embed.

Exit codes: 0 success, 1 other training failure, 2 input error, 3 empty or invalid ledger,
4 training divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dinids import __version__
from dinids.bundle import BundleError, load_bundle, save_bundle
from dinids.config import SYNTHETIC_PREFIX, ConfigError, PipelineConfig, load_config, parse_config
from dinids.dann import extract_features
from dinids.dataset import (
    BENIGN_LABEL,
    DatasetMeta,
    Schema,
    apply_scaler,
    load_netflow_csv,
    read_matrix,
    sample_netflow_csv,
    select_features,
    split_indices,
    stratified_indices,
    write_matrix,
)
from dinids.errors import DataError, DivergenceError, SchemaError
from dinids.evaluation import (
    MetricWarning,
    ProtocolResult,
    build_comparison_report,
    canonical_dataset,
    confusion,
    direction,
    metrics,
    pca_embed,
    separation_ratio,
)
from dinids.pipeline import StageError, fit_pipeline
from dinids.synthetic import make_blobs, make_shifted_domains

log = logging.getLogger("dinids")

EXIT_OK, EXIT_FAILED, EXIT_INPUT, EXIT_LEDGER, EXIT_DIVERGED = 0, 1, 2, 3, 4


class LedgerError(ValueError):
    """The results ledger is empty or contains rows that cannot be read."""


class SchemaDriftError(SchemaError):
    """Dataset columns differ from those the bundle was trained on."""


@dataclass(eq=False)
class LoadedData:
    name: str  # canonical dataset name used in reports
    x: np.ndarray
    y: np.ndarray
    columns: list
    meta: DatasetMeta


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- data loading


def _synthetic(name: str, cfg: PipelineConfig, columns):
    kind = name[len(SYNTHETIC_PREFIX):]
    n, seed = cfg.data.synthetic_rows, cfg.data_seed
    if kind in ("shift-source", "shift-target"):
        xs, ys, xt, yt = make_shifted_domains(n, n, seed)
        x, y = (xs, ys) if kind == "shift-source" else (xt, yt)
    elif kind == "blobs":
        x, y = make_blobs(n, seed, dim=len(columns))
    else:
        raise ConfigError(f"unknown synthetic dataset {name!r}")
    labels = [BENIGN_LABEL if v == 0 else "Attack" for v in y]
    return kind, x, y, DatasetMeta.from_labels(kind, labels)


def load_dataset(name: str, cfg: PipelineConfig, schema: Schema | None = None) -> LoadedData:
    """Synthetic name, ingest cache directory, or NetFlow CSV; subsampled per ``cfg.data``."""
    schema = schema or Schema.load(cfg.resolve_path(cfg.data.schema) or None)
    columns = list(schema.feature_names)
    n_sub, seed = cfg.data.subsample, cfg.data_seed
    if name.startswith(SYNTHETIC_PREFIX):
        label, x, y, meta = _synthetic(name, cfg, columns)
    else:
        path = Path(cfg.resolve_path(name))
        if path.is_dir():
            x, columns = read_matrix(path / "features.f64")
            y = read_matrix(path / "labels.f64")[0][:, 0].astype(np.int64)
            summary = json.loads((path / "summary.json").read_text())
            label = summary["dataset"]
            meta = DatasetMeta(summary["dataset"], summary["n_flows"], summary["benign_fraction"],
                               summary["attack_class_counts"])
        else:
            label = path.stem
            if n_sub:
                table = sample_netflow_csv(path, n_sub, seed, schema, name=label)
                n_sub = 0  # already sampled in the streaming pass
            else:
                table = load_netflow_csv(path, schema, name=label)
            x, y, meta = select_features(table).values, table.binary_label, table.meta
    if n_sub and n_sub < len(y):
        idx = stratified_indices(y, n_sub, seed)
        x, y = x[idx], y[idx]
    if len(y) == 0:
        raise DataError(f"{name}: no rows")
    return LoadedData(canonical_dataset(label), np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.int64),
                      list(columns), meta)


# ---------------------------------------------------------------- verbs


def _overrides(args) -> dict:
    out = {}
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    if getattr(args, "subsample", None) is not None:
        out["data.subsample"] = args.subsample
    if getattr(args, "lambda_fixed", None) is not None:
        out["dann.lambda_fixed"] = args.lambda_fixed
    return out


def cmd_ingest(args) -> int:
    cfg = parse_config(f"data.schema = {args.schema or ''}", overrides=_overrides(args))
    data = load_dataset(args.dataset, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix(out / "features.f64", data.x, data.columns)
    write_matrix(out / "labels.f64", data.y[:, None].astype(np.float64), ["binary_label"])
    summary = {
        "dataset": data.name,
        "source": args.dataset,
        "n_flows": int(len(data.y)),
        "n_features": int(data.x.shape[1]),
        "benign_fraction": float(np.mean(data.y == 0)),
        "attack_class_counts": data.meta.attack_class_counts,
        "n_attack_classes": data.meta.n_attack_classes,
        "seeds": {"data": cfg.data_seed},
        "subsample": cfg.data.subsample,
        "tool_version": __version__,
    }
    _write_json(out / "summary.json", summary)
    print(f"{data.name}: {summary['n_flows']} flows, {summary['n_features']} features, "
          f"benign fraction {summary['benign_fraction']:.4f}, {summary['n_attack_classes']} attack classes")
    for cls, count in data.meta.attack_class_counts.items():
        print(f"  {cls}: {count}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    if not cfg.data.source:
        raise ConfigError("data.source is required for training")
    frac = cfg.protocol.test_fraction
    src = load_dataset(cfg.data.source, cfg)
    s_tr, _ = split_indices(len(src.y), frac, cfg.seed)
    xt, tgt = None, None
    if cfg.pipeline in ("di-nids", "dann") and cfg.model.dann.adversarial:
        if not cfg.data.target:
            raise ConfigError(f"pipeline {cfg.pipeline} needs data.target (unlabelled target flows)")
        tgt = load_dataset(cfg.data.target, cfg)
        if tgt.x.shape[1] != src.x.shape[1]:
            raise SchemaDriftError(f"source has {src.x.shape[1]} columns, target {tgt.x.shape[1]}")
        t_tr, _ = split_indices(len(tgt.y), frac, cfg.seed)
        xt = tgt.x[t_tr]
    fitted = fit_pipeline(cfg.pipeline, src.x[s_tr], src.y[s_tr], xt, cfg.resolved_model(), cfg.seed)
    out = Path(args.out) if args.out else Path(cfg.output_dir) / f"{cfg.pipeline}-{cfg.config_hash()}"
    provenance = {
        "config_hash": cfg.config_hash(),
        "seeds": cfg.seeds(),
        "source": src.name,
        "target": tgt.name if tgt is not None else None,
        "datasets": [src.meta.to_dict()] + ([tgt.meta.to_dict()] if tgt is not None else []),
        "split": {"seed": cfg.seed, "test_fraction": frac},
    }
    save_bundle(out, fitted, provenance, cfg.to_text(), src.columns)
    best = fitted.history.best_epoch if fitted.history is not None else None
    print(f"trained {cfg.pipeline} on {src.name} ({len(s_tr)} rows); best epoch {best}; bundle {out}")
    return EXIT_OK


def _bundle_config(root: Path, args) -> PipelineConfig:
    text = (root / "config.conf").read_text() if (root / "config.conf").is_file() else ""
    return parse_config(text, base_dir=".", overrides=_overrides(args))


def cmd_eval(args) -> int:
    root = Path(args.bundle)
    fitted, manifest = load_bundle(root)  # invariant checks run before any scoring
    prov = manifest["provenance"]
    cfg = _bundle_config(root, args)
    data = load_dataset(args.dataset, cfg)
    expected = manifest["input_columns"]
    if data.x.shape[1] != manifest["input_dim"] or (expected is not None and data.columns != expected):
        raise SchemaDriftError(f"schema drift: bundle expects {manifest['input_dim']} columns "
                               f"{'' if expected is None else 'named as trained'}, dataset {args.dataset} has "
                               f"{data.x.shape[1]}")
    source = prov["source"]
    if args.direction == "self" and data.name != source:
        raise DataError(f"self evaluation expects the training dataset {source}, got {data.name}")
    if args.direction == "cross" and data.name == source:
        raise DataError(f"cross evaluation needs a dataset other than the training dataset {source}")
    split = prov["split"]
    _, test = split_indices(len(data.y), split["test_fraction"], split["seed"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MetricWarning)
        report = metrics(confusion(data.y[test], fitted.predict(data.x[test])))
    result = ProtocolResult(manifest["pipeline"], source, data.name, report.f1, (report.f1,), split["seed"])
    row = dict(result.to_dict(), direction=args.direction, pair=direction(source, data.name),
               config_hash=prov["config_hash"], seeds=prov["seeds"])
    out = Path(args.out) if args.out else root / f"eval-{args.direction}-{data.name}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, dict(row, metrics=report.to_dict(), n_test=int(len(test))))
    ledger = Path(args.ledger) if args.ledger else Path(cfg.output_dir) / "ledger.jsonl"
    ledger.parent.mkdir(parents=True, exist_ok=True)
    with ledger.open("a") as fh:
        fh.write(json.dumps(row, sort_keys=True) + "\n")
    print(f"{manifest['pipeline']} {args.direction} {direction(source, data.name)}: F1 {100 * report.f1:.2f} "
          f"(precision {100 * report.precision:.2f}, recall {100 * report.recall:.2f}); ledger {ledger}")
    return EXIT_OK


def read_ledger(path) -> list:
    path = Path(path)
    if not path.is_file():
        raise LedgerError(f"ledger not found: {path}")
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            rows.append((ProtocolResult.from_dict(d), d.get("config_hash"), d.get("seeds")))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise LedgerError(f"{path}:{lineno}: unreadable ledger row ({exc})") from exc
    if not rows:
        raise LedgerError(f"ledger is empty: {path}")
    return rows


def _mean_by_cell(results):
    """Repeated runs of one (model, source, target) cell are averaged."""
    cells: dict = {}
    for r in results:
        cells.setdefault((r.model, r.source, r.target), []).append(r)
    out = []
    for (model, s, t), rs in cells.items():
        f1s = tuple(f for r in rs for f in (r.fold_f1 or (r.f1,)))
        out.append(ProtocolResult(model, s, t, float(np.mean([r.f1 for r in rs])), f1s, rs[0].seed))
    return out


def cmd_report(args) -> int:
    rows = read_ledger(args.ledger)
    report = build_comparison_report(_mean_by_cell([r for r, _, _ in rows]))
    hashes = sorted({h for _, h, _ in rows if h})
    seeds = sorted({json.dumps(s, sort_keys=True) for _, _, s in rows if s is not None})
    out = Path(args.out) if args.out else Path(args.ledger).parent
    out.mkdir(parents=True, exist_ok=True)
    payload = json.loads(report.to_json())
    payload.update(config_hashes=hashes, seeds=[json.loads(s) for s in seeds])
    _write_json(out / "report.json", payload)
    text = report.to_text(reference=args.reference)
    text += f"\nconfig hashes: {', '.join(hashes) or '-'}\nseeds: {'; '.join(seeds) or '-'}\n"
    (out / "report.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_embed(args) -> int:
    root = Path(args.bundle)
    fitted, manifest = load_bundle(root)
    cfg = _bundle_config(root, args)
    a, b = load_dataset(args.source, cfg), load_dataset(args.target, cfg)
    for d in (a, b):
        if d.x.shape[1] != manifest["input_dim"]:
            raise SchemaDriftError(f"{d.name} has {d.x.shape[1]} columns, bundle expects {manifest['input_dim']}")
    if a.name == b.name:
        raise DataError("embedding needs two distinct datasets")
    tags = np.array([a.name] * len(a.y) + [b.name] * len(b.y), dtype=object)
    views = {"raw": np.vstack([apply_scaler(fitted.scaler, a.x), apply_scaler(fitted.scaler, b.x)])}
    if fitted.dann is not None:
        views["projected"] = extract_features(fitted.dann, views["raw"])
    sample = args.sample if args.sample and args.sample < len(tags) else None
    out = Path(args.out) if args.out else root / "embedding"
    out.mkdir(parents=True, exist_ok=True)
    summary = {"config_hash": manifest["provenance"]["config_hash"], "seeds": manifest["provenance"]["seeds"],
               "embed_seed": cfg.seed, "domains": [a.name, b.name], "separation_ratio": {}, "files": {}}
    for view, x in views.items():
        emb = pca_embed(x, 2, sample, cfg.seed, tags)
        ratio = separation_ratio(emb.coords, emb.domains)
        emb.to_csv(out / f"{view}.csv")
        summary["separation_ratio"][view] = ratio
        summary["files"][view] = f"{view}.csv"
        print(f"{view}: separation ratio {ratio:.4f} ({len(emb.coords)} points)")
    _write_json(out / "embedding.json", summary)
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dinids", description="Domain-invariant network intrusion detection.")
    p.add_argument("--version", action="version", version=f"dinids {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, lam=False):
        sp.add_argument("--seed", type=int, help="override the run seed")
        sp.add_argument("--subsample", type=int, help="stratified row count (0 keeps every row)")
        if lam:
            sp.add_argument("--lambda-fixed", type=float, help="constant adversarial weight instead of the schedule")

    sp = sub.add_parser("ingest", help="parse a dataset and cache its feature matrix")
    sp.add_argument("dataset", help="NetFlow CSV path or synthetic:<name>")
    sp.add_argument("--out", required=True, help="cache directory")
    sp.add_argument("--schema", help="schema file (defaults to the bundled NFv2 schema)")
    common(sp)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("train", help="train a pipeline and write a bundle")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", help="bundle directory (default <output.dir>/<pipeline>-<hash>)")
    common(sp, lam=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="score a bundle on the test split of a dataset")
    sp.add_argument("bundle")
    sp.add_argument("dataset")
    sp.add_argument("--direction", choices=("self", "cross"), default="self")
    sp.add_argument("--ledger", help="results ledger (default <output.dir>/ledger.jsonl)")
    sp.add_argument("--out", help="metrics report path")
    common(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("report", help="comparison tables from a results ledger")
    sp.add_argument("ledger")
    sp.add_argument("--reference", action="store_true", help="print reference values beside measured ones")
    sp.add_argument("--out", help="output directory (default: next to the ledger)")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("embed", help="2-D PCA embeddings of two datasets, raw and projected")
    sp.add_argument("bundle")
    sp.add_argument("source")
    sp.add_argument("target")
    sp.add_argument("--sample", type=int, default=2000, help="points per embedding (0 keeps all)")
    sp.add_argument("--out", help="output directory (default <bundle>/embedding)")
    common(sp)
    sp.set_defaults(func=cmd_embed)
    return p


def _diverged(exc: BaseException) -> bool:
    while exc is not None:
        if isinstance(exc, DivergenceError):
            return True
        exc = exc.__cause__
    return False


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except LedgerError as exc:
        print(f"dinids: {exc}", file=sys.stderr)
        return EXIT_LEDGER
    except (DivergenceError, StageError) as exc:
        print(f"dinids: {exc}", file=sys.stderr)
        return EXIT_DIVERGED if _diverged(exc) else EXIT_FAILED
    except (FileNotFoundError, ConfigError, BundleError, SchemaError, DataError, ValueError, OSError) as exc:
        print(f"dinids: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
