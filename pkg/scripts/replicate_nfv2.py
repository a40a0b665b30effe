"""Domain-specific and cross-domain comparison on the two NFv2 datasets.

Runs the four pipelines through both protocols on stratified subsamples and
writes ``ledger.jsonl`` (readable by ``dinids report``), ``report.json`` and
``report.txt`` with reference columns.

    python3 scripts/replicate_nfv2.py --data-dir ~/nfv2 --out runs/nfv2 --subsample 50000 --folds 1

The CSVs are not downloaded; fetch NF-UNSW-NB15-v2.csv and NF-CSE-CIC-IDS2018-v2.csv
manually and point ``--data-dir`` (or ``$DINIDS_DATA_DIR``) at them.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from dinids.config import load_config
from dinids.dataset import sample_netflow_csv
from dinids.evaluation import (
    CIC,
    UNSW,
    Domain,
    ProtocolResult,
    build_comparison_report,
    run_cross_domain,
    run_domain_specific,
)
from dinids.pipeline import PIPELINES

ROOT = Path(__file__).resolve().parents[1]
FILES = {UNSW: "NF-UNSW-NB15-v2.csv", CIC: "NF-CSE-CIC-IDS2018-v2.csv"}
log = logging.getLogger("replicate")


def replicate(paths: dict, out_dir, subsample=50_000, folds=1, seed=0, models=PIPELINES,
              config=ROOT / "configs" / "nfv2.conf"):
    """``paths`` maps the two canonical dataset names to CSV paths; returns the ProtocolReport."""
    cfg = load_config(config, {"seed": seed, "data.subsample": subsample, "protocol.folds": folds})
    model_cfg = cfg.resolved_model()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    domains = {}
    for name, path in paths.items():
        table = sample_netflow_csv(path, subsample, cfg.data_seed, name=name)
        domains[name] = Domain.from_table(table, name)
        log.info("%s: %d rows, benign fraction %.3f", name, len(table), table.meta.benign_fraction)

    ledger = out / "ledger.jsonl"
    results = []
    names = list(domains)
    extra = {"config_hash": cfg.config_hash(), "seeds": cfg.seeds()}
    with ledger.open("w") as fh:
        for model in models:
            runs = [(s, s) for s in names] + [(s, t) for s in names for t in names if s != t]
            for s, t in runs:
                start = time.perf_counter()
                if s == t:
                    rep = run_domain_specific(model, domains[s], cfg.protocol, model_cfg)
                else:
                    rep = run_cross_domain(model, domains[s], domains[t], cfg.protocol, model_cfg)
                res = ProtocolResult(model, s, t, rep.f1, rep.fold_f1, cfg.seed)
                results.append(res)
                row = dict(res.to_dict(), direction="cross" if s != t else "self", **extra)
                fh.write(json.dumps(row, sort_keys=True) + "\n")
                fh.flush()
                log.info("%s %s->%s F1 %.4f (%.0fs)", model, s, t, rep.f1, time.perf_counter() - start)
    report = build_comparison_report(results)
    payload = json.loads(report.to_json())
    payload.update(extra)
    (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    (out / "report.txt").write_text(report.to_text(reference=True))
    return report


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data-dir", default=os.environ.get("DINIDS_DATA_DIR"))
    p.add_argument("--out", default="runs/nfv2")
    p.add_argument("--subsample", type=int, default=50_000)
    p.add_argument("--folds", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--models", default=",".join(PIPELINES))
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    if not args.data_dir:
        p.error("pass --data-dir or set DINIDS_DATA_DIR")
    paths = {k: Path(args.data_dir) / v for k, v in FILES.items()}
    missing = [str(v) for v in paths.values() if not v.is_file()]
    if missing:
        print(f"missing dataset files: {', '.join(missing)}", file=sys.stderr)
        return 2
    report = replicate(paths, args.out, args.subsample, args.folds, args.seed, tuple(args.models.split(",")))
    print(report.to_text(reference=True), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
