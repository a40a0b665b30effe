"""Feed-forward vs DI-NIDS on the synthetic shifted domains, one row per seed.

    python3 scripts/synthetic_shift.py --seeds 0 1 2 3 --rows 3000 --epochs 100

Prints source/target F1 for both pipelines, the gap, and the domain separation
ratio of a 2-D PCA embedding before and after the G_f projection.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from dinids.dann import extract_features
from dinids.dataset import apply_scaler, split_indices
from dinids.evaluation import confusion, metrics, pca_embed, separation_ratio
from dinids.pipeline import fit_pipeline
from dinids.synthetic import make_shifted_domains, synthetic_model_config


def f1(y, p):
    return metrics(confusion(y, p), warn=False).f1


def run_seed(seed, rows, epochs, test_fraction=0.3):
    xs, ys, xt, yt = make_shifted_domains(rows, rows, seed)
    s_tr, s_te = split_indices(rows, test_fraction, seed)
    t_tr, t_te = split_indices(rows, test_fraction, seed)
    cfg = synthetic_model_config(epochs, seed)
    row = {"seed": seed}
    for kind in ("feed-forward", "di-nids"):
        fitted = fit_pipeline(kind, xs[s_tr], ys[s_tr], xt[t_tr], cfg, seed)
        row[kind] = (f1(ys[s_te], fitted.predict(xs[s_te])), f1(yt[t_te], fitted.predict(xt[t_te])))
        if kind == "di-nids":
            raw = np.vstack([apply_scaler(fitted.scaler, xs), apply_scaler(fitted.scaler, xt)])
            tags = np.repeat(["source", "target"], [len(xs), len(xt)])
            ratios = []
            for view in (raw, extract_features(fitted.dann, raw)):
                emb = pca_embed(view, 2, sample_n=min(2000, len(view)), seed=seed, domains=tags)
                ratios.append(separation_ratio(emb.coords, emb.domains))
            row["separation"] = tuple(ratios)
    return row


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--rows", type=int, default=3000)
    p.add_argument("--epochs", type=int, default=100)
    args = p.parse_args(argv)
    print(f"{'seed':>4}  {'FF src':>6}  {'FF tgt':>6}  {'FF drop':>7}  {'DI src':>6}  {'DI tgt':>6}  "
          f"{'DI gap':>6}  {'sep raw':>7}  {'sep G_f':>7}  {'secs':>5}")
    for seed in args.seeds:
        start = time.perf_counter()
        r = run_seed(seed, args.rows, args.epochs)
        (fs, ft), (ds, dt) = r["feed-forward"], r["di-nids"]
        print(f"{seed:>4}  {fs:6.3f}  {ft:6.3f}  {fs - ft:7.3f}  {ds:6.3f}  {dt:6.3f}  {ds - dt:6.3f}  "
              f"{r['separation'][0]:7.3f}  {r['separation'][1]:7.3f}  {time.perf_counter() - start:5.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
