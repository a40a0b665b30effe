"""Model bundle: one directory holding everything needed to score new flows.

Layout::

    manifest.json          provenance, pipeline kind, tensor index (no timestamps)
    config.conf            canonical run configuration
    scaler.min.f64         matrix files (text header + little-endian float64)
    scaler.max.f64
    g_f.0.weights.f64 ...  one weight and one bias tensor per dense layer
    osvm.txt               support vectors, coefficients and scalars as decimal text
    history.csv            per-epoch training record

Writing the same fitted pipeline twice yields byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from dinids import __version__
from dinids.dann import DannModel
from dinids.dataset import ScalerParams, read_matrix, write_matrix
from dinids.nn import DenseLayer, DenseNetwork
from dinids.osvm import KernelParams, OsvmModel
from dinids.pipeline import PIPELINES, FittedPipeline

FORMAT = "dinids-bundle 1"


class BundleError(ValueError):
    """A bundle is missing, malformed, or fails its invariant checks."""


def _write_network(root: Path, prefix: str, net: DenseNetwork) -> list:
    entries = []
    for i, layer in enumerate(net.layers):
        for part, arr in (("weights", layer.weights), ("bias", layer.bias[None, :])):
            name = f"{prefix}.{i}.{part}.f64"
            write_matrix(root / name, arr)
            entries.append(name)
    return entries


def _read_network(root: Path, prefix: str, n_layers: int, activation="sigmoid") -> DenseNetwork:
    layers = []
    for i in range(n_layers):
        w, _ = read_matrix(root / f"{prefix}.{i}.weights.f64")
        b, _ = read_matrix(root / f"{prefix}.{i}.bias.f64")
        layers.append(DenseLayer(w, b[0], activation))
    return DenseNetwork(layers)


def osvm_to_text(model: OsvmModel) -> str:
    lines = [
        "# one-class SVM, decimal text; rows below 'support_vectors' are alpha followed by the vector",
        f"kernel = {model.kernel.kind}",
        f"gamma = {model.kernel.gamma!r}",
        f"nu = {model.nu!r}",
        f"rho = {model.rho!r}",
        f"n_train = {model.n_train}",
        f"n_support = {len(model.alphas)}",
        f"dim = {model.dim}",
        f"iterations = {model.iterations}",
        f"gap = {model.gap!r}",
        "support_vectors",
    ]
    for a, sv in zip(model.alphas, model.support_vectors):
        lines.append(" ".join([repr(float(a))] + [repr(float(v)) for v in sv]))
    return "\n".join(lines) + "\n"


def osvm_from_text(text: str) -> OsvmModel:
    head, _, body = text.partition("support_vectors\n")
    meta = {}
    for line in head.splitlines():
        if line.startswith("#") or not line.strip():
            continue
        k, v = (s.strip() for s in line.split("=", 1))
        meta[k] = v
    try:
        rows = [list(map(float, line.split())) for line in body.splitlines() if line.strip()]
        n_sv, dim = int(meta["n_support"]), int(meta["dim"])
        arr = np.array(rows, dtype=np.float64).reshape(n_sv, dim + 1)
        return OsvmModel(
            support_vectors=arr[:, 1:],
            alphas=arr[:, 0].copy(),
            rho=float(meta["rho"]),
            kernel=KernelParams(float(meta["gamma"]), meta["kernel"]),
            nu=float(meta["nu"]),
            n_train=int(meta["n_train"]),
            iterations=int(meta["iterations"]),
            gap=float(meta["gap"]),
        )
    except (KeyError, ValueError) as exc:
        raise BundleError(f"malformed osvm.txt: {exc}") from exc


def save_bundle(path, fitted: FittedPipeline, provenance: dict, config_text: str = "", columns=None) -> Path:
    """Write ``fitted`` under ``path`` (created if needed) and return the directory."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    tensors = []
    write_matrix(root / "scaler.min.f64", fitted.scaler.minimum[None, :], columns)
    write_matrix(root / "scaler.max.f64", fitted.scaler.maximum[None, :], columns)
    tensors += ["scaler.min.f64", "scaler.max.f64"]
    networks = {}
    if fitted.dann is not None:
        for prefix in ("g_f", "g_c", "g_d"):
            net = getattr(fitted.dann, prefix)
            tensors += _write_network(root, prefix, net)
            networks[prefix] = net.sizes
    if fitted.osvm is not None:
        (root / "osvm.txt").write_text(osvm_to_text(fitted.osvm))
    if fitted.history is not None:
        (root / "history.csv").write_text(fitted.history.to_csv())
    if config_text:
        (root / "config.conf").write_text(config_text)
    manifest = {
        "format": FORMAT,
        "tool_version": __version__,
        "pipeline": fitted.kind,
        "input_columns": list(columns) if columns is not None else None,
        "input_dim": int(fitted.scaler.minimum.size),
        "networks": networks,
        "lambda_fixed": fitted.dann.lambda_fixed if fitted.dann is not None else None,
        "osvm": fitted.osvm is not None,
        "osvm_selection_f1": fitted.osvm_selection_f1,
        "best_epoch": fitted.history.best_epoch if fitted.history is not None else None,
        "tensors": tensors,
        "provenance": provenance,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root


def load_bundle(path) -> tuple[FittedPipeline, dict]:
    """Read a bundle and check its invariants before anything is scored."""
    root = Path(path)
    mf = root / "manifest.json"
    if not mf.is_file():
        raise FileNotFoundError(f"no bundle manifest at {mf}")
    try:
        manifest = json.loads(mf.read_text())
    except json.JSONDecodeError as exc:
        raise BundleError(f"{mf}: {exc}") from exc
    if manifest.get("format") != FORMAT or manifest.get("pipeline") not in PIPELINES:
        raise BundleError(f"{root}: not a {FORMAT} bundle")
    try:
        lo, _ = read_matrix(root / "scaler.min.f64")
        hi, _ = read_matrix(root / "scaler.max.f64")
        scaler = ScalerParams(lo[0], hi[0])
        fitted = FittedPipeline(manifest["pipeline"], scaler)
        if manifest["networks"]:
            nets = {p: _read_network(root, p, len(sizes) - 1) for p, sizes in manifest["networks"].items()}
            for p, sizes in manifest["networks"].items():
                if nets[p].sizes != sizes:
                    raise BundleError(f"{p} tensors do not match the recorded sizes {sizes}")
            fitted.dann = DannModel(nets["g_f"], nets["g_c"], nets["g_d"], manifest["lambda_fixed"])
        if manifest["osvm"]:
            fitted.osvm = osvm_from_text((root / "osvm.txt").read_text())
            fitted.osvm.validate()
            if fitted.dann is not None and fitted.osvm.dim != fitted.dann.g_f.out_dim:
                raise BundleError("osvm dimension does not match the feature extractor output")
    except BundleError:
        raise
    except (OSError, ValueError) as exc:
        raise BundleError(f"{root}: {exc}") from exc
    if fitted.kind != "osvm" and fitted.dann is None or fitted.kind in ("di-nids", "osvm") and fitted.osvm is None:
        raise BundleError(f"{root}: pipeline {fitted.kind} is missing components")
    return fitted, manifest
