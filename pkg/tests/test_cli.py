import json
import shutil
from filecmp import dircmp
from pathlib import Path

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from dinids.bundle import BundleError, load_bundle, save_bundle
from dinids.cli import main
from dinids.dann import DannTrainConfig
from dinids.dataset import write_matrix
from dinids.evaluation import confusion, metrics
from dinids.nn import SgdConfig
from dinids.pipeline import ModelConfig, fit_pipeline
from dinids.synthetic import make_blobs, make_shifted_domains, write_nfv2_csv

FIXTURE = Path(__file__).parent / "data" / "nfv2_three_rows.csv"

SHIFT = """
pipeline = {pipeline}
seed = 0
data.source = synthetic:shift-source
data.target = synthetic:shift-target
data.synthetic_rows = 400
dann.epochs = 8
sgd.learning_rate = 0.5
sgd.batch_size = 32
model.osvm_max_train = 150
"""


def _conf(tmp_path, pipeline="di-nids", extra=""):
    p = tmp_path / f"{pipeline}.conf"
    p.write_text(SHIFT.format(pipeline=pipeline) + extra)
    return str(p)


def _same_tree(a, b):
    cmp = dircmp(a, b)
    # dircmp compares shallowly by stat; re-check contents byte by byte
    names = sorted(p.name for p in Path(a).iterdir())
    return (not cmp.left_only and not cmp.right_only
            and all((Path(a) / n).read_bytes() == (Path(b) / n).read_bytes() for n in names if (Path(a) / n).is_file()))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    assert main(["train", "--config", _conf(tmp), "--out", str(tmp / "bundle")]) == 0
    return tmp, tmp / "bundle"


# ---------------------------------------------------------------- ingest


def test_ingest_missing_file_names_path(tmp_path, capsys):
    assert main(["ingest", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "c")]) == 2
    assert "nope.csv" in capsys.readouterr().err


def test_ingest_fixture_writes_cache(tmp_path, capsys):
    out = tmp_path / "cache"
    assert main(["ingest", str(FIXTURE), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["n_flows"] == 3 and summary["n_features"] == 39 and summary["n_attack_classes"] == 2
    assert "2 attack classes" in capsys.readouterr().out
    assert {p.name for p in out.iterdir()} == {"features.f64", "labels.f64", "summary.json"}


@pytest.mark.parametrize("stem, names", [
    ("NF-UNSW-NB15-v2", ("Exploits", "Fuzzers", "Generic", "Reconnaissance", "DoS", "Analysis", "Backdoor",
                         "Shellcode", "Worms")),
    ("NF-CSE-CIC-IDS2018-v2", ("Bot", "Brute Force -Web", "Brute Force -XSS", "DDOS attack-HOIC",
                               "DDOS attack-LOIC-UDP", "DDoS attacks-LOIC-HTTP", "DoS attacks-GoldenEye",
                               "DoS attacks-Hulk", "DoS attacks-SlowHTTPTest", "DoS attacks-Slowloris",
                               "FTP-BruteForce", "Infilteration", "SQL Injection", "SSH-Bruteforce")),
])
def test_ingest_counts_attack_classes(tmp_path, monkeypatch, capsys, stem, names):
    x, _ = make_blobs(1200, seed=1)
    y = np.r_[np.ones(len(names) * 40, dtype=int), np.zeros(1200 - len(names) * 40, dtype=int)]
    data_dir = tmp_path / "data"
    data_dir.mkdir()
    write_nfv2_csv(data_dir / f"{stem}.csv", x, y, attack_names=names)
    monkeypatch.setenv("DINIDS_DATA_DIR", str(data_dir))
    monkeypatch.chdir(tmp_path)
    assert main(["ingest", f"{stem}.csv", "--out", "cache"]) == 0
    summary = json.loads((tmp_path / "cache" / "summary.json").read_text())
    assert summary["n_attack_classes"] == len(names)
    assert f"{len(names)} attack classes" in capsys.readouterr().out


def test_ingest_cache_feeds_training(tmp_path):
    xs, ys, _, _ = make_shifted_domains(300, 10, seed=0)
    write_nfv2_csv(tmp_path / "src.csv", xs, ys)
    assert main(["ingest", str(tmp_path / "src.csv"), "--out", str(tmp_path / "cache"), "--subsample", "200"]) == 0
    conf = tmp_path / "ff.conf"
    conf.write_text("pipeline = feed-forward\ndata.source = cache\ndann.epochs = 2\nsgd.batch_size = 32\n")
    assert main(["train", "--config", str(conf), "--out", str(tmp_path / "b")]) == 0
    manifest = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert manifest["provenance"]["datasets"][0]["n_flows"] == 200


# ---------------------------------------------------------------- train / bundle


def test_same_config_twice_gives_identical_bundles(tmp_path, trained):
    _, first = trained
    assert main(["train", "--config", _conf(tmp_path), "--out", str(tmp_path / "again")]) == 0
    assert _same_tree(first, tmp_path / "again")


def test_bundle_contents_and_provenance(trained):
    _, bundle = trained
    manifest = json.loads((bundle / "manifest.json").read_text())
    prov = manifest["provenance"]
    assert len(prov["config_hash"]) == 16 and prov["seeds"]["run"] == 0
    assert prov["source"] == "shift-source" and prov["target"] == "shift-target"
    assert manifest["tool_version"] and "timestamp" not in json.dumps(manifest)
    assert (bundle / "history.csv").read_text().startswith("epoch,label_loss,domain_loss,val_f1,lambda")
    assert "support_vectors" in (bundle / "osvm.txt").read_text()


@pytest.mark.parametrize("kind", ["di-nids", "dann", "feed-forward", "osvm"])
def test_bundle_round_trip_is_bit_exact(tmp_path, kind):
    xs, ys, xt, _ = make_shifted_domains(300, 300, seed=6)
    cfg = ModelConfig(dann=DannTrainConfig(epochs=3, sgd=SgdConfig(0.5, 32)), osvm_max_train=100)
    fitted = fit_pipeline(kind, xs, ys, xt, cfg, seed=1)
    save_bundle(tmp_path / "b", fitted, {"config_hash": "x"})
    loaded, _ = load_bundle(tmp_path / "b")
    batch = xt[:100]
    assert np.array_equal(loaded.predict(batch), fitted.predict(batch))
    assert np.array_equal(loaded.transform(batch), fitted.transform(batch))
    if fitted.osvm is not None:
        from dinids.osvm import decision_function

        f = fitted.transform(batch)
        assert np.array_equal(decision_function(loaded.osvm, f), decision_function(fitted.osvm, f))


def test_lambda_zero_bundle_matches_feed_forward(tmp_path):
    assert main(["train", "--config", _conf(tmp_path, "dann"), "--lambda-fixed", "0", "--out", str(tmp_path / "d")]) == 0
    assert main(["train", "--config", _conf(tmp_path, "feed-forward"), "--out", str(tmp_path / "f")]) == 0
    tensors = [p.name for p in (tmp_path / "d").glob("g_[fc].*.f64")]
    assert len(tensors) == 8  # three G_f layers, one G_C layer, weights and bias each
    for name in tensors:
        assert (tmp_path / "d" / name).read_bytes() == (tmp_path / "f" / name).read_bytes()


def test_blob_config_bundle_reaches_oracle(tmp_path):
    conf = tmp_path / "blobs.conf"
    conf.write_text("pipeline = feed-forward\nseed = 7\ndata.source = synthetic:blobs\ndata.synthetic_rows = 2000\n"
                    "dann.epochs = 50\nsgd.learning_rate = 1.0\nsgd.batch_size = 32\n")
    assert main(["train", "--config", str(conf), "--out", str(tmp_path / "b")]) == 0
    fitted, _ = load_bundle(tmp_path / "b")
    x, y = make_blobs(2000, seed=7)
    from dinids.dataset import split_indices

    tr, te = split_indices(2000, 0.3, 7)
    oracle = LogisticRegression(max_iter=2000).fit(x[tr], y[tr])
    assert metrics(confusion(y[te], oracle.predict(x[te]))).f1 >= 0.99
    assert metrics(confusion(y[te], fitted.predict(x[te]))).f1 >= 0.95


def test_divergence_exits_4(tmp_path, monkeypatch, capsys):
    import dinids.dann as dann_mod

    real = dann_mod.label_gradients
    monkeypatch.setattr(dann_mod, "label_gradients", lambda *a, **k: (float("nan"),) + real(*a, **k)[1:])
    assert main(["train", "--config", _conf(tmp_path, "dann"), "--out", str(tmp_path / "b")]) == 4
    assert "train_dann" in capsys.readouterr().err
    assert not (tmp_path / "b").exists()


def test_train_input_errors(tmp_path):
    assert main(["train", "--config", str(tmp_path / "missing.conf")]) == 2
    bad = tmp_path / "bad.conf"
    bad.write_text("dann.epochz = 3\n")
    assert main(["train", "--config", str(bad)]) == 2
    nosrc = tmp_path / "nosrc.conf"
    nosrc.write_text("pipeline = osvm\n")
    assert main(["train", "--config", str(nosrc)]) == 2
    assert main(["train", "--config", _conf(tmp_path, extra="data.schema = nowhere.schema\n")]) == 2


# ---------------------------------------------------------------- eval


def test_self_and_cross_eval_append_tagged_rows(tmp_path, trained):
    _, bundle = trained
    ledger = tmp_path / "ledger.jsonl"
    out = tmp_path / "self.json"
    assert main(["eval", str(bundle), "synthetic:shift-source", "--direction", "self", "--ledger", str(ledger),
                 "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert 0 <= report["metrics"]["f1"] <= 1 and report["config_hash"] and report["seeds"]["run"] == 0
    assert main(["eval", str(bundle), "synthetic:shift-target", "--direction", "cross", "--ledger", str(ledger)]) == 0
    rows = [json.loads(line) for line in ledger.read_text().splitlines()]
    assert [r["direction"] for r in rows] == ["self", "cross"]
    assert rows[1]["pair"] == "shift-source->shift-target" and rows[1]["target"] == "shift-target"


def test_eval_direction_must_match_dataset(tmp_path, trained):
    _, bundle = trained
    ledger = tmp_path / "l.jsonl"
    assert main(["eval", str(bundle), "synthetic:shift-source", "--direction", "cross", "--ledger", str(ledger)]) == 2
    assert main(["eval", str(bundle), "synthetic:shift-target", "--direction", "self", "--ledger", str(ledger)]) == 2
    assert not ledger.exists()


def test_tampered_bundle_rejected_before_scoring(tmp_path, trained, capsys):
    _, bundle = trained
    bad = tmp_path / "bad"
    shutil.copytree(bundle, bad)
    text = (bad / "osvm.txt").read_text().splitlines()
    i = text.index("support_vectors") + 1
    first, rest = text[i].split(" ", 1)
    text[i] = f"{float(first) * 0.5!r} {rest}"
    (bad / "osvm.txt").write_text("\n".join(text) + "\n")
    with pytest.raises(BundleError, match="sum"):
        load_bundle(bad)
    ledger = tmp_path / "l.jsonl"
    assert main(["eval", str(bad), "synthetic:shift-source", "--ledger", str(ledger)]) == 2
    assert "sum" in capsys.readouterr().err and not ledger.exists()


def test_schema_drift_is_explicit(tmp_path, trained, capsys):
    _, bundle = trained
    cache = tmp_path / "narrow"
    cache.mkdir()
    write_matrix(cache / "features.f64", np.zeros((10, 38)), [f"f{i}" for i in range(38)])
    write_matrix(cache / "labels.f64", np.zeros((10, 1)), ["binary_label"])
    (cache / "summary.json").write_text(json.dumps({"dataset": "narrow", "n_flows": 10, "benign_fraction": 1.0,
                                                    "attack_class_counts": {}}))
    assert main(["eval", str(bundle), str(cache), "--direction", "cross", "--ledger", str(tmp_path / "l")]) == 2
    assert "schema drift" in capsys.readouterr().err


def test_missing_bundle(tmp_path):
    assert main(["eval", str(tmp_path / "none"), "synthetic:blobs"]) == 2


# ---------------------------------------------------------------- report / embed


def _ledger_rows(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return str(path)


def _row(model, s, t, f1, seed=0):
    return {"model": model, "source": s, "target": t, "f1": f1, "fold_f1": [f1], "seed": seed,
            "config_hash": "abc", "seeds": {"run": seed}}


@pytest.mark.parametrize("content", ["", "\n\n", "{not json}\n", '{"model": "x"}\n'])
def test_empty_or_invalid_ledger_exits_3(tmp_path, content):
    p = tmp_path / "ledger.jsonl"
    p.write_text(content)
    assert main(["report", str(p)]) == 3
    assert main(["report", str(tmp_path / "missing.jsonl")]) == 3


def test_report_with_both_directions(tmp_path, capsys):
    ledger = _ledger_rows(tmp_path / "l.jsonl", [
        _row("di-nids", "A", "A", 0.9), _row("di-nids", "B", "B", 0.8),
        _row("di-nids", "A", "B", 0.7), _row("di-nids", "B", "A", 0.7),
        _row("di-nids", "A", "B", 0.8, seed=1),
    ])
    assert main(["report", ledger, "--out", str(tmp_path / "r")]) == 0
    text = (tmp_path / "r" / "report.txt").read_text()
    assert "avg degradation" in text and "config hashes: abc" in text
    payload = json.loads((tmp_path / "r" / "report.json").read_text())
    row = payload["models"]["di-nids"]
    assert row["cd_f1"]["A->B"] == pytest.approx(75.0)  # two seeds averaged
    assert row["avg_degradation"] == pytest.approx(((90 - 75) + (80 - 70)) / 2)
    assert payload["config_hashes"] == ["abc"] and payload["seeds"] == [{"run": 0}, {"run": 1}]
    assert text == capsys.readouterr().out


def test_report_reference_mode_and_single_model(tmp_path, capsys):
    ledger = _ledger_rows(tmp_path / "l.jsonl", [
        _row("di-nids", "NFv2-CIC-2018", "NFv2-CIC-2018", 0.93),
        _row("di-nids", "NFv2-CIC-2018", "NFv2-UNSW-NB15", 0.86),
    ])
    assert main(["report", ledger, "--reference"]) == 0
    out = capsys.readouterr().out
    assert "93.23" in out and "ref" in out and "6.82" in out
    assert "osvm" not in out.split("Reference inconsistencies")[0]


def test_embed_writes_csvs_with_ratios(tmp_path, trained):
    _, bundle = trained
    out = tmp_path / "emb"
    assert main(["embed", str(bundle), "synthetic:shift-source", "synthetic:shift-target", "--sample", "300",
                 "--out", str(out)]) == 0
    summary = json.loads((out / "embedding.json").read_text())
    assert set(summary["separation_ratio"]) == {"raw", "projected"} and summary["config_hash"]
    lines = (out / "raw.csv").read_text().splitlines()
    assert lines[0] == "x,y,domain" and len(lines) == 301
