import json
import subprocess
import sys

import numpy as np
import pytest

from ipi_detect import artifacts
from ipi_detect.cli import main
from ipi_detect.config import config_hash, flatten, format_config, parse_config, pipeline_config
from ipi_detect.evaluation import PipelineConfig
from ipi_detect.report import (
    NON_OWNER_FIELDS,
    OWNER_FIELDS,
    RISK_MESSAGE,
    OwnerEntry,
    build_entries,
    read_report,
    run_detection,
)

TINY_CFG = "ae_epochs = 3\nintent_epochs = 3\nmax_pretrain_windows = 384\nfusion.k = 3\n"


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, tiny_corpus):
    root = tmp_path_factory.mktemp("cli")
    corpus = tiny_corpus.save(root / "corpus")
    (root / "tiny.cfg").write_text(TINY_CFG)
    common = ["--config", str(root / "tiny.cfg")]
    models = str(root / "models")
    assert main(["pretrain", "--corpus", str(corpus), "--out", models, "--exclude", "u00,u01"] + common) == 0
    pool = ["--pool", "u06,u07,u08"]
    assert main(["adapt", "--corpus", str(corpus), "--models", models, "--victim", "u00"] + pool + common) == 0
    assert main(["calibrate", "--corpus", str(corpus), "--models", models, "--victim", "u00"] + pool + common) == 0
    return root


def sessions(corpus_dir, user, nio=None):
    manifest = json.loads((corpus_dir / "manifest.json").read_text())
    return [
        str(corpus_dir / s["file"])
        for s in manifest["sessions"]
        if s["user_id"] == user and (nio is None or (s["subaction"] == "NIO") == nio)
    ]


# -- report structure ----------------------------------------------------------

def test_owner_entries_have_no_app_or_intent():
    assert OWNER_FIELDS == {"start", "end", "verdict", "risk_flag"}
    assert {"app", "topk", "score"} <= NON_OWNER_FIELDS
    entries = build_entries(
        np.arange(5.0), 2.0, np.zeros(5, int), np.zeros(5, int), np.ones(5), np.full((5, 9), 1 / 9),
        np.zeros(5, int), "action", 3,
    )
    assert all(isinstance(e, OwnerEntry) for e in entries)


def test_entries_sorted_and_flagged_only_for_non_owner():
    rng = np.random.default_rng(0)
    starts = rng.permutation(20).astype(float)
    u = rng.integers(0, 2, 20)
    y = u * rng.integers(0, 2, 20)
    entries = build_entries(starts, 2.0, u, y, rng.random(20), rng.dirichlet(np.ones(9), 20),
                            rng.integers(0, 7, 20), "action", 3)
    assert [e.start for e in entries] == sorted(starts)
    for e in entries:
        if e.risk_flag:
            assert e.verdict == "non-owner" and e.message == RISK_MESSAGE and len(e.topk) == 3


def test_detect_report(workspace):
    corpus, models = workspace / "corpus", workspace / "models"
    traces = sessions(corpus, "u00")[:6]
    out = workspace / "r1.jsonl"
    assert main(["detect", "--trace", *traces, "--models", str(models), "--out", str(out)]) == 0
    header, entries = read_report(out)
    assert header["format_version"] == 1 and header["k"] == 3
    assert set(header["model_hashes"]) == {"normalizer.json", "autoencoder.ipim", "intent.ipim", "identity_head.ipim"}
    assert header["threshold"] == artifacts.load_calibration(models)["threshold"]
    starts = [e["start"] for e in entries]
    assert all(a < b for a, b in zip(starts, starts[1:]))
    for e in entries:
        if e["verdict"] == "owner":
            assert set(e) == OWNER_FIELDS
        else:
            assert set(e) == NON_OWNER_FIELDS
        assert not e["risk_flag"] or e["verdict"] == "non-owner"
    # byte-identical rerun
    out2 = workspace / "r2.jsonl"
    assert main(["detect", "--trace", *traces, "--models", str(models), "--out", str(out2)]) == 0
    assert out.read_bytes() == out2.read_bytes()


def test_abuser_activity_is_flagged(workspace, tmp_path):
    import shutil

    models = tmp_path / "m"
    shutil.copytree(workspace / "models", models)
    calib = artifacts.load_calibration(models)
    artifacts.save_calibration(models, 2.0, calib["k"])  # widest grid threshold
    traces = sessions(workspace / "corpus", "u01", nio=False)[:8]
    report = run_detection(traces, models, tmp_path / "r.jsonl")
    flagged = [e for e in report.entries if e.risk_flag]
    assert flagged
    assert all(e.message == RISK_MESSAGE and len(e.topk) == 3 for e in flagged)


def test_missing_models_named(tmp_path, capsys):
    trace = tmp_path / "s.jsonl"
    trace.write_text("")
    code = main(["detect", "--trace", str(trace), "--models", "nope/", "--out", str(tmp_path / "r.jsonl")])
    assert code == 1
    assert "nope/" in capsys.readouterr().err


def test_partial_model_dir(workspace, tmp_path):
    import shutil

    models = tmp_path / "m"
    shutil.copytree(workspace / "models", models)
    (models / artifacts.HEAD_FILE).unlink()
    with pytest.raises(FileNotFoundError, match="identity_head.ipim"):
        run_detection(sessions(workspace / "corpus", "u00")[:1], models)


# -- CLI surface ---------------------------------------------------------------

def test_cli_usage_errors():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["detect", "--models", "m"])
    assert exc.value.code == 2


def test_cli_help_lists_commands():
    out = subprocess.run([sys.executable, "-m", "ipi_detect", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("generate-data", "pretrain", "adapt", "calibrate", "detect", "evaluate", "ablate", "report-summary"):
        assert cmd in out.stdout


def test_generate_data(tmp_path):
    out = tmp_path / "c"
    assert main(["generate-data", "--users", "4", "--minutes", "5.5", "--seed", "1", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["users"]) == 4
    assert all((out / s["file"]).exists() for s in manifest["sessions"])


def test_evaluate_and_summary(workspace, tmp_path, capsys):
    res = tmp_path / "res"
    args = ["evaluate", "--corpus", str(workspace / "corpus"), "--folds", "all", "--genuine", "2", "--synthetic", "1",
            "--config", str(workspace / "tiny.cfg"), "--out", str(res), "--k", "1,3"]
    assert main(args) == 0
    assert sorted(p.name for p in res.glob("fold_*.json")) == ["fold_01.json", "fold_02.json", "fold_03.json"]
    assert (res / "summary.txt").exists()
    capsys.readouterr()
    assert main(["report-summary", "--results", str(res)]) == 0
    assert "pipeline" in capsys.readouterr().out


def test_evaluate_bad_fold(workspace, tmp_path):
    args = ["evaluate", "--corpus", str(workspace / "corpus"), "--folds", "99", "--genuine", "2", "--synthetic", "1",
            "--out", str(tmp_path)]
    assert main(args) == 1


# -- config and artifacts ------------------------------------------------------

def test_config_round_trip():
    cfg = PipelineConfig(ae_epochs=7)
    cfg.fusion.k = 3
    cfg.tcm.w_vote = 4
    text = format_config(flatten(cfg))
    back, rest = pipeline_config(parse_config(text))
    assert back == cfg and rest == {}
    assert config_hash(back) == config_hash(cfg)
    assert "fusion.k = 3" in text and "tcm.w_vote = 4" in text


def test_config_comments_and_strings():
    flat = parse_config("# run\nintent_backbone = cnn\nseed = 4\n")
    cfg, _ = pipeline_config(flat)
    assert cfg.intent_backbone == "cnn" and cfg.seed == 4


def test_container_little_endian(workspace):
    import struct

    raw = (workspace / "models" / artifacts.AE_FILE).read_bytes()
    assert raw[:4] == b"IPIM"
    version, hlen = struct.unpack("<II", raw[4:12])
    header = json.loads(raw[12 : 12 + hlen])
    first = header["tensors"][0]
    payload = raw[12 + hlen :]
    values = np.frombuffer(payload, dtype="<f4", count=first["count"], offset=first["offset"])
    _, tensors = artifacts.read_container(workspace / "models" / artifacts.AE_FILE)
    assert version == 1 and np.array_equal(values.reshape(first["shape"]), tensors[first["name"]])
    assert header["meta"]["normalizer"] == "normalizer.json"


def test_artifact_round_trip(tmp_path, tiny_context):
    ae, intent = tiny_context.models.ae, tiny_context.models.intent
    head = tiny_context.evaluate().head
    artifacts.save_autoencoder(ae, tmp_path / "a.ipim")
    artifacts.save_intent(intent, tmp_path / "i.ipim")
    artifacts.save_identity_head(head, tmp_path / "h.ipim")
    X = tiny_context.models.identity_view(tiny_context.data.snippet)
    Xi = tiny_context.models.intent_view(tiny_context.data.snippet)
    assert np.array_equal(artifacts.load_autoencoder(tmp_path / "a.ipim").transform(X), ae.transform(X))
    loaded = artifacts.load_intent(tmp_path / "i.ipim")
    assert np.array_equal(loaded.predict_proba(Xi), intent.predict_proba(Xi))
    assert loaded.meta_["class_names"][-1] == "NIO"
    h = artifacts.load_identity_head(tmp_path / "h.ipim")
    dv = ae.transform(X)
    assert np.allclose(h.decision_function(dv), head.decision_function(dv), atol=1e-5)
    assert h.provenance_["scheme"] == "random"


def test_container_kind_checked(tmp_path, tiny_context):
    artifacts.save_intent(tiny_context.models.intent, tmp_path / "i.ipim")
    with pytest.raises(artifacts.ArtifactError):
        artifacts.load_autoencoder(tmp_path / "i.ipim")
