"""End-to-end exercise of the command-line pipeline driver."""

import contextlib
import io
import json
from types import SimpleNamespace

import pytest

from dualmar.cli import main
from dualmar.config import config_hash, resolve_config

TINY = {
    "seed": 5,
    "data": {"patients": 40, "num_diseases": 6, "lab_sizes": [3, 2, 1],
             "clusters": 2, "affinity": 0.8, "progression": 0.7},
    "split": {"ratios": [0.7, 0.1, 0.2]},
    "kge": {"k": 8, "steps": 80, "negatives": 4, "batch_size": 16},
    "encoder": {"feature_width": 16, "gnn_hidden": 12, "admission_width": 12,
                "attention_dim": 8, "patient_width": 12, "decoder_hidden": 12,
                "propagation": "normalized"},
    "train": {"joint_epochs": 1, "individual_epochs": 1, "task_epochs": 2,
              "batch_size": 8},
}

REPORT_COMMANDS = {"kg-stats", "kge-eval", "evaluate", "gradcheck"}

SPECS = [
    {"term": "Heart Failure", "category": "Disease",
     "topics": "causes, symptoms", "text": "pump failure"},
    {"term": "Metformin", "category": "Drug", "topics": "interactions",
     "text": "glucose control"},
]

RESPONSES = [
    {"term": "Heart Failure", "category": "Disease",
     "response": "[Heart Failure, IS_CAUSED_BY, Narrowed Arteries]\n"
                 "[Heart Failure, has symptom, Fatigue]\n"
                 "[Heart Failure, MISSING_TAIL]"},
    {"term": "Metformin", "category": "Drug",
     "response": "[Metformin, INTERACTS_WITH, Alcohol]"},
]


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(list(argv))
    return code, out.getvalue(), err.getvalue()


def write_config(root, overrides=None):
    cfg = json.loads(json.dumps(TINY))
    for section, fields in (overrides or {}).items():
        cfg.setdefault(section, {})
        if isinstance(fields, dict):
            cfg[section].update(fields)
        else:
            cfg[section] = fields
    path = root / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    root = tmp_path_factory.mktemp("chain")
    cfg_path = write_config(root)
    out = root / "art"
    specs = root / "specs.jsonl"
    specs.write_text("\n".join(json.dumps(s) for s in SPECS) + "\n")
    responses = root / "responses.jsonl"
    responses.write_text("\n".join(json.dumps(r) for r in RESPONSES) + "\n")
    base = ["--config", str(cfg_path), "--out-dir", str(out)]
    commands = [
        ["data-synth"],
        ["data-split"],
        ["kg-synth"],
        ["kg-normalize", str(out / "kg_raw.tsv"),
         "--xref", str(out / "kg_xref.json")],
        ["kg-stats"],
        ["harvest-render", str(specs)],
        ["harvest-parse", str(responses)],
        ["kge-train"],
        ["kge-eval"],
        ["kge-export"],
        ["graph-build"],
        ["proxy-pretrain"],
        ["finetune"],
        ["direct-train"],
        ["evaluate"],
        ["evaluate", "--fresh"],
        ["evaluate", str(out / "model_direct.ckpt"), "--split", "valid"],
        ["gradcheck"],
    ]
    results = []
    for cmd in commands:
        code, so, se = run(*cmd, *base)
        assert code == 0, f"{cmd[0]} exited {code}\n{se}"
        results.append((cmd, so, se))
    cfg = resolve_config(TINY, out_dir=str(out))
    return SimpleNamespace(out=out, cfg_path=cfg_path, base=base,
                           results=results, cfg_hash=config_hash(cfg))


def test_stdout_purity(chain):
    for cmd, so, _se in chain.results:
        if cmd[0] in REPORT_COMMANDS:
            lines = so.splitlines()
            assert len(lines) == 1, cmd
            json.loads(lines[0])
        else:
            assert so == "", cmd


def test_stderr_is_json_lines(chain):
    for cmd, _so, se in chain.results:
        events = []
        for line in se.splitlines():
            rec = json.loads(line)
            events.append(rec["event"])
        assert events[0] == "start" and events[-1] == "done", cmd


def test_artifacts_and_meta(chain):
    names = [
        "dataset.jsonl", "vocab.json", "train.jsonl", "valid.jsonl",
        "test.jsonl", "kg_raw.tsv", "kg_xref.json", "prompts.jsonl",
        "parse_report.jsonl",
        "kge.ckpt", "kge_history.tsv", "kge_loss.png", "kge_eval.json",
        "kge_eval.tsv", "kge_eval.png", "embeddings.tsv", "cograph.coo",
        "cograph.json", "pretrained.ckpt", "pretrain_history.tsv",
        "pretrain_loss.png", "model_finetune.ckpt", "finetune_history.tsv",
        "finetune_loss.png", "model_direct.ckpt", "metrics_finetune_test.json",
        "metrics_fresh_test.json", "metrics_direct_valid.json",
        "gradcheck.tsv",
    ]
    for name in names:
        artifact = chain.out / name
        assert artifact.exists(), name
        meta = json.loads((chain.out / f"{name}.meta.json").read_text())
        assert meta["config_hash"] == chain.cfg_hash, name
        assert meta["stage"]
    for sub in ("kg", "fragment"):
        assert (chain.out / sub / "triples.tsv").exists()


def test_kg_stats_counts(chain):
    (_cmd, so, _se) = next(r for r in chain.results if r[0][0] == "kg-stats")
    stats = json.loads(so)
    diseases, clusters, markers = 6, 2, 6
    assert stats["entities"] == diseases + clusters + markers
    assert stats["relations"] == 3
    assert stats["triples"] == diseases + clusters + markers
    assert stats["coded_entities"] == diseases + markers
    assert stats["entities_by_category"] == {"Disease": diseases + clusters,
                                             "Phenotype": markers}


def test_kge_eval_payload(chain):
    (_cmd, so, _se) = next(r for r in chain.results if r[0][0] == "kge-eval")
    payload = json.loads(so)
    assert 0.0 < payload["metrics"]["mrr"] <= 1.0
    file_copy = json.loads((chain.out / "kge_eval.json").read_text())
    assert file_copy == payload


def test_embeddings_export_shape(chain):
    lines = (chain.out / "embeddings.tsv").read_text().splitlines()
    header = lines[0].split("\t")
    assert header[:3] == ["entity_id", "code", "surface"]
    assert len(header) == 3 + 2 * TINY["kge"]["k"]
    assert len(lines) == 1 + 14
    for line in lines[1:]:
        assert len(line.split("\t")) == len(header)


def test_prior_rows_reach_pretraining(chain):
    (_cmd, _so, se) = next(r for r in chain.results
                           if r[0][0] == "proxy-pretrain")
    recs = [json.loads(line) for line in se.splitlines()]
    prior = next(r for r in recs if r["event"] == "prior_rows")
    assert prior["matched"] == 12


def test_evaluate_payloads(chain):
    finetune = json.loads(
        (chain.out / "metrics_finetune_test.json").read_text())
    (_cmd, so, _se) = next(r for r in chain.results if r[0] == ["evaluate"])
    assert json.loads(so) == finetune
    assert finetune["task"] == "diagnosis"
    assert finetune["split"] == "test"
    assert finetune["path"] == "finetune"
    metrics = finetune["metrics"]
    assert 0.0 <= metrics["weighted_f1"] <= 1.0
    assert "recall_at_10" in metrics and "recall_at_20" in metrics

    fresh = json.loads((chain.out / "metrics_fresh_test.json").read_text())
    assert fresh["model"] == "fresh"
    direct = json.loads((chain.out / "metrics_direct_valid.json").read_text())
    assert direct["split"] == "valid"
    assert direct["path"] == "direct"


def test_harvest_artifacts(chain):
    prompts = [json.loads(line) for line in
               (chain.out / "prompts.jsonl").read_text().splitlines()]
    assert [p["term"] for p in prompts] == ["Heart Failure", "Metformin"]
    assert all(p["prompt_hash"] for p in prompts)
    assert "causes, symptoms" in prompts[0]["prompt"]

    report = [json.loads(line) for line in
              (chain.out / "parse_report.jsonl").read_text().splitlines()]
    assert report[0]["accepted"] == 2
    assert report[0]["rejected"]
    assert report[1]["accepted"] == 1
    frag = (chain.out / "fragment" / "triples.tsv").read_text().splitlines()
    assert len(frag) == 3


def test_gradcheck_report(chain):
    (_cmd, so, _se) = next(r for r in chain.results if r[0][0] == "gradcheck")
    payload = json.loads(so)
    assert payload["max_relative_error"] <= 1e-4


def test_rerun_is_byte_identical(tmp_path):
    cfg_path = write_config(tmp_path)
    out = tmp_path / "art"
    base = ["--config", str(cfg_path), "--out-dir", str(out)]
    assert run("data-synth", *base)[0] == 0
    first = (out / "dataset.jsonl").read_bytes()
    assert run("data-synth", *base)[0] == 0
    assert (out / "dataset.jsonl").read_bytes() == first

    assert run("kg-synth", *base)[0] == 0
    assert run("kg-normalize", str(out / "kg_raw.tsv"), *base)[0] == 0
    assert run("kge-train", *base)[0] == 0
    ckpt = (out / "kge.ckpt").read_bytes()
    history = (out / "kge_history.tsv").read_bytes()
    assert run("kge-train", *base)[0] == 0
    assert (out / "kge.ckpt").read_bytes() == ckpt
    assert (out / "kge_history.tsv").read_bytes() == history


def test_missing_input_exits_2(tmp_path):
    cfg_path = write_config(tmp_path)
    code, so, se = run("data-split", "--config", str(cfg_path),
                       "--out-dir", str(tmp_path / "empty"))
    assert code == 2
    assert so == ""
    assert "MissingInput" in se


def test_stale_artifact_exits_2(tmp_path):
    cfg_path = write_config(tmp_path)
    out = tmp_path / "art"
    assert run("data-synth", "--config", str(cfg_path),
               "--out-dir", str(out))[0] == 0
    code, _so, se = run("data-split", "--config", str(cfg_path),
                        "--out-dir", str(out), "--seed", "6")
    assert code == 2
    assert "StaleArtifact" in se


def test_config_errors_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"data": {"patinets": 3}}))
    code, _so, se = run("data-synth", "--config", str(bad),
                        "--out-dir", str(tmp_path / "a"))
    assert code == 2
    assert "ConfigInvalid" in se
    code, _so, se = run("data-synth", "--config", str(tmp_path / "nope.json"),
                        "--out-dir", str(tmp_path / "b"))
    assert code == 2


def test_seed_flag_changes_artifacts(tmp_path):
    cfg_path = write_config(tmp_path)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert run("data-synth", "--config", str(cfg_path),
               "--out-dir", str(out_a))[0] == 0
    assert run("data-synth", "--config", str(cfg_path),
               "--out-dir", str(out_b), "--seed", "9")[0] == 0
    assert ((out_a / "dataset.jsonl").read_bytes()
            != (out_b / "dataset.jsonl").read_bytes())
    meta_a = json.loads((out_a / "dataset.jsonl.meta.json").read_text())
    meta_b = json.loads((out_b / "dataset.jsonl.meta.json").read_text())
    assert meta_a["config_hash"] != meta_b["config_hash"]
