"""One test per advertised guarantee, at the stated tolerance.

Each test prints a single pass/fail line under pytest -v.  The reference
implementations live in util.py and are deliberately independent of the
package's vectorized code paths.
"""

import contextlib
import hashlib
import io
import json
import math
import shutil
import time
from dataclasses import replace

import numpy as np
import pytest

from dualmar.cli import main
from dualmar.cograph import assemble_adjacency, build_cooccurrence, neighbor_mask
from dualmar.errors import CorruptCheckpoint
from dualmar.harvest import HarvestTriple, parse_updates
from dualmar.kg import (embed_surface, kg_stats, normalize_kg)
from dualmar.kge import (KgeConfig, evaluate_link_prediction, init_table,
                         loss_gradients, nll_loss, angular_distance,
                         radial_distance, train_kge, triple_distance)
from dualmar.metrics import auc, binary_f1, recall_at_k, weighted_f1
from dualmar.nn.checkpoint import load_checkpoint, save_checkpoint
from dualmar.nn.gradcheck import (max_relative_error, numeric_gradients,
                                  relative_error, standard_suite)
from dualmar.pipeline import _encoder_param_names, init_model, EncoderConfig
from dualmar.ehr import proxy_examples

from util import (analytic_random_mrr, brute_auc, brute_binary_f1,
                  brute_cooccurrence, brute_ranking, brute_recall_at_k,
                  brute_weighted_f1, hierarchy_split, random_ehr_dataset,
                  random_prediction_set, random_raw_graph)


# 1 ------------------------------------------------------------- gradients

def test_gradient_rules_match_central_differences():
    start = time.perf_counter()
    for seed in range(20):
        for name, build, arrays in standard_suite(seed):
            err = max_relative_error(build, arrays)
            assert err <= 1e-4, f"{name} (instance {seed}): {err:.3e}"
    # the polar embedding loss has its own hand-written backward pass
    for seed in range(20):
        rng = np.random.default_rng(1_000 + seed)
        cfg = KgeConfig(k=3, gamma=1.5, lam=0.7, negatives=2, batch_size=3)
        table = init_table(5, 2, cfg, rng)
        positives = rng.integers(0, 5, size=(3, 3))
        positives[:, 1] = rng.integers(0, 2, size=3)
        negatives = rng.integers(0, 5, size=(3, 2, 3))
        negatives[:, :, 1] = positives[:, 1][:, None]
        _, grads = loss_gradients(table, positives, negatives, cfg)

        fields = ("entity_modulus", "entity_phase",
                  "relation_modulus", "relation_phase")
        arrays = {f: getattr(table, f) for f in fields}

        def loss_of(arrs):
            probe = replace(table, **{f: arrs[f] for f in fields})
            value, _ = loss_gradients(probe, positives, negatives, cfg)
            return value

        numeric = numeric_gradients(loss_of, arrays)
        for f in fields:
            err = relative_error(grads[f], numeric[f])
            assert err <= 1e-4, f"kge {f} (instance {seed}): {err:.3e}"
    assert time.perf_counter() - start < 60.0


# 2 --------------------------------------------------- polar distance values

def test_polar_distances_analytic_values_and_periodicity():
    tol = 1e-12
    assert abs(radial_distance(np.array([2.0, 3.0]), np.array([2.0, 1.0]),
                               np.array([4.0, 3.0]))) <= tol
    assert abs(radial_distance(np.array([1.0]), np.array([2.0]),
                               np.array([5.0])) - 3.0) <= tol
    assert abs(radial_distance(np.array([1.0, 1.0]), np.array([1.0, 1.0]),
                               np.array([0.0, 0.0])) - math.sqrt(2.0)) <= tol

    assert abs(angular_distance(np.array([math.pi]), np.array([math.pi]),
                                np.array([0.0]))) <= tol
    assert abs(angular_distance(np.array([0.0]), np.array([math.pi / 2]),
                                np.array([0.0])) - math.sin(math.pi / 4)) <= tol

    from dualmar.kge import EmbeddingTable
    table = EmbeddingTable(
        entity_modulus=np.array([[3.0], [0.0]]),
        entity_phase=np.array([[math.pi / 3], [0.0]]),
        relation_modulus=np.array([[1.0]]),
        relation_phase=np.array([[0.0]]),
    )
    assert abs(triple_distance(table, (0, 0, 1), lam=2.0) - 4.0) <= tol
    assert abs(triple_distance(table, (0, 0, 1), lam=0.0) - 3.0) <= tol
    assert abs(triple_distance(table, (1, 0, 1), lam=0.0)) <= tol

    assert abs(nll_loss(np.array(1.0), np.array([[1.0]]), gamma=1.0)
               - 2.0 * math.log(2.0)) <= tol
    assert abs(nll_loss(np.array(0.0), np.array([[2.0]]), gamma=1.0)
               - 2.0 * math.log(1.0 + math.exp(-1.0))) <= tol

    rng = np.random.default_rng(2)
    for _ in range(100):
        h, r, t = rng.uniform(-10.0, 10.0, size=(3, 6))
        base = angular_distance(h, r, t)
        for target in range(3):
            shift = 2.0 * math.pi * rng.integers(-4, 5, size=6)
            moved = [h.copy(), r.copy(), t.copy()]
            moved[target] = moved[target] + shift
            assert abs(angular_distance(*moved) - base) <= tol


# 3 ------------------------------------------------------- link prediction

def test_link_prediction_matches_exhaustive_reference_and_learns():
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    for trial in range(10):
        n_ent = int(rng.integers(3, 9))
        n_rel = int(rng.integers(1, 4))
        k = int(rng.integers(1, 5))
        table = init_table(n_ent, n_rel, KgeConfig(k=k, gamma=2.0), rng)
        pool = [(h, r, t) for h in range(n_ent) for r in range(n_rel)
                for t in range(n_ent) if h != t]
        take = min(len(pool), int(rng.integers(5, 16)))
        idx = rng.choice(len(pool), size=take, replace=False)
        known = np.array([pool[i] for i in idx], dtype=np.int64)
        test = known[: max(1, take // 3)]
        lam = float(rng.uniform(0.1, 2.0))
        filtered = trial % 2 == 0
        got = evaluate_link_prediction(table, test, known, lam=lam,
                                       filtered=filtered)
        arrays = {f: getattr(table, f) for f in
                  ("entity_modulus", "entity_phase",
                   "relation_modulus", "relation_phase")}
        want = brute_ranking(arrays, test, known, lam, filtered=filtered)
        assert abs(got.mrr - want["mrr"]) <= 1e-12
        for k_at in (1, 3, 10):
            assert abs(got.hits[k_at] - want[f"hits@{k_at}"]) <= 1e-12

    train, test, all_triples, n_ent, n_rel = hierarchy_split(7)
    cfg = KgeConfig(k=32, gamma=6.0, lam=0.5, negatives=16, steps=2000,
                    lr=0.01, batch_size=64)
    table, _history = train_kge(train, n_ent, n_rel, cfg, seed=11)
    report = evaluate_link_prediction(table, test, all_triples, lam=cfg.lam)
    baseline = analytic_random_mrr(test, all_triples, n_ent)
    assert report.mrr >= 5.0 * baseline, (report.mrr, baseline)
    assert time.perf_counter() - start < 180.0


# 4 ---------------------------------------------------------- normalization

def test_normalization_idempotent_monotone_and_strict_at_one():
    rng = np.random.default_rng(11)
    thetas = (0.5, 0.7, 0.9, 1.0)
    for _ in range(100):
        graph = random_raw_graph(rng)
        counts = []
        for theta in thetas:
            once = normalize_kg(graph, theta=theta)
            twice = normalize_kg(once, theta=theta)
            assert kg_stats(once) == kg_stats(twice)
            assert [(t.head, t.relation, t.tail, t.source) for t in once.triples] \
                == [(t.head, t.relation, t.tail, t.source) for t in twice.triples]
            assert once.entities == twice.entities
            counts.append(len(once.entities))
        # higher thresholds merge less, never more
        assert counts == sorted(counts), counts

        strict = normalize_kg(graph, theta=1.0)
        by_cat: dict[str, list] = {}
        for ent in strict.entities.values():
            if ent.code is None:
                by_cat.setdefault(ent.category, []).append(ent)
        for ents in by_cat.values():
            vecs = [embed_surface(e.surface) for e in ents]
            for i in range(len(vecs)):
                for j in range(i + 1, len(vecs)):
                    assert not np.array_equal(vecs[i], vecs[j])


# 5 ------------------------------------------------------------------ parser

def test_parser_round_trips_and_recovers_worked_example():
    term = "Heart Failure"
    rng = np.random.default_rng(17)
    relations = ("IS_CAUSED_BY", "HAS_SYMPTOMS", "NEEDS_TREATMENT",
                 "IS_A_KIND_OF", "INTERACTS_WITH", "IS_TREATED_BY")
    words = ("Valve", "Rhythm", "Pressure", "Artery", "Muscle", "Fluid",
             "Oxygen", "Sodium", "Stress", "Infection")
    triples = []
    for i in range(1000):
        rel = relations[int(rng.integers(len(relations)))]
        tail = f"{words[int(rng.integers(len(words)))]} Finding {i:04d}"
        triples.append(HarvestTriple(term, rel, tail))
    text = "\n".join(f"[{t.head}, {t.relation}, {t.tail}]" for t in triples)
    report = parse_updates(text, term)
    assert report.rejected == []
    assert report.accepted == triples

    block = """Disease Name: Heart Failure
Topics: Overview
Text: Heart failure occurs when the heart muscle does not pump blood as well as it should.

Updates:
[Heart Failure, IS_CAUSED_BY, Narrowed Arteries],
[Heart Failure, IS_CAUSED_BY, High Blood Pressure],
[Heart Failure, HAS_SYMPTOMS, Shortness of Breath],
[Heart Failure, HAS_SYMPTOMS, Fluid Build-up in Lungs],
[Heart Failure, NEEDS_TREATMENT, Proper Treatment],
[Heart Failure, NEEDS_TREATMENT, Lifestyle Changes]"""
    got = parse_updates(block, term)
    assert got.rejected == []
    assert len(got.accepted) == 6
    assert tuple(got.accepted) == (
        HarvestTriple(term, "IS_CAUSED_BY", "Narrowed Arteries"),
        HarvestTriple(term, "IS_CAUSED_BY", "High Blood Pressure"),
        HarvestTriple(term, "HAS_SYMPTOMS", "Shortness of Breath"),
        HarvestTriple(term, "HAS_SYMPTOMS", "Fluid Build-up in Lungs"),
        HarvestTriple(term, "NEEDS_TREATMENT", "Proper Treatment"),
        HarvestTriple(term, "NEEDS_TREATMENT", "Lifestyle Changes"),
    )


# 6 ------------------------------------------------------------- graph math

def test_cooccurrence_identities_hold_exactly():
    rng = np.random.default_rng(23)
    for trial in range(50):
        ds = random_ehr_dataset(rng)
        b = build_cooccurrence(ds)
        dense = b.toarray()
        assert np.array_equal(dense, dense.T)
        assert np.array_equal(dense, brute_cooccurrence(ds))

        if len(ds.patients) >= 2:
            cut = int(rng.integers(1, len(ds.patients)))
            left = replace(ds, patients=ds.patients[:cut])
            right = replace(ds, patients=ds.patients[cut:])
            total = build_cooccurrence(left) + build_cooccurrence(right)
            assert np.array_equal(total.toarray(), dense)

        phi = float(rng.choice([0.0, 0.25, 0.5, 0.9, 1.0]))
        a, a_hat = assemble_adjacency(b, phi)
        n = b.shape[0]
        assert np.array_equal(a.toarray(), (1.0 - phi) * dense + phi * np.eye(n))
        rows = np.asarray(a_hat.sum(axis=1)).ravel()
        assert np.max(np.abs(rows - 1.0)) <= 1e-9


# 7 ---------------------------------------------------------------- metrics

def test_metric_reports_match_brute_force():
    rng = np.random.default_rng(29)
    for _ in range(50):
        probs, truth = random_prediction_set(rng)
        assert abs(weighted_f1(probs, truth) - brute_weighted_f1(probs, truth)) <= 1e-12
        for k in (1, 3, 10):
            assert abs(recall_at_k(probs, truth, k) - brute_recall_at_k(probs, truth, k)) <= 1e-12
        n = int(rng.integers(4, 40))
        labels = np.zeros(n, dtype=int)
        labels[: int(rng.integers(1, n))] = 1
        rng.shuffle(labels)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = rng.random(n)
        assert abs(auc(scores, labels) - brute_auc(scores, labels)) <= 1e-12
        assert abs(binary_f1(scores, labels) - brute_binary_f1(scores, labels)) <= 1e-12


# 9 --------------------------------------------- determinism and persistence

PIPELINE_CONFIG = {
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


def _run_chain(cfg_path, out):
    base = ["--config", str(cfg_path), "--out-dir", str(out)]
    commands = [
        ["data-synth"], ["data-split"], ["kg-synth"],
        ["kg-normalize", str(out / "kg_raw.tsv"),
         "--xref", str(out / "kg_xref.json")],
        ["kge-train"], ["kge-eval"], ["kge-export"], ["graph-build"],
        ["proxy-pretrain"], ["finetune"], ["direct-train"],
        ["evaluate"], ["evaluate", str(out / "model_direct.ckpt")],
    ]
    for cmd in commands:
        stdout, stderr = io.StringIO(), io.StringIO()
        with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(stderr):
            code = main(cmd + base)
        assert code == 0, f"{cmd[0]} exited {code}\n{stderr.getvalue()}"


def test_pipeline_rerun_reproduces_artifacts_bitwise(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(PIPELINE_CONFIG))
    out = tmp_path / "art"
    _run_chain(cfg_path, out)
    kinds = {".ckpt", ".json", ".tsv", ".jsonl"}
    files = sorted(p for p in out.rglob("*") if p.suffix in kinds)
    assert any(p.suffix == ".ckpt" for p in files)
    snapshot = {str(p.relative_to(out)): p.read_bytes() for p in files}

    shutil.rmtree(out)
    _run_chain(cfg_path, out)
    for rel, data in snapshot.items():
        assert (out / rel).read_bytes() == data, rel

    # save/load round trip is bit-exact
    source = out / "model_finetune.ckpt"
    arrays, config, meta = load_checkpoint(source)
    copy = tmp_path / "copy.ckpt"
    save_checkpoint(copy, arrays, config, meta)
    assert copy.read_bytes() == source.read_bytes()
    again, _, _ = load_checkpoint(copy)
    for name, arr in arrays.items():
        assert arr.tobytes() == again[name].tobytes()

    # tampered files are rejected
    truncated = tmp_path / "truncated.ckpt"
    truncated.write_bytes(source.read_bytes()[:-16])
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(truncated)
    flipped = bytearray(source.read_bytes())
    flipped[0] ^= 0xFF
    bad_magic = tmp_path / "bad_magic.ckpt"
    bad_magic.write_bytes(bytes(flipped))
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(bad_magic)


# 10 ------------------------------------------------------- freeze contract

def test_per_category_pretraining_freezes_shared_encoder():
    rng = np.random.default_rng(31)
    ds = random_ehr_dataset(rng, max_patients=8)
    b = build_cooccurrence(ds)
    _a, a_hat = assemble_adjacency(b, 0.5)
    mask = neighbor_mask(_a)
    cfg = EncoderConfig(feature_width=8, gnn_hidden=8, admission_width=8,
                        attention_dim=8, patient_width=8, decoder_hidden=8,
                        propagation="attention")
    cat_sizes = tuple(len(v) for v in ds.labs_by_category().values())
    model = init_model(cfg, mask, ds.num_diseases, cat_sizes, seed=3)
    examples = proxy_examples(ds)

    encoder_names = model.store.names("encoder/")
    assert set(_encoder_param_names(model)) <= set(encoder_names)

    def digest(names):
        h = hashlib.sha256()
        for name in sorted(names):
            h.update(name.encode())
            h.update(model.store[name].data.tobytes())
        return h.hexdigest()

    before = digest(encoder_names)
    from dualmar.pipeline import proxy_individual_train
    proxy_individual_train(model, examples, epochs=2, lr=1e-3, batch_size=4,
                           seed=9)
    assert digest(encoder_names) == before

    decoder_names = model.store.names("decoder/")
    assert digest(decoder_names) != before
    assert any(not np.array_equal(model.store[n].data,
                                  np.zeros_like(model.store[n].data))
               for n in decoder_names)
