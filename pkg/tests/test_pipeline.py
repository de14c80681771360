"""Encoder construction, attention pooling, training paths, and model
persistence on a hand-sized dataset."""

import numpy as np
import pytest

from dualmar.cograph import assemble_adjacency, build_cooccurrence, neighbor_mask
from dualmar.ehr import (Admission, EhrDataset, LabSpec, Patient,
                         downstream_examples, proxy_examples)
from dualmar.errors import (CheckpointMissing, ConfigInvalid, ConfigMismatch,
                            MissingFeatureRow, ShapeMismatch)
from dualmar.pipeline import (EncoderConfig, Model, add_head, encode,
                              init_model, load_model, node_matrix, predict,
                              proxy_individual_train, proxy_joint_train,
                              random_feature_rows, save_model, task_train)


def tiny_ehr():
    labs = (LabSpec("L000", 1), LabSpec("L001", 2), LabSpec("L002", 2), LabSpec("L003", 3))
    patients = (
        Patient("a", (Admission((0, 2), (0, 3)), Admission((1,), (1,)))),
        Patient("b", (Admission((2,), (2,)),)),
        Patient("c", (Admission((1, 0), (2,)), Admission((0,), ()), Admission((2,), (0, 1)))),
        Patient("d", (Admission((0,), (0,)), Admission((2, 1), (3,)))),
    )
    ds = EhrDataset(patients, ("100", "101", "102"), labs)
    ds.validate()
    return ds


def tiny_cfg(**overrides):
    base = dict(feature_width=8, gnn_hidden=8, admission_width=8, attention_dim=8,
                patient_width=8, decoder_hidden=8, dropout_attention=0.0,
                dropout_decoder=0.0, dropout_head=0.0, propagation="normalized")
    base.update(overrides)
    return EncoderConfig(**base)


def tiny_model(seed=0, prior_rows=None, **cfg_overrides):
    ds = tiny_ehr()
    a, a_hat = assemble_adjacency(build_cooccurrence(ds), 0.5)
    cfg = tiny_cfg(**cfg_overrides)
    cat_sizes = tuple(len(v) for v in ds.labs_by_category().values())
    model = init_model(cfg, neighbor_mask(a), ds.num_diseases, cat_sizes,
                       seed=seed, prior_rows=prior_rows, a_hat=a_hat)
    return ds, model


def test_config_validation():
    with pytest.raises(ConfigInvalid):
        tiny_cfg(gnn_hidden=0).validate()
    with pytest.raises(ConfigInvalid):
        tiny_cfg(feature_width=7).validate()
    with pytest.raises(ConfigInvalid):
        tiny_cfg(dropout_decoder=1.0).validate()
    with pytest.raises(ConfigInvalid):
        tiny_cfg(dropout_head=-0.1).validate()
    with pytest.raises(ConfigInvalid):
        tiny_cfg(propagation="spectral").validate()
    EncoderConfig().validate()


def test_random_feature_rows_layout():
    rows = random_feature_rows(np.random.default_rng(0), 200, 16, gamma=12.0)
    modulus, phase = rows[:, :8], rows[:, 8:]
    assert np.all(np.abs(modulus) <= 0.5 * 12.0 / 8)
    assert np.all((phase >= 0.0) & (phase < 2 * np.pi))


def test_init_model_parameter_inventory():
    ds, model = tiny_model()
    names = set(model.store.names(""))
    assert "encoder/node_features" in names
    assert model.store["encoder/node_features"].data.shape == (7, 8)
    assert model.store["encoder/gnn1_w"].data.shape == (8, 8)
    assert model.store["decoder/cat2/w3"].data.shape == (128, 2)
    assert model.store["decoder/cat1/b1"].data.shape == (1, 8)
    assert "head/w" not in model.store
    assert model.num_concepts == 7 and model.num_diseases == 3
    assert model.cat_sizes == (1, 2, 1)


def test_init_model_prior_rows():
    prior = {1: np.full(8, 0.25), 5: np.arange(8) / 10.0}
    ds, model = tiny_model(seed=4, prior_rows=prior)
    ds2, plain = tiny_model(seed=4)
    feats = model.store["encoder/node_features"].data
    assert np.array_equal(feats[1], prior[1])
    assert np.array_equal(feats[5], prior[5])
    others = [i for i in range(7) if i not in prior]
    assert np.array_equal(feats[others], plain.store["encoder/node_features"].data[others])


def test_init_model_rejects_bad_inputs():
    ds = tiny_ehr()
    a, a_hat = assemble_adjacency(build_cooccurrence(ds), 0.5)
    mask = neighbor_mask(a)
    with pytest.raises(ShapeMismatch):
        init_model(tiny_cfg(), mask[:5], 3, (1, 2, 1), seed=0, a_hat=a_hat)
    with pytest.raises(ConfigInvalid):
        init_model(tiny_cfg(), mask, 3, (1, 2, 1), seed=0, a_hat=None)
    with pytest.raises(MissingFeatureRow):
        init_model(tiny_cfg(), mask, 3, (1, 2, 1), seed=0, a_hat=a_hat,
                   prior_rows={9: np.zeros(8)})
    with pytest.raises(ShapeMismatch):
        init_model(tiny_cfg(), mask, 3, (1, 2, 1), seed=0, a_hat=a_hat,
                   prior_rows={0: np.zeros(7)})


def test_add_head_widths():
    ds, model = tiny_model()
    add_head(model, "diagnosis", "direct", seed=1)
    assert model.store["head/w"].data.shape == (8, 3)
    ds, model = tiny_model()
    add_head(model, "diagnosis", "finetune", seed=1)
    assert model.store["head/w"].data.shape == (8 + 3 * 128, 3)
    ds, model = tiny_model()
    add_head(model, "hf", "direct", seed=1)
    assert model.store["head/w"].data.shape == (8, 1)


def test_node_matrix_shape():
    ds, model = tiny_model()
    assert node_matrix(model).data.shape == (7, 8)


def test_attention_weights_normalized():
    ds, model = tiny_model()
    batch = [[(0, 2, 3, 6), (1, 4)], [(2,)]]
    enc = encode(model, batch, train=False, rng=np.random.default_rng(0))
    assert enc.patients.data.shape == (2, 8)
    for seg in range(3):
        total = enc.code_weights[enc.adm_segments == seg].sum()
        assert abs(total - 1.0) < 1e-6
    for pat in range(2):
        total = enc.adm_weights[enc.patient_segments == pat].sum()
        assert abs(total - 1.0) < 1e-6


def test_encode_permutation_invariance():
    ds, model = tiny_model()
    rng = np.random.default_rng(0)
    forward = encode(model, [[(0, 2, 3, 6)]], train=False, rng=rng).patients.data
    shuffled = encode(model, [[(6, 3, 0, 2)]], train=False, rng=rng).patients.data
    assert np.allclose(forward, shuffled, atol=1e-12)


def test_encode_rejects_bad_batches():
    ds, model = tiny_model()
    rng = np.random.default_rng(0)
    with pytest.raises(ShapeMismatch):
        encode(model, [[]], train=False, rng=rng)
    with pytest.raises(ShapeMismatch):
        encode(model, [[()]], train=False, rng=rng)
    with pytest.raises(MissingFeatureRow):
        encode(model, [[(0, 7)]], train=False, rng=rng)


def test_proxy_joint_train_scope():
    ds, model = tiny_model()
    examples = proxy_examples(ds)
    before_att = model.store["encoder/gnn1_a"].data.copy()
    before_feat = model.store["encoder/node_features"].data.copy()
    history = proxy_joint_train(model, examples, epochs=2, lr=1e-2, batch_size=2, seed=0)
    assert len(history) == 2
    # fixed-matrix propagation never touches the attention vectors
    assert np.array_equal(model.store["encoder/gnn1_a"].data, before_att)
    assert not np.array_equal(model.store["encoder/node_features"].data, before_feat)


def test_proxy_individual_train_freezes_encoder():
    ds, model = tiny_model()
    examples = proxy_examples(ds)
    proxy_joint_train(model, examples, epochs=1, lr=1e-2, batch_size=2, seed=0)
    encoder_before = {name: model.store[name].data.copy()
                      for name in model.store.names("encoder/")}
    decoder_before = model.store["decoder/cat1/w1"].data.copy()
    history = proxy_individual_train(model, examples, epochs=2, lr=1e-2,
                                     batch_size=2, seed=1)
    assert sorted(history) == [1, 2, 3] and all(len(v) == 2 for v in history.values())
    for name, arr in encoder_before.items():
        assert model.store[name].data.tobytes() == arr.tobytes()
    assert not np.array_equal(model.store["decoder/cat1/w1"].data, decoder_before)


def test_task_train_requires_head_and_known_task():
    ds, model = tiny_model()
    examples = downstream_examples(ds, hf_codes=("101",))
    with pytest.raises(CheckpointMissing):
        task_train(model, examples, "diagnosis", "direct", epochs=1)
    with pytest.raises(CheckpointMissing):
        predict(model, examples, "direct")
    add_head(model, "diagnosis", "direct", seed=1)
    with pytest.raises(ConfigInvalid):
        task_train(model, examples, "prognosis", "direct", epochs=1)
    with pytest.raises(ConfigInvalid):
        task_train(model, examples, "diagnosis", "sideways", epochs=1)


def test_task_train_first_loss_matches_reference():
    ds, model = tiny_model(seed=2)
    examples = downstream_examples(ds, hf_codes=("101",))
    add_head(model, "diagnosis", "direct", seed=3)
    probs = predict(model, examples, "direct")
    truth = np.zeros((len(examples), 3))
    for i, ex in enumerate(examples):
        truth[i, list(ex.target_diseases)] = 1.0
    reference = -np.mean(truth * np.log(probs) + (1 - truth) * np.log1p(-probs))
    history = task_train(model, examples, "diagnosis", "direct", epochs=1,
                         lr=1e-3, batch_size=len(examples), seed=0)
    assert abs(history[0] - reference) < 1e-9


def test_task_train_reduces_loss():
    ds, model = tiny_model(seed=5)
    examples = downstream_examples(ds, hf_codes=("101",))
    add_head(model, "diagnosis", "finetune", seed=6)
    history = task_train(model, examples, "diagnosis", "finetune", epochs=8,
                         lr=5e-3, batch_size=2, seed=7)
    assert history[-1] < history[0]
    probs = predict(model, examples, "finetune")
    assert probs.shape == (len(examples), 3)
    assert np.all((probs > 0) & (probs < 1))
    assert np.array_equal(probs, predict(model, examples, "finetune"))


def test_rt_flag_changes_inputs():
    ds, model = tiny_model(seed=8)
    examples = downstream_examples(ds, hf_codes=("101",))
    assert any(ex.target_lab_nodes for ex in examples)
    add_head(model, "diagnosis", "direct", seed=9)
    with_rt = predict(model, examples, "direct", rt=True)
    without = predict(model, examples, "direct", rt=False)
    assert not np.array_equal(with_rt, without)


def test_hf_task_shape():
    ds, model = tiny_model(seed=10)
    examples = downstream_examples(ds, hf_codes=("101",))
    add_head(model, "hf", "direct", seed=11)
    task_train(model, examples, "hf", "direct", epochs=2, lr=1e-3, batch_size=2, seed=12)
    probs = predict(model, examples, "direct")
    assert probs.shape == (len(examples), 1)


def test_save_load_round_trip(tmp_path):
    ds, model = tiny_model(seed=13)
    examples = downstream_examples(ds, hf_codes=("101",))
    add_head(model, "diagnosis", "direct", seed=14)
    task_train(model, examples, "diagnosis", "direct", epochs=1, lr=1e-3,
               batch_size=2, seed=15)
    path = tmp_path / "model.ckpt"
    save_model(model, path, meta={"note": "tiny"})
    loaded, meta = load_model(path, model.mask, a_hat=model.a_hat)
    assert meta["note"] == "tiny"
    assert loaded.config == model.config
    assert loaded.num_diseases == 3 and loaded.cat_sizes == (1, 2, 1)
    for name in model.store.names(""):
        assert loaded.store[name].data.tobytes() == model.store[name].data.tobytes()
    # optimizer state survives: one more epoch lands on identical parameters
    task_train(model, examples, "diagnosis", "direct", epochs=1, lr=1e-3,
               batch_size=2, seed=16)
    task_train(loaded, examples, "diagnosis", "direct", epochs=1, lr=1e-3,
               batch_size=2, seed=16)
    for name in model.store.names(""):
        assert loaded.store[name].data.tobytes() == model.store[name].data.tobytes()


def test_load_model_checks_mask_and_config(tmp_path):
    ds, model = tiny_model(seed=17)
    path = tmp_path / "model.ckpt"
    save_model(model, path)
    with pytest.raises(ShapeMismatch):
        load_model(path, np.zeros((5, 5), dtype=bool))
    with pytest.raises(ConfigMismatch):
        load_model(path, model.mask, a_hat=model.a_hat,
                   expected_config={"feature_width": 16})
