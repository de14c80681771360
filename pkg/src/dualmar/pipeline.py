"""Two-tier attention encoder over the concept graph, proxy-task
pretraining, and the downstream diagnosis / heart-failure training paths.

The encoder turns a patient's admission history into one vector: node
features flow through two graph layers, a code-level attention pools each
admission, a projection resizes it, and an admission-level attention pools
the stay sequence.  Pretraining drives three per-category lab decoders whose
128-wide penultimate activations are the refined lab embeddings consumed by
the finetune head.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np

from .ehr import DownstreamExample, ProxyExample
from .errors import (CheckpointMissing, ConfigInvalid, FrozenViolation,
                     MissingFeatureRow, ShapeMismatch)
from .nn import autodiff as ad
from .nn.autodiff import Tensor
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.layers import glorot_uniform, graph_attention_layer, row_normalized_propagation
from .nn.optimizer import ParamStore

LAB_EMBED_WIDTH = 128


@dataclass(frozen=True)
class EncoderConfig:
    feature_width: int = 128      # node feature width 2k
    gnn_hidden: int = 256
    admission_width: int = 256    # m: GNN output width = admission vector width
    attention_dim: int = 256      # a and b, the two attention score widths
    patient_width: int = 256      # p
    decoder_hidden: int = 256
    dropout_attention: float = 0.2
    dropout_decoder: float = 0.4
    dropout_head: float = 0.5
    propagation: str = "attention"  # "attention" | "normalized"
    feature_init_gamma: float = 12.0

    def validate(self) -> None:
        dims = (self.feature_width, self.gnn_hidden, self.admission_width,
                self.attention_dim, self.patient_width, self.decoder_hidden)
        if any(d < 1 for d in dims):
            raise ConfigInvalid(f"all widths must be positive, got {dims}")
        if self.feature_width % 2 != 0:
            raise ConfigInvalid("feature_width must be even (modulus and phase halves)")
        for rate in (self.dropout_attention, self.dropout_decoder, self.dropout_head):
            if not 0.0 <= rate < 1.0:
                raise ConfigInvalid(f"dropout rate {rate} outside [0, 1)")
        if self.propagation not in ("attention", "normalized"):
            raise ConfigInvalid(f"unknown propagation kind {self.propagation!r}")


@dataclass
class Model:
    config: EncoderConfig
    store: ParamStore
    mask: np.ndarray                 # bool (|C|, |C|) neighbor mask (no diagonal)
    a_hat: np.ndarray | None         # row-normalized adjacency for "normalized" mode
    num_diseases: int
    cat_sizes: tuple[int, int, int]

    @property
    def num_concepts(self) -> int:
        return self.mask.shape[0]

    def structural_config(self) -> dict:
        cfg = asdict(self.config)
        cfg.update(num_concepts=int(self.num_concepts),
                   num_diseases=int(self.num_diseases),
                   cat_sizes=list(self.cat_sizes))
        return cfg


def random_feature_rows(rng: np.random.Generator, count: int, width: int,
                        gamma: float) -> np.ndarray:
    """Rows matching the polar-embedding layout: the first half is drawn like
    a modulus table, the second half like phases in [0, 2pi)."""
    k = width // 2
    bound = 0.5 * gamma / k
    modulus = rng.uniform(-bound, bound, size=(count, k))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(count, k))
    return np.concatenate([modulus, phase], axis=1)


def init_model(config: EncoderConfig, mask: np.ndarray, num_diseases: int,
               cat_sizes: Sequence[int], seed: int,
               prior_rows: dict[int, np.ndarray] | None = None,
               a_hat: np.ndarray | None = None) -> Model:
    """Fresh parameter store; node features come from `prior_rows`
    (polar-embedding exports, keyed by node id) where given, every other
    row is random."""
    config.validate()
    if mask.ndim != 2 or mask.shape[0] != mask.shape[1]:
        raise ShapeMismatch(f"mask must be square, got {mask.shape}")
    if config.propagation == "normalized" and a_hat is None:
        raise ConfigInvalid("normalized propagation needs the row-normalized adjacency")
    num_concepts = mask.shape[0]
    rng = np.random.default_rng(seed)
    features = random_feature_rows(rng, num_concepts, config.feature_width,
                                   config.feature_init_gamma)
    for node, row in (prior_rows or {}).items():
        if not 0 <= node < num_concepts:
            raise MissingFeatureRow(f"prior row for node {node} outside 0..{num_concepts - 1}")
        if row.shape != (config.feature_width,):
            raise ShapeMismatch(
                f"prior row for node {node} has width {row.shape}, expected {config.feature_width}")
        features[node] = row
    store = ParamStore()
    store.add("encoder/node_features", features)
    store.add("encoder/gnn1_w", glorot_uniform(rng, (config.feature_width, config.gnn_hidden)))
    store.add("encoder/gnn1_a", glorot_uniform(rng, (2 * config.gnn_hidden, 1)))
    store.add("encoder/gnn2_w", glorot_uniform(rng, (config.gnn_hidden, config.admission_width)))
    store.add("encoder/gnn2_a", glorot_uniform(rng, (2 * config.admission_width, 1)))
    store.add("encoder/code_att_w", glorot_uniform(rng, (config.admission_width, config.attention_dim)))
    store.add("encoder/code_att_u", glorot_uniform(rng, (config.attention_dim, 1)))
    store.add("encoder/project_w", glorot_uniform(rng, (config.admission_width, config.patient_width)))
    store.add("encoder/adm_att_w", glorot_uniform(rng, (config.patient_width, config.attention_dim)))
    store.add("encoder/adm_att_u", glorot_uniform(rng, (config.attention_dim, 1)))
    for cat, size in zip((1, 2, 3), cat_sizes):
        store.add(f"decoder/cat{cat}/w1", glorot_uniform(rng, (config.patient_width, config.decoder_hidden)))
        store.add(f"decoder/cat{cat}/b1", np.zeros((1, config.decoder_hidden)))
        store.add(f"decoder/cat{cat}/w2", glorot_uniform(rng, (config.decoder_hidden, LAB_EMBED_WIDTH)))
        store.add(f"decoder/cat{cat}/b2", np.zeros((1, LAB_EMBED_WIDTH)))
        store.add(f"decoder/cat{cat}/w3", glorot_uniform(rng, (LAB_EMBED_WIDTH, size)))
        store.add(f"decoder/cat{cat}/b3", np.zeros((1, size)))
    return Model(config, store, np.asarray(mask, dtype=bool), a_hat,
                 int(num_diseases), tuple(int(s) for s in cat_sizes))


def add_head(model: Model, task: str, path: str, seed: int) -> None:
    """Attach the task head: output width |D| for diagnosis, 1 for the binary
    task; input width p for the direct path, 3*128+p for the finetune path."""
    out_width = model.num_diseases if task == "diagnosis" else 1
    in_width = model.config.patient_width
    if path == "finetune":
        in_width += 3 * LAB_EMBED_WIDTH
    rng = np.random.default_rng(seed)
    model.store.add("head/w", glorot_uniform(rng, (in_width, out_width)))


# ---------------------------------------------------------------- encoding

@dataclass
class EncodeResult:
    patients: Tensor                 # (n_patients, p)
    code_weights: np.ndarray         # (total codes, 1) softmax within admissions
    adm_weights: np.ndarray          # (total admissions, 1) softmax within patients
    adm_segments: np.ndarray
    patient_segments: np.ndarray


def _flatten(batch: Sequence[Sequence[Sequence[int]]]) -> tuple[np.ndarray, np.ndarray, np.ndarray, int, int]:
    codes: list[int] = []
    adm_seg: list[int] = []
    pat_seg: list[int] = []
    adm_index = 0
    for p_index, patient in enumerate(batch):
        if not patient:
            raise ShapeMismatch("a patient with zero admissions cannot be encoded")
        for admission in patient:
            if not admission:
                raise ShapeMismatch("an admission with zero codes cannot be encoded")
            codes.extend(admission)
            adm_seg.extend([adm_index] * len(admission))
            pat_seg.append(p_index)
            adm_index += 1
    return (np.asarray(codes, dtype=np.int64), np.asarray(adm_seg, dtype=np.int64),
            np.asarray(pat_seg, dtype=np.int64), adm_index, len(batch))


def node_matrix(model: Model) -> Tensor:
    """Concept-node representations after the graph layers."""
    store, cfg = model.store, model.config
    h = store["encoder/node_features"]
    if cfg.propagation == "attention":
        h = graph_attention_layer(h, model.mask, store["encoder/gnn1_w"], store["encoder/gnn1_a"])
        h = graph_attention_layer(h, model.mask, store["encoder/gnn2_w"], store["encoder/gnn2_a"])
    else:
        h = row_normalized_propagation(h, model.a_hat, store["encoder/gnn1_w"])
        h = row_normalized_propagation(h, model.a_hat, store["encoder/gnn2_w"])
    return h


def encode(model: Model, batch: Sequence[Sequence[Sequence[int]]], train: bool,
           rng: np.random.Generator) -> EncodeResult:
    """Patient vectors for a batch of admission-code histories."""
    codes, adm_seg, pat_seg, n_adm, n_pat = _flatten(batch)
    if codes.size and (codes.min() < 0 or codes.max() >= model.num_concepts):
        bad = codes[(codes < 0) | (codes >= model.num_concepts)][0]
        raise MissingFeatureRow(f"code node {bad} has no feature row (|C|={model.num_concepts})")
    store, cfg = model.store, model.config
    x = node_matrix(model)
    rows = ad.gather_rows(x, codes)
    rows = ad.dropout(rows, cfg.dropout_attention, rng, train)
    z = ad.tanh(ad.matmul(rows, store["encoder/code_att_w"]))
    scores = ad.matmul(z, store["encoder/code_att_u"])
    alpha = ad.segment_softmax(scores, adm_seg, n_adm)
    v = ad.segment_sum(ad.mul(alpha, rows), adm_seg, n_adm)
    v = ad.relu(ad.matmul(v, store["encoder/project_w"]))
    v = ad.dropout(v, cfg.dropout_attention, rng, train)
    z2 = ad.tanh(ad.matmul(v, store["encoder/adm_att_w"]))
    scores2 = ad.matmul(z2, store["encoder/adm_att_u"])
    beta = ad.segment_softmax(scores2, pat_seg, n_pat)
    patients = ad.segment_sum(ad.mul(beta, v), pat_seg, n_pat)
    return EncodeResult(patients, alpha.data.copy(), beta.data.copy(), adm_seg, pat_seg)


def decoder_forward(model: Model, cat: int, patients: Tensor, train: bool,
                    rng: np.random.Generator) -> tuple[Tensor, Tensor]:
    """(logits over the category's labs, 128-wide penultimate activation)."""
    store, cfg = model.store, model.config
    h1 = ad.relu(ad.add(ad.matmul(patients, store[f"decoder/cat{cat}/w1"]),
                        store[f"decoder/cat{cat}/b1"]))
    h1 = ad.dropout(h1, cfg.dropout_decoder, rng, train)
    h2 = ad.relu(ad.add(ad.matmul(h1, store[f"decoder/cat{cat}/w2"]),
                        store[f"decoder/cat{cat}/b2"]))
    h2_dropped = ad.dropout(h2, cfg.dropout_decoder, rng, train)
    logits = ad.add(ad.matmul(h2_dropped, store[f"decoder/cat{cat}/w3"]),
                    store[f"decoder/cat{cat}/b3"])
    return logits, h2


def lab_embeddings(model: Model, patients: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Refined per-category lab embeddings: the decoders' penultimate
    activations at the given patient vectors, dropout disabled."""
    rng = np.random.default_rng(0)  # unused in eval mode
    outs = []
    for cat in (1, 2, 3):
        _, h2 = decoder_forward(model, cat, patients, train=False, rng=rng)
        outs.append(h2)
    return outs[0], outs[1], outs[2]


# ---------------------------------------------------------------- training

def _multi_hot(index_lists: Sequence[Sequence[int]], width: int) -> np.ndarray:
    arr = np.zeros((len(index_lists), width))
    for i, ids in enumerate(index_lists):
        for j in ids:
            arr[i, int(j)] = 1.0
    return arr


def proxy_loss(model: Model, examples: Sequence[ProxyExample], train: bool,
               rng: np.random.Generator) -> Tensor:
    """(1/3) * sum over categories of mean BCE-with-logits on lab targets."""
    enc = encode(model, [ex.inputs for ex in examples], train, rng)
    total: Tensor | None = None
    for cat in (1, 2, 3):
        width = model.cat_sizes[cat - 1]
        logits, _ = decoder_forward(model, cat, enc.patients, train, rng)
        targets = _multi_hot([ex.targets[cat - 1] for ex in examples], width)
        loss = ad.mean_all(ad.bce_with_logits(logits, targets))
        total = loss if total is None else ad.add(total, loss)
    return ad.mul(total, 1.0 / 3.0)


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _encoder_param_names(model: Model) -> list[str]:
    """Encoder parameters that appear in the forward graph.  The fixed-matrix
    propagation never reads the per-layer attention vectors."""
    names = model.store.names("encoder/")
    if model.config.propagation == "normalized":
        names = [n for n in names if n not in ("encoder/gnn1_a", "encoder/gnn2_a")]
    return names


def proxy_joint_train(model: Model, examples: Sequence[ProxyExample], epochs: int,
                      lr: float = 1e-3, batch_size: int = 32, seed: int = 0,
                      decay: float = 0.95) -> list[float]:
    """Joint encoder+decoder pretraining; returns the mean loss per epoch."""
    rng = np.random.default_rng(seed)
    trainable = _encoder_param_names(model) + model.store.names("decoder/")
    history: list[float] = []
    for epoch in range(epochs):
        epoch_losses = []
        for batch_idx in _batches(len(examples), batch_size, rng):
            batch = [examples[i] for i in batch_idx]
            model.store.zero_grads()
            loss = proxy_loss(model, batch, train=True, rng=rng)
            loss.backward()
            model.store.adam_step(lr * decay ** epoch, names=trainable)
            epoch_losses.append(float(loss.data))
        history.append(float(np.mean(epoch_losses)))
    return history


def _encoder_fingerprint(model: Model) -> bytes:
    digest = hashlib.sha256()
    for name in model.store.names("encoder/"):
        digest.update(name.encode())
        digest.update(model.store[name].data.tobytes())
    return digest.digest()


def proxy_individual_train(model: Model, examples: Sequence[ProxyExample], epochs: int,
                           lr: float = 1e-3, batch_size: int = 32, seed: int = 0,
                           decay: float = 0.95) -> dict[int, list[float]]:
    """Per-category decoder refinement against a frozen encoder.

    Patient vectors are computed once in eval mode and reused as constants;
    each decoder trains alone, in category order, and the encoder is verified
    bit-identical afterwards.
    """
    rng = np.random.default_rng(seed)
    before = _encoder_fingerprint(model)
    enc = encode(model, [ex.inputs for ex in examples], train=False, rng=rng)
    cached = ad.constant(enc.patients.data.copy())
    history: dict[int, list[float]] = {}
    encoder_names = set(model.store.names("encoder/"))
    for cat in (1, 2, 3):
        width = model.cat_sizes[cat - 1]
        target_all = _multi_hot([ex.targets[cat - 1] for ex in examples], width)
        losses: list[float] = []
        for epoch in range(epochs):
            epoch_losses = []
            for batch_idx in _batches(len(examples), batch_size, rng):
                rows = ad.gather_rows(cached, batch_idx)
                model.store.zero_grads()
                logits, _ = decoder_forward(model, cat, rows, train=True, rng=rng)
                loss = ad.mean_all(ad.bce_with_logits(logits, target_all[batch_idx]))
                loss.backward()
                touched = {name for name in encoder_names
                           if model.store[name].grad is not None}
                if touched:
                    raise FrozenViolation(
                        f"encoder parameters {sorted(touched)} received gradients during "
                        "the individual decoder phase")
                model.store.adam_step(lr * decay ** epoch,
                                      names=model.store.names(f"decoder/cat{cat}/"))
                epoch_losses.append(float(loss.data))
            losses.append(float(np.mean(epoch_losses)))
        history[cat] = losses
    after = _encoder_fingerprint(model)
    if after != before:
        raise FrozenViolation("encoder parameters changed during the individual decoder phase")
    return history


def _head_features(model: Model, patients: Tensor, path: str, train: bool,
                   rng: np.random.Generator) -> Tensor:
    if path == "finetune":
        parts = []
        for cat in (1, 2, 3):
            _, h2 = decoder_forward(model, cat, patients, train, rng)
            parts.append(h2)
        features = ad.concat(parts + [patients], axis=1)
    elif path == "direct":
        features = patients
    else:
        raise ConfigInvalid(f"unknown head path {path!r}")
    return ad.dropout(features, model.config.dropout_head, rng, train)


def _downstream_inputs(examples: Sequence[DownstreamExample], rt: bool) -> list[list[tuple[int, ...]]]:
    batch = []
    for ex in examples:
        adms = list(ex.inputs)
        if rt and ex.target_lab_nodes:
            adms.append(ex.target_lab_nodes)
        batch.append(adms)
    return batch


def _downstream_targets(examples: Sequence[DownstreamExample], task: str,
                        num_diseases: int) -> np.ndarray:
    if task == "diagnosis":
        return _multi_hot([ex.target_diseases for ex in examples], num_diseases)
    if task == "hf":
        return np.array([[float(ex.hf_label)] for ex in examples])
    raise ConfigInvalid(f"unknown task {task!r}")


def _trainable_names(model: Model, path: str) -> list[str]:
    """Parameters that participate in the given head path's graph.

    The finetune features use the decoders up to their penultimate layer, so
    the per-category output layers w3/b3 stay out; the direct path touches no
    decoder at all.
    """
    names = _encoder_param_names(model) + ["head/w"]
    if path == "finetune":
        names += [n for n in model.store.names("decoder/")
                  if n.rsplit("/", 1)[1] in ("w1", "b1", "w2", "b2")]
    return names


def task_train(model: Model, examples: Sequence[DownstreamExample], task: str,
               path: str, epochs: int, lr: float = 1e-3, batch_size: int = 32,
               seed: int = 0, decay: float = 0.95, rt: bool = False) -> list[float]:
    """Downstream training with BCE-with-logits; encoder, decoders (through
    the embedding layer), and head all receive updates."""
    if "head/w" not in model.store:
        raise CheckpointMissing("no task head attached; call add_head first")
    if task not in ("diagnosis", "hf"):
        raise ConfigInvalid(f"unknown task {task!r}")
    rng = np.random.default_rng(seed)
    inputs = _downstream_inputs(examples, rt)
    targets = _downstream_targets(examples, task, model.num_diseases)
    trainable = _trainable_names(model, path)
    history: list[float] = []
    for epoch in range(epochs):
        epoch_losses = []
        for batch_idx in _batches(len(examples), batch_size, rng):
            batch_inputs = [inputs[i] for i in batch_idx]
            model.store.zero_grads()
            enc = encode(model, batch_inputs, train=True, rng=rng)
            features = _head_features(model, enc.patients, path, train=True, rng=rng)
            logits = ad.matmul(features, model.store["head/w"])
            loss = ad.mean_all(ad.bce_with_logits(logits, targets[batch_idx]))
            loss.backward()
            model.store.adam_step(lr * decay ** epoch, names=trainable)
            epoch_losses.append(float(loss.data))
        history.append(float(np.mean(epoch_losses)))
    return history


def predict(model: Model, examples: Sequence[DownstreamExample], path: str,
            rt: bool = False) -> np.ndarray:
    """Probabilities, eval mode (dropout off, deterministic)."""
    if "head/w" not in model.store:
        raise CheckpointMissing("no task head attached; call add_head first")
    rng = np.random.default_rng(0)
    inputs = _downstream_inputs(examples, rt)
    enc = encode(model, inputs, train=False, rng=rng)
    features = _head_features(model, enc.patients, path, train=False, rng=rng)
    logits = ad.matmul(features, model.store["head/w"])
    return ad.sigmoid_array(logits.data)


# ------------------------------------------------------------- persistence

def save_model(model: Model, path, meta: dict | None = None) -> None:
    arrays = model.store.state_arrays()
    meta = dict(meta or {})
    meta["adam_steps"] = model.store.step_counts()
    save_checkpoint(path, arrays, model.structural_config(), meta)


def load_model(path, mask: np.ndarray, a_hat: np.ndarray | None = None,
               expected_config: dict | None = None) -> tuple[Model, dict]:
    arrays, config, meta = load_checkpoint(path, expected_config=expected_config)
    enc_fields = {f: config[f] for f in
                  ("feature_width", "gnn_hidden", "admission_width", "attention_dim",
                   "patient_width", "decoder_hidden", "dropout_attention",
                   "dropout_decoder", "dropout_head", "propagation",
                   "feature_init_gamma")}
    enc = EncoderConfig(**enc_fields)
    store = ParamStore.from_arrays(arrays, meta.get("adam_steps", {}))
    model = Model(enc, store, np.asarray(mask, dtype=bool), a_hat,
                  int(config["num_diseases"]), tuple(config["cat_sizes"]))
    if model.num_concepts != int(config["num_concepts"]):
        raise ShapeMismatch(
            f"mask has {model.num_concepts} nodes, checkpoint expects {config['num_concepts']}")
    return model, meta
