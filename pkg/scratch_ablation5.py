"""Scratch: probe (a) strong pretraining and (b) small width, rt=True, phi=0.999."""
import time
import numpy as np

from dualmar.ehr import (SyntheticConfig, generate_synthetic, planted_structure,
                         split_dataset, proxy_examples, downstream_examples,
                         synthetic_disease_kg)
from dualmar.kg import normalize_kg
from dualmar.kge import KgeConfig, train_kge, export_entity_embeddings
from dualmar.cograph import build_cooccurrence, assemble_adjacency, neighbor_mask
from dualmar.metrics import weighted_f1
from dualmar.pipeline import (EncoderConfig, init_model, add_head,
                              proxy_joint_train, proxy_individual_train,
                              task_train, predict, encode, decoder_forward)

PHI = 0.999
t0 = time.time()
cfg = SyntheticConfig(patients=750, num_diseases=48, lab_sizes=(42, 29, 4),
                      clusters=4, affinity=0.8, progression=0.8, seed=202)
ds = generate_synthetic(cfg)
plan = planted_structure(cfg)
train, valid, test = split_dataset(ds, (1 - 1/15 - 2/15, 1/15, 2/15), seed=0)
px = proxy_examples(train)
dn_tr = downstream_examples(train, plan.hf_codes)
dn_te = downstream_examples(test, plan.hf_codes)
truth = [e.target_diseases for e in dn_te]
cat_sizes = tuple(len(v) for v in ds.labs_by_category().values())

B_full = build_cooccurrence(train)
A_f, Ah_f = assemble_adjacency(B_full, PHI)
mask_f = neighbor_mask(A_f)
B_dis = build_cooccurrence(train, include_disease_lab=False)
A_d, Ah_d = assemble_adjacency(B_dis, PHI)
mask_d = neighbor_mask(A_d)

def make_prior(width):
    kg = normalize_kg(synthetic_disease_kg(cfg))
    ids = sorted(kg.entities)
    id2idx = {e: i for i, e in enumerate(ids)}
    rel2idx = {r: i for i, r in enumerate(sorted(kg.relations))}
    trip = np.array([[id2idx[t.head], rel2idx[t.relation], id2idx[t.tail]]
                     for t in kg.triples], dtype=np.int64)
    kcfg = KgeConfig(k=width // 2, gamma=6.0, lam=0.5, negatives=16, steps=2000,
                     lr=1e-2, batch_size=64)
    table, _ = train_kge(trip, len(ids), len(rel2idx), kcfg, seed=11)
    rows = export_entity_embeddings(table)
    code_to_row = {kg.entities[e].code: rows[id2idx[e]] for e in ids
                   if kg.entities[e].code is not None}
    return {i: code_to_row[c] for i, c in enumerate(ds.disease_codes)
            if c in code_to_row}

PRIORS = {w: make_prior(w) for w in (128, 32)}
print(f"priors ready ({time.time()-t0:.0f}s)", flush=True)

LR = 4e-3
CHUNK, N_CHUNKS = 10, 6

def dead_relu_fraction(model):
    rng = np.random.default_rng(0)
    enc_r = encode(model, [e.inputs for e in dn_tr[:64]], train=False, rng=rng)
    return float((enc_r.patients.data <= 0).all(axis=0).mean())

def proxy_quality(model):
    """Mean BCE of the three decoders on train proxy targets vs all-marginal baseline."""
    rng = np.random.default_rng(0)
    enc_r = encode(model, [e.inputs for e in px], train=False, rng=rng)
    tot, base = 0.0, 0.0
    for cat in (1, 2, 3):
        width = model.cat_sizes[cat - 1]
        y = np.zeros((len(px), width))
        for i, ex in enumerate(px):
            for j in ex.targets[cat - 1]:
                y[i, j] = 1.0
        logits, _ = decoder_forward(model, cat, enc_r.patients, train=False, rng=rng)
        p = 1.0 / (1.0 + np.exp(-logits.data))
        eps = 1e-12
        tot += float(-(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)).mean())
        m = y.mean(axis=0, keepdims=True)
        base += float(-(y * np.log(m + eps) + (1 - y) * np.log(1 - m + eps)).mean())
    return tot / 3.0, base / 3.0

def run_arm(arm, seed, width, ep_j, ep_i, report_proxy=False):
    e = EncoderConfig(feature_width=width, propagation="normalized",
                      dropout_attention=0.1, dropout_decoder=0.1, dropout_head=0.1)
    mask, ah = (mask_d, Ah_d) if arm == "disease_only" else (mask_f, Ah_f)
    dr = None if arm == "random_init" else PRIORS[width]
    model = init_model(e, mask, ds.num_diseases, cat_sizes, seed=seed,
                       disease_rows=dr, a_hat=ah)
    path = "direct" if arm == "direct" else "finetune"
    if arm != "direct":
        proxy_joint_train(model, px, epochs=ep_j, lr=2e-3, batch_size=32,
                          seed=1000 + seed, decay=0.999)
        proxy_individual_train(model, px, epochs=ep_i, lr=2e-3, batch_size=32,
                               seed=2000 + seed)
        if report_proxy:
            q, b = proxy_quality(model)
            print(f"    [proxy seed={seed} w={width} ep_j={ep_j}] bce={q:.4f} "
                  f"marginal={b:.4f} dead={dead_relu_fraction(model):.2f}", flush=True)
    add_head(model, "diagnosis", path, seed=4000 + seed)
    wf = []
    for chunk in range(N_CHUNKS):
        task_train(model, dn_tr, "diagnosis", path, epochs=CHUNK, lr=LR,
                   batch_size=32, seed=3000 + seed + 17 * chunk, decay=0.999,
                   rt=True)
        probs = predict(model, dn_te, path, rt=True)
        wf.append(weighted_f1(probs, truth))
    return wf

print("== probe A: strong pretraining (width 128, joint 40) ==", flush=True)
for arm, ep_j, ep_i in (("full", 40, 5), ("direct", 0, 0)):
    for s in (11, 23):
        wf = run_arm(arm, s, 128, ep_j, ep_i, report_proxy=(arm == "full"))
        curve = " ".join(f"{(i+1)*CHUNK}:{v:.3f}" for i, v in enumerate(wf))
        print(f"  A {arm} seed={s}: {curve} ({time.time()-t0:.0f}s)", flush=True)

print("== probe B: width 32, joint 40 ==", flush=True)
for arm in ("full", "direct", "disease_only", "random_init"):
    ep_j, ep_i = (0, 0) if arm == "direct" else (40, 5)
    for s in (11, 23):
        wf = run_arm(arm, s, 32, ep_j, ep_i)
        curve = " ".join(f"{(i+1)*CHUNK}:{v:.3f}" for i, v in enumerate(wf))
        print(f"  B {arm} seed={s}: {curve} ({time.time()-t0:.0f}s)", flush=True)
print(f"total {time.time()-t0:.0f}s")
