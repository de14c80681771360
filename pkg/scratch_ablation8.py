"""Scratch: rt=True regime, affinity 0.9. History-only prediction should make
pretraining, lab nodes, and the prior matter."""
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
                              task_train, predict)

t0 = time.time()
cfg = SyntheticConfig(patients=750, num_diseases=96, lab_sizes=(42, 29, 4),
                      clusters=8, affinity=0.9, progression=0.8, seed=202)
ds = generate_synthetic(cfg)
plan = planted_structure(cfg)
train, valid, test = split_dataset(ds, (1 - 1/15 - 2/15, 1/15, 2/15), seed=0)
px = proxy_examples(train)
dn_tr = downstream_examples(train, plan.hf_codes)
dn_te = downstream_examples(test, plan.hf_codes)
truth = [e.target_diseases for e in dn_te]
cat_sizes = tuple(len(v) for v in ds.labs_by_category().values())

B_full = build_cooccurrence(train)
B_dis = build_cooccurrence(train, include_disease_lab=False)
GRAPHS = {}
for phi in (0.999,):
    A_f, Ah_f = assemble_adjacency(B_full, phi)
    A_d, Ah_d = assemble_adjacency(B_dis, phi)
    GRAPHS[phi] = {"full": (neighbor_mask(A_f), Ah_f),
                   "disease_only": (neighbor_mask(A_d), Ah_d)}

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

PRIOR = make_prior(128)
print(f"prior ready ({time.time()-t0:.0f}s)", flush=True)

CHUNK, N_CHUNKS = 10, 6

def run_arm(arm, seed, phi, lr):
    e = EncoderConfig(feature_width=128, propagation="normalized",
                      dropout_attention=0.1, dropout_decoder=0.1, dropout_head=0.1)
    gkey = "disease_only" if arm == "disease_only" else "full"
    mask, ah = GRAPHS[phi][gkey]
    dr = None if arm == "random_init" else PRIOR
    model = init_model(e, mask, ds.num_diseases, cat_sizes, seed=seed,
                       disease_rows=dr, a_hat=ah)
    path = "direct" if arm == "direct" else "finetune"
    if arm != "direct":
        proxy_joint_train(model, px, epochs=40, lr=2e-3, batch_size=32,
                          seed=1000 + seed, decay=0.999)
        proxy_individual_train(model, px, epochs=5, lr=2e-3, batch_size=32,
                               seed=2000 + seed)
    add_head(model, "diagnosis", path, seed=4000 + seed)
    wf = []
    for chunk in range(N_CHUNKS):
        task_train(model, dn_tr, "diagnosis", path, epochs=CHUNK, lr=lr,
                   batch_size=32, seed=3000 + seed + 17 * chunk, decay=0.999,
                   rt=True)
        probs = predict(model, dn_te, path, rt=True)
        wf.append(weighted_f1(probs, truth))
    return wf

def show(tag, arm, s, wf):
    curve = " ".join(f"{(i+1)*CHUNK}:{v:.3f}" for i, v in enumerate(wf))
    print(f"  {tag} {arm} seed={s}: {curve} ({time.time()-t0:.0f}s)", flush=True)

print("== T1: aff=0.9 rt=True phi=0.999 lr=4e-3, all arms ==", flush=True)
for arm in ("full", "direct", "disease_only", "random_init"):
    for s in (11, 23):
        show("T1", arm, s, run_arm(arm, s, 0.999, 4e-3))

print(f"total {time.time()-t0:.0f}s")
