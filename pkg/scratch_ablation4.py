"""Scratch: rt=True with high self-loop weight, 4 arms x 2 seeds, 10-epoch curve."""
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

PHI = 0.999
t0 = time.time()
cfg = SyntheticConfig(patients=750, num_diseases=48, lab_sizes=(42, 29, 4),
                      clusters=4, affinity=0.9, progression=0.8, seed=202)
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
sw = Ah_f.diagonal()
print(f"phi={PHI} self-weight: dis mean={sw[:48].mean():.3f} lab mean={sw[48:].mean():.3f}")

kg = normalize_kg(synthetic_disease_kg(cfg))
ids = sorted(kg.entities)
id2idx = {e: i for i, e in enumerate(ids)}
rel2idx = {r: i for i, r in enumerate(sorted(kg.relations))}
trip = np.array([[id2idx[t.head], rel2idx[t.relation], id2idx[t.tail]]
                 for t in kg.triples], dtype=np.int64)
kge_cfg = KgeConfig(k=64, gamma=6.0, lam=0.5, negatives=16, steps=2000,
                    lr=1e-2, batch_size=64)
table, _ = train_kge(trip, len(ids), len(rel2idx), kge_cfg, seed=11)
rows = export_entity_embeddings(table)
code_to_row = {kg.entities[e].code: rows[id2idx[e]] for e in ids
               if kg.entities[e].code is not None}
prior = {i: code_to_row[c] for i, c in enumerate(ds.disease_codes) if c in code_to_row}
print(f"prior rows: {len(prior)}/{ds.num_diseases} ({time.time()-t0:.0f}s)", flush=True)

EP_J, EP_I, LR = 10, 2, 4e-3
CHUNK, N_CHUNKS = 10, 6
enc = lambda: EncoderConfig(feature_width=128, propagation="normalized",
                            dropout_attention=0.1, dropout_decoder=0.1,
                            dropout_head=0.1)

def run_arm(arm, seed):
    mask, ah = (mask_d, Ah_d) if arm == "disease_only" else (mask_f, Ah_f)
    dr = None if arm == "random_init" else prior
    model = init_model(enc(), mask, ds.num_diseases, cat_sizes, seed=seed,
                       disease_rows=dr, a_hat=ah)
    path = "direct" if arm == "direct" else "finetune"
    if arm != "direct":
        proxy_joint_train(model, px, epochs=EP_J, lr=2e-3, batch_size=32,
                          seed=1000 + seed)
        proxy_individual_train(model, px, epochs=EP_I, lr=2e-3, batch_size=32,
                               seed=2000 + seed)
    add_head(model, "diagnosis", path, seed=4000 + seed)
    wf = []
    for chunk in range(N_CHUNKS):
        task_train(model, dn_tr, "diagnosis", path, epochs=CHUNK, lr=LR,
                   batch_size=32, seed=3000 + seed + 17 * chunk, decay=0.999,
                   rt=True)
        probs = predict(model, dn_te, path, rt=True)
        wf.append(weighted_f1(probs, truth))
    return wf

for arm in ("full", "direct", "disease_only", "random_init"):
    for s in (11, 23):
        wf = run_arm(arm, s)
        curve = " ".join(f"{(i+1)*CHUNK}:{v:.3f}" for i, v in enumerate(wf))
        print(f"  {arm} seed={s}: {curve} ({time.time()-t0:.0f}s)", flush=True)
print(f"total {time.time()-t0:.0f}s")
