"""Scratch: phi sweep under normalized propagation, d48 c4 aff 0.9 rt=False."""
import time
import numpy as np

from dualmar.ehr import (SyntheticConfig, generate_synthetic, planted_structure,
                         split_dataset, proxy_examples, downstream_examples,
                         synthetic_disease_kg, marker_code)
from dualmar.kg import normalize_kg
from dualmar.kge import KgeConfig, train_kge, export_entity_embeddings
from dualmar.cograph import build_cooccurrence, assemble_adjacency, neighbor_mask
from dualmar.metrics import weighted_f1
from dualmar.pipeline import (EncoderConfig, init_model, add_head,
                              proxy_joint_train, proxy_individual_train,
                              task_train, predict)

t0 = time.time()
CHUNK, N_CHUNKS = 10, 6


def build_frame(cfg, phis):
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
    graphs = {}
    for phi in phis:
        for key, B in (("full", B_full), ("disease_only", B_dis)):
            A, Ah = assemble_adjacency(B, phi)
            graphs[(key, phi)] = (neighbor_mask(A), Ah)
    kg = normalize_kg(synthetic_disease_kg(cfg))
    ids = sorted(kg.entities)
    id2idx = {e: i for i, e in enumerate(ids)}
    rel2idx = {r: i for i, r in enumerate(sorted(kg.relations))}
    trip = np.array([[id2idx[t.head], rel2idx[t.relation], id2idx[t.tail]]
                     for t in kg.triples], dtype=np.int64)
    kcfg = KgeConfig(k=64, gamma=6.0, lam=0.5, negatives=16, steps=2000,
                     lr=1e-2, batch_size=64)
    table, _ = train_kge(trip, len(ids), len(rel2idx), kcfg, seed=11)
    rows = export_entity_embeddings(table)
    code_to_row = {kg.entities[e].code: rows[id2idx[e]] for e in ids
                   if kg.entities[e].code is not None}
    prior = {i: code_to_row[c] for i, c in enumerate(ds.disease_codes)
             if c in code_to_row}
    for l, lab in enumerate(ds.labs):
        mc = marker_code(lab.code)
        if mc in code_to_row:
            prior[ds.num_diseases + l] = code_to_row[mc]
    print(f"prior rows: {len(prior)} ({time.time()-t0:.0f}s)", flush=True)
    return dict(ds=ds, px=px, dn_tr=dn_tr, dn_te=dn_te, truth=truth,
                cat_sizes=cat_sizes, graphs=graphs, prior=prior)


def run_arm(fr, arm, phi, seed, rt=False, lr=4e-3):
    e = EncoderConfig(feature_width=128, propagation="normalized",
                      dropout_attention=0.1, dropout_decoder=0.1, dropout_head=0.1)
    gkey = "disease_only" if arm == "disease_only" else "full"
    mask, ah = fr["graphs"][(gkey, phi)]
    pr = None if arm == "random_init" else fr["prior"]
    model = init_model(e, mask, fr["ds"].num_diseases, fr["cat_sizes"], seed=seed,
                       prior_rows=pr, a_hat=ah)
    path = "direct" if arm == "direct" else "finetune"
    if arm != "direct":
        proxy_joint_train(model, fr["px"], epochs=40, lr=2e-3, batch_size=32,
                          seed=1000 + seed, decay=0.999)
        proxy_individual_train(model, fr["px"], epochs=5, lr=2e-3, batch_size=32,
                               seed=2000 + seed)
    add_head(model, "diagnosis", path, seed=4000 + seed)
    wf = []
    for chunk in range(N_CHUNKS):
        task_train(model, fr["dn_tr"], "diagnosis", path, epochs=CHUNK, lr=lr,
                   batch_size=32, seed=3000 + seed + 17 * chunk, decay=0.999,
                   rt=rt)
        probs = predict(model, fr["dn_te"], path, rt=rt)
        wf.append(weighted_f1(probs, fr["truth"]))
    return wf


PHIS = (0.3, 0.6, 0.9)
fr = build_frame(SyntheticConfig(patients=750, num_diseases=48, lab_sizes=(42, 29, 4),
                                 clusters=4, affinity=0.9, progression=0.8, seed=202),
                 PHIS)
for phi in PHIS:
    print(f"== phi={phi} ==", flush=True)
    for arm in ("full", "disease_only", "direct", "random_init"):
        for s in (11, 23):
            wf = run_arm(fr, arm, phi, s)
            curve = " ".join(f"{(i+1)*CHUNK}:{v:.3f}" for i, v in enumerate(wf))
            print(f"  phi={phi} {arm} seed={s}: {curve} ({time.time()-t0:.0f}s)", flush=True)
print(f"total {time.time()-t0:.0f}s")
