"""Scratch: isolate which change broke downstream learning (data vs joint recipe)."""
import time
import numpy as np

from dualmar.ehr import (SyntheticConfig, generate_synthetic, planted_structure,
                         split_dataset, proxy_examples, downstream_examples)
from dualmar.cograph import build_cooccurrence, assemble_adjacency, neighbor_mask
from dualmar.metrics import weighted_f1, recall_at_k
from dualmar.pipeline import (EncoderConfig, init_model, add_head,
                              proxy_joint_train, proxy_individual_train,
                              task_train, predict, encode)

t0 = time.time()
cfg = SyntheticConfig(patients=750, num_diseases=48, lab_sizes=(42, 29, 4),
                      clusters=4, affinity=0.9, progression=0.8, seed=202)
ds = generate_synthetic(cfg)
plan = planted_structure(cfg)
train, valid, test = split_dataset(ds, (1 - 1/15 - 2/15, 1/15, 2/15), seed=0)
B = build_cooccurrence(train)
A, Ah = assemble_adjacency(B, 0.5)
mask = neighbor_mask(A)
px = proxy_examples(train)
dn_tr = downstream_examples(train, plan.hf_codes)
dn_te = downstream_examples(test, plan.hf_codes)
truth = [e.target_diseases for e in dn_te]
cat_sizes = tuple(len(v) for v in ds.labs_by_category().values())


def pstats(tag, model):
    rng = np.random.default_rng(0)
    P = np.asarray(encode(model, [e.inputs for e in dn_te], train=False,
                          rng=rng).patients.data)
    mu = P.mean(axis=0); resid = P - mu
    sv = np.linalg.svd(resid, compute_uv=False)[:4]
    dead = float((P.max(axis=0) == 0.0).mean())
    print(f"{tag}: norm={np.linalg.norm(mu):.2f} resid={np.linalg.norm(resid, axis=1).mean():.4f} "
          f"dead-cols={dead:.2f} sv={[round(float(x), 3) for x in sv]}")


for tag, (je, jlr) in {"joint10@2e-3": (10, 2e-3), "joint25@5e-3": (25, 5e-3)}.items():
    enc_cfg = EncoderConfig(feature_width=128, propagation="normalized")
    model = init_model(enc_cfg, mask, ds.num_diseases, cat_sizes, seed=101, a_hat=Ah)
    jh = proxy_joint_train(model, px, epochs=je, lr=jlr, batch_size=32, seed=104, decay=0.97)
    pstats(f"{tag} joint={jh[-1]:.3f}", model)
    proxy_individual_train(model, px, epochs=2, lr=2e-3, batch_size=32, seed=105)
    add_head(model, "diagnosis", "finetune", seed=102)
    h = task_train(model, dn_tr, "diagnosis", "finetune", epochs=40, lr=4e-3,
                   batch_size=32, seed=103, decay=0.98)
    probs = predict(model, dn_te, "finetune")
    pstats(f"{tag} ft={h[-1]:.3f}", model)
    print(f"   wF1={weighted_f1(probs, truth):.4f} "
          f"R@10={recall_at_k(probs, truth, 10):.4f} p99={np.quantile(probs, 0.99):.3f} "
          f"({time.time()-t0:.0f}s)")
