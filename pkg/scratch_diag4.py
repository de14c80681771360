"""Scratch: sharper planted data + better pretraining, then finetune + probe."""
import sys
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
print("split:", len(train.patients), len(valid.patients), len(test.patients))
B = build_cooccurrence(train)
A, Ah = assemble_adjacency(B, 0.5)
mask = neighbor_mask(A)
px = proxy_examples(train)
dn_tr = downstream_examples(train, plan.hf_codes)
dn_te = downstream_examples(test, plan.hf_codes)
truth = [e.target_diseases for e in dn_te]
cat_sizes = tuple(len(v) for v in ds.labs_by_category().values())

# carry statistic and graph density, quick sanity
pairs = 0; carried = 0
for p in ds.patients:
    for a, b2 in zip(p.admissions, p.admissions[1:]):
        pairs += len(a.diseases)
        carried += len(set(a.diseases) & set(b2.diseases))
print(f"carry={carried/pairs:.3f} density={B.nnz/(B.shape[0]**2):.3f} "
      f"downstream train={len(dn_tr)} test={len(dn_te)}")

enc_cfg = EncoderConfig(feature_width=128, propagation="normalized")
model = init_model(enc_cfg, mask, ds.num_diseases, cat_sizes, seed=101, a_hat=Ah)
jh = proxy_joint_train(model, px, epochs=25, lr=5e-3, batch_size=32, seed=104, decay=0.97)
print(f"joint: {jh[0]:.4f} -> {jh[-1]:.4f} ({time.time()-t0:.0f}s)")
proxy_individual_train(model, px, epochs=2, lr=2e-3, batch_size=32, seed=105)
add_head(model, "diagnosis", "finetune", seed=102)

for block in range(6):
    h = task_train(model, dn_tr, "diagnosis", "finetune", epochs=10, lr=4e-3,
                   batch_size=32, seed=103 + block, decay=0.97)
    probs = predict(model, dn_te, "finetune")
    print(f"after {10*(block+1):3d} ft epochs: loss={h[-1]:.4f} "
          f"p99={np.quantile(probs, 0.99):.3f} "
          f"wF1={weighted_f1(probs, truth):.4f} "
          f"R@10={recall_at_k(probs, truth, 10):.4f} ({time.time()-t0:.0f}s)")

def logreg(X_tr, Y_tr, X_te, steps=3000, lr=0.5):
    n = X_tr.shape[0]
    W = np.zeros((X_tr.shape[1], Y_tr.shape[1])); b = np.zeros(Y_tr.shape[1])
    for _ in range(steps):
        p = 1.0 / (1.0 + np.exp(-(X_tr @ W + b)))
        g = (p - Y_tr) / n
        W -= lr * (X_tr.T @ g); b -= lr * g.sum(axis=0)
    return 1.0 / (1.0 + np.exp(-(X_te @ W + b)))

rng = np.random.default_rng(0)
P_tr = np.asarray(encode(model, [e.inputs for e in dn_tr], train=False, rng=rng).patients.data)
P_te = np.asarray(encode(model, [e.inputs for e in dn_te], train=False, rng=rng).patients.data)
Y_tr = np.zeros((len(dn_tr), ds.num_diseases))
for i, e in enumerate(dn_tr):
    Y_tr[i, list(e.target_diseases)] = 1.0
pte = logreg(P_tr, Y_tr, P_te)
print(f"probe on finetuned p: wF1={weighted_f1(pte, truth):.4f} "
      f"maxprob={pte.max():.3f} ({time.time()-t0:.0f}s)")
