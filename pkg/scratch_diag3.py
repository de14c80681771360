"""Scratch: long constant-lr finetune + probe of the finetuned representation."""
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

LR = float(sys.argv[1]) if len(sys.argv) > 1 else 5e-3
WIDTH = int(sys.argv[2]) if len(sys.argv) > 2 else 128

t0 = time.time()
cfg = SyntheticConfig(patients=750, num_diseases=48, lab_sizes=(42, 29, 4),
                      clusters=4, affinity=0.8, progression=0.7, seed=202)
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

enc_cfg = EncoderConfig(feature_width=WIDTH, propagation="normalized")
model = init_model(enc_cfg, mask, ds.num_diseases, cat_sizes, seed=101, a_hat=Ah)
proxy_joint_train(model, px, epochs=10, lr=2e-3, batch_size=32, seed=104)
proxy_individual_train(model, px, epochs=2, lr=2e-3, batch_size=32, seed=105)
add_head(model, "diagnosis", "finetune", seed=102)

for block in range(10):
    h = task_train(model, dn_tr, "diagnosis", "finetune", epochs=10, lr=LR,
                   batch_size=32, seed=103 + block, decay=1.0)
    probs = predict(model, dn_te, "finetune")
    print(f"after {10*(block+1):3d} ft epochs: loss={h[-1]:.4f} "
          f"p99={np.quantile(probs, 0.99):.3f} "
          f"wF1={weighted_f1(probs, truth):.4f} "
          f"R@10={recall_at_k(probs, truth, 10):.4f} ({time.time()-t0:.0f}s)")

def logreg_wf1(X_tr, Y_tr, X_te, steps=3000, lr=0.5):
    n = X_tr.shape[0]
    W = np.zeros((X_tr.shape[1], Y_tr.shape[1])); b = np.zeros(Y_tr.shape[1])
    for _ in range(steps):
        p = 1.0 / (1.0 + np.exp(-(X_tr @ W + b)))
        g = (p - Y_tr) / n
        W -= lr * (X_tr.T @ g); b -= lr * g.sum(axis=0)
    pte = 1.0 / (1.0 + np.exp(-(X_te @ W + b)))
    return weighted_f1(pte, truth), pte.max()

rng = np.random.default_rng(0)
P_tr = encode(model, [e.inputs for e in dn_tr], train=False, rng=rng).patients.data
P_te = encode(model, [e.inputs for e in dn_te], train=False, rng=rng).patients.data
Y_tr = np.zeros((len(dn_tr), ds.num_diseases))
for i, e in enumerate(dn_tr):
    Y_tr[i, list(e.target_diseases)] = 1.0
f1, mx = logreg_wf1(np.asarray(P_tr), Y_tr, np.asarray(P_te))
print(f"probe on finetuned p: wF1={f1:.4f} maxprob={mx:.3f} ({time.time()-t0:.0f}s)")
