"""Scratch: does the encoder output distinguish patients at all?"""
import time
import numpy as np

from dualmar.ehr import (SyntheticConfig, generate_synthetic, planted_structure,
                         split_dataset, proxy_examples, downstream_examples)
from dualmar.cograph import build_cooccurrence, assemble_adjacency, neighbor_mask
from dualmar.metrics import weighted_f1
from dualmar.pipeline import (EncoderConfig, init_model, add_head,
                              proxy_joint_train, task_train, predict, encode)
from dualmar.nn import Tensor

t0 = time.time()
cfg = SyntheticConfig(patients=750, num_diseases=48, lab_sizes=(42, 29, 4),
                      clusters=4, affinity=0.8, progression=0.7, seed=202)
ds = generate_synthetic(cfg)
plan = planted_structure(cfg)
train, valid, test = split_dataset(ds, (1 - 1/15 - 2/15, 1/15, 2/15), seed=0)
B = build_cooccurrence(train)
A, Ah = assemble_adjacency(B, 0.5)
mask = neighbor_mask(A)
dn_tr = downstream_examples(train, plan.hf_codes)
dn_te = downstream_examples(test, plan.hf_codes)
cat_sizes = tuple(len(v) for v in ds.labs_by_category().values())

enc_cfg = EncoderConfig(feature_width=128, propagation="normalized")
model = init_model(enc_cfg, mask, ds.num_diseases, cat_sizes, seed=101, a_hat=Ah)

def patient_matrix(model, examples):
    r = encode(model, [e.inputs for e in examples], train=False,
               rng=np.random.default_rng(0))
    return np.asarray(r.patients.data)


def spread_report(tag, P):
    mu = P.mean(axis=0)
    resid = P - mu
    per_patient = np.linalg.norm(resid, axis=1)
    print(f"{tag}: mean-norm={np.linalg.norm(mu):.3f} "
          f"resid-norm mean={per_patient.mean():.4f} "
          f"rel={per_patient.mean()/max(np.linalg.norm(mu),1e-9):.4f}")
    # top singular values of residual
    s = np.linalg.svd(resid, compute_uv=False)[:5]
    print(f"   top sv: {[round(float(x),3) for x in s]}")


def logreg_wf1(X_tr, Y_tr, X_te, truth, steps=400, lr=0.1):
    # plain logistic regression with bias, full-batch Adam-free GD
    n, d = X_tr.shape
    k = Y_tr.shape[1]
    W = np.zeros((d, k)); b = np.zeros(k)
    for _ in range(steps):
        z = X_tr @ W + b
        p = 1.0 / (1.0 + np.exp(-z))
        g = (p - Y_tr) / n
        W -= lr * (X_tr.T @ g)
        b -= lr * g.sum(axis=0)
    pte = 1.0 / (1.0 + np.exp(-(X_te @ W + b)))
    return weighted_f1(pte, truth), pte.max()


truth_te = [e.target_diseases for e in dn_te]
Y_tr = np.zeros((len(dn_tr), ds.num_diseases))
for i, e in enumerate(dn_tr):
    Y_tr[i, list(e.target_diseases)] = 1.0

# bag-of-codes of last input admission (ceiling reference)
def bag(exs):
    X = np.zeros((len(exs), ds.num_diseases + 2))
    for i, e in enumerate(exs):
        for nd in e.inputs[-1]:
            if nd < ds.num_diseases:
                X[i, nd] = 1.0
        X[i, -2] = len(e.inputs)
        X[i, -1] = 1.0
    return X

f1, mx = logreg_wf1(bag(dn_tr), Y_tr, bag(dn_te), truth_te, steps=4000, lr=1.0)
print(f"logreg on last-admission bag: wF1={f1:.4f} maxprob={mx:.3f} ({time.time()-t0:.0f}s)")

P_tr = patient_matrix(model, dn_tr)
P_te = patient_matrix(model, dn_te)
spread_report("p (untrained)", P_te)
f1, mx = logreg_wf1(P_tr, Y_tr, P_te, truth_te, steps=800, lr=0.05)
print(f"logreg on untrained p: wF1={f1:.4f} maxprob={mx:.3f}")

px = proxy_examples(train)
proxy_joint_train(model, px, epochs=10, lr=2e-3, batch_size=32, seed=104)
P_tr = patient_matrix(model, dn_tr)
P_te = patient_matrix(model, dn_te)
spread_report("p (after joint)", P_te)
f1, mx = logreg_wf1(P_tr, Y_tr, P_te, truth_te, steps=800, lr=0.05)
print(f"logreg on pretrained p: wF1={f1:.4f} maxprob={mx:.3f} ({time.time()-t0:.0f}s)")

