"""Shared fixtures and independent reference implementations.

The reference metric and ranking functions here are deliberately written as
plain Python loops, separate from the package's vectorized code paths, so
the two can be compared as independent oracles.
"""

import math
import string

import numpy as np

from dualmar.ehr import Admission, EhrDataset, LabSpec, Patient
from dualmar.kg import CATEGORIES, Entity, KnowledgeGraph, Relation, Triple

IS_A, SIBLING_OF, LINKED_TO = 0, 1, 2


def two_level_hierarchy():
    """20 leaves under 5 parents, 3 relation types, 55 triples, 25 entities.

    Leaves 0..19 (parent = 20 + leaf // 4), parents 20..24.  Sibling edges
    form a 4-ring inside each group, linked_to joins the parents in a ring
    and every even leaf to its counterpart in the next group.
    """
    triples = []
    for leaf in range(20):
        triples.append((leaf, IS_A, 20 + leaf // 4))
    for leaf in range(20):
        group = leaf // 4
        triples.append((leaf, SIBLING_OF, group * 4 + (leaf + 1) % 4))
    for g in range(5):
        triples.append((20 + g, LINKED_TO, 20 + (g + 1) % 5))
    for leaf in range(0, 20, 2):
        triples.append((leaf, LINKED_TO, (leaf + 4) % 20))
    return np.array(triples, dtype=np.int64), 25, 3


def hierarchy_split(seed=7):
    """90/10 train/test split of the hierarchy triples."""
    triples, n_ent, n_rel = two_level_hierarchy()
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(triples))
    n_test = len(triples) // 10
    test = triples[order[:n_test]]
    train = triples[order[n_test:]]
    return train, test, triples, n_ent, n_rel


def analytic_random_mrr(test, known, num_entities, filtered=True):
    """Expected MRR of a uniformly random ranking: mean of H_m / m over the
    candidate sets, since E[1/rank] over a uniform permutation of m items
    is (1/m) * sum_{r=1..m} 1/r."""
    tails_of, heads_of = {}, {}
    for h, r, t in np.asarray(known).tolist():
        tails_of.setdefault((h, r), set()).add(t)
        heads_of.setdefault((r, t), set()).add(h)

    def expected(m):
        return sum(1.0 / r for r in range(1, m + 1)) / m

    vals = []
    for h, r, t in np.asarray(test).tolist():
        m_tail = num_entities - (len(tails_of.get((h, r), set()) - {t}) if filtered else 0)
        m_head = num_entities - (len(heads_of.get((r, t), set()) - {h}) if filtered else 0)
        vals.append(expected(m_tail))
        vals.append(expected(m_head))
    return float(np.mean(vals))


def brute_ranking(arrays, test, known, lam, hits_at=(1, 3, 10), filtered=True):
    """Exhaustive link-prediction ranking from the raw table arrays."""
    em, ep = arrays["entity_modulus"], arrays["entity_phase"]
    rm, rp = arrays["relation_modulus"], arrays["relation_phase"]
    n, k = em.shape
    known_set = {tuple(row) for row in np.asarray(known).tolist()}

    def dist(h, r, t):
        d_r = math.sqrt(sum((em[h][i] * rm[r][i] - em[t][i]) ** 2 for i in range(k)))
        d_a = sum(abs(math.sin((ep[h][i] + rp[r][i] - ep[t][i]) / 2.0)) for i in range(k))
        return d_r + lam * d_a

    ranks = []
    for h, r, t in np.asarray(test).tolist():
        for corrupt_tail in (True, False):
            true = t if corrupt_tail else h
            d_true = dist(h, r, t)
            less = ties = 0
            for c in range(n):
                cand = (h, r, c) if corrupt_tail else (c, r, t)
                if filtered and c != true and cand in known_set:
                    continue
                d = dist(*cand)
                if d < d_true:
                    less += 1
                elif d == d_true:
                    ties += 1
            ranks.append(less + (ties + 1) / 2.0)
    out = {"mrr": float(np.mean([1.0 / r for r in ranks]))}
    for k_at in hits_at:
        out[f"hits@{k_at}"] = float(np.mean([r <= k_at for r in ranks]))
    return out


# --------------------------------------------------------- metric references

def brute_weighted_f1(probs, truth_sets, threshold=0.5):
    n, m = probs.shape
    total, weight_sum = 0.0, 0.0
    for label in range(m):
        tp = fp = fn = 0
        support = 0
        for i in range(n):
            is_true = label in truth_sets[i]
            pred = probs[i][label] >= threshold
            support += is_true
            if pred and is_true:
                tp += 1
            elif pred and not is_true:
                fp += 1
            elif not pred and is_true:
                fn += 1
        f1 = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) > 0 else 0.0
        total += f1 * support
        weight_sum += support
    return total / weight_sum


def brute_recall_at_k(probs, truth_sets, k):
    scores = []
    for i, truth in enumerate(truth_sets):
        if not truth:
            continue
        row = probs[i]
        order = sorted(range(len(row)), key=lambda j: (-row[j], j))
        top = set(order[:k])
        scores.append(len(top & set(truth)) / len(truth))
    return sum(scores) / len(scores)


def brute_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def brute_binary_f1(scores, labels, threshold=0.5):
    tp = sum(1 for s, y in zip(scores, labels) if s >= threshold and y)
    fp = sum(1 for s, y in zip(scores, labels) if s >= threshold and not y)
    fn = sum(1 for s, y in zip(scores, labels) if s < threshold and y)
    return 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) > 0 else 0.0


# ------------------------------------------------------------ random inputs

def random_prediction_set(rng, max_patients=12, max_labels=24):
    n = int(rng.integers(2, max_patients + 1))
    m = int(rng.integers(3, max_labels + 1))
    probs = rng.random((n, m))
    truth_sets = []
    for _ in range(n):
        size = int(rng.integers(1, max(2, m // 2)))
        truth_sets.append(tuple(sorted(rng.choice(m, size=size, replace=False).tolist())))
    return probs, truth_sets


SURFACE_POOL = (
    "Heart Failure", "heart failure", "Hypertension", "HYPERTENSION",
    "Aspirin", "aspirin", "Warfarin", "Edema", "edema", "Dyspnea",
    "Chest Pain", "chest pain", "Atrial Fibrillation", "Beta Blocker",
    "Renal Failure", "Diabetes", "diabetes mellitus", "Shortness of Breath",
    "Cough", "Fatigue", "fatigue", "Stroke", "Anemia", "Sepsis",
)

RELATION_POOL = ("IS_CAUSED_BY", "HAS_SYMPTOMS", "NEEDS_TREATMENT",
                 "TREATS", "IS_A", "RELATED_TO")


def random_raw_graph(rng, max_triples=14):
    """A raw graph the way load_triples would build one: entities keyed by
    (surface, category), fresh sequential ids, no codes."""
    graph = KnowledgeGraph()
    ent_ids = {}
    rel_ids = {}

    def entity(surface, category):
        key = (surface, category)
        if key not in ent_ids:
            eid = len(ent_ids)
            ent_ids[key] = eid
            graph.entities[eid] = Entity(eid, surface, category)
        return ent_ids[key]

    def relation(label):
        if label not in rel_ids:
            rid = len(rel_ids)
            rel_ids[label] = rid
            graph.relations[rid] = Relation(rid, label)
        return rel_ids[label]

    for _ in range(int(rng.integers(1, max_triples + 1))):
        head = str(rng.choice(SURFACE_POOL))
        tail = str(rng.choice(SURFACE_POOL))
        label = str(rng.choice(RELATION_POOL))
        head_cat = str(rng.choice(CATEGORIES))
        tail_cat = str(rng.choice(CATEGORIES))
        graph.triples.append(Triple(entity(head, head_cat), relation(label),
                                    entity(tail, tail_cat), "Ontology"))
    return graph


def random_surface(rng, min_len=3, max_len=18):
    chars = string.ascii_letters + "    '-"
    n = int(rng.integers(min_len, max_len + 1))
    s = "".join(rng.choice(list(chars)) for _ in range(n)).strip()
    return s if s else "x"


def random_ehr_dataset(rng, max_patients=10):
    """Small random dataset whose admissions satisfy the validation rules."""
    num_diseases = int(rng.integers(3, 9))
    lab_sizes = [int(rng.integers(1, 5)) for _ in range(3)]
    disease_codes = tuple(f"{100 + i}" for i in range(num_diseases))
    labs = []
    for cat, size in zip((1, 2, 3), lab_sizes):
        for _ in range(size):
            labs.append(LabSpec(f"L{len(labs):03d}", cat))
    labs = tuple(labs)
    patients = []
    for i in range(int(rng.integers(2, max_patients + 1))):
        admissions = []
        for _ in range(int(rng.integers(1, 5))):
            n_dis = int(rng.integers(1, min(4, num_diseases) + 1))
            diseases = tuple(int(d) for d in rng.choice(num_diseases, size=n_dis, replace=False))
            n_lab = int(rng.integers(0, len(labs) + 1))
            lab_ids = tuple(sorted(int(l) for l in rng.choice(len(labs), size=n_lab, replace=False)))
            admissions.append(Admission(diseases, lab_ids))
        patients.append(Patient(f"p{i:03d}", tuple(admissions)))
    ds = EhrDataset(tuple(patients), disease_codes, labs)
    ds.validate()
    return ds


def brute_cooccurrence(dataset, include_lab_lab=False, include_disease_lab=True,
                       per_patient=False):
    """Pairwise co-admission counts by direct enumeration."""
    n = dataset.num_concepts
    n_dis = dataset.num_diseases
    counts = np.zeros((n, n), dtype=np.int64)
    for patient in dataset.patients:
        pair_list = []
        for adm in patient.admissions:
            nodes = sorted(set(admission_nodes_of(dataset, adm)))
            for a in nodes:
                for b in nodes:
                    if a >= b:
                        continue
                    a_is_lab, b_is_lab = a >= n_dis, b >= n_dis
                    if a_is_lab and b_is_lab and not include_lab_lab:
                        continue
                    if (a_is_lab != b_is_lab) and not include_disease_lab:
                        continue
                    pair_list.append((a, b))
        if per_patient:
            pair_list = sorted(set(pair_list))
        for a, b in pair_list:
            counts[a, b] += 1
            counts[b, a] += 1
    return counts


def admission_nodes_of(dataset, adm):
    return list(adm.diseases) + [dataset.num_diseases + l for l in adm.abnormal_labs]
