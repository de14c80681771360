"""Admission-record data model, JSONL ingestion, splitting, prediction
targets, and a planted-structure synthetic generator.

The concept vocabulary C is the disease vocabulary D followed by the lab
vocabulary L: node id of disease d is d, node id of lab l is |D| + l.  Labs
carry a category tag in {1, 2, 3}.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (ConfigInvalid, EmptyAdmission, RatioInvalid,
                     TooFewAdmissions, UnknownCode)
from .kg import Entity, KnowledgeGraph, Relation, Triple

LAB_CATEGORIES = (1, 2, 3)


@dataclass(frozen=True)
class LabSpec:
    code: str
    category: int


@dataclass(frozen=True)
class Admission:
    diseases: tuple[int, ...]       # ordered, non-empty
    abnormal_labs: tuple[int, ...]  # sorted unique lab ids


@dataclass(frozen=True)
class Patient:
    id: str
    admissions: tuple[Admission, ...]


@dataclass(frozen=True)
class EhrDataset:
    patients: tuple[Patient, ...]
    disease_codes: tuple[str, ...]
    labs: tuple[LabSpec, ...]

    @property
    def num_diseases(self) -> int:
        return len(self.disease_codes)

    @property
    def num_labs(self) -> int:
        return len(self.labs)

    @property
    def num_concepts(self) -> int:
        return self.num_diseases + self.num_labs

    def labs_by_category(self) -> dict[int, tuple[int, ...]]:
        out: dict[int, list[int]] = {c: [] for c in LAB_CATEGORIES}
        for lab_id, lab in enumerate(self.labs):
            out[lab.category].append(lab_id)
        return {c: tuple(ids) for c, ids in out.items()}

    def validate(self) -> None:
        codes = list(self.disease_codes) + [lab.code for lab in self.labs]
        if len(set(codes)) != len(codes):
            raise ConfigInvalid("disease and lab codes must be pairwise distinct")
        for lab in self.labs:
            if lab.category not in LAB_CATEGORIES:
                raise ConfigInvalid(f"lab {lab.code!r} has category {lab.category}, expected 1..3")
        for patient in self.patients:
            if not patient.admissions:
                raise ConfigInvalid(f"patient {patient.id!r} has no admissions")
            for adm in patient.admissions:
                if not adm.diseases:
                    raise ConfigInvalid(f"patient {patient.id!r} has an admission without diseases")
                for d in adm.diseases:
                    if not 0 <= d < self.num_diseases:
                        raise ConfigInvalid(f"disease id {d} out of range for patient {patient.id!r}")
                for l in adm.abnormal_labs:
                    if not 0 <= l < self.num_labs:
                        raise ConfigInvalid(f"lab id {l} out of range for patient {patient.id!r}")
                if tuple(sorted(set(adm.abnormal_labs))) != adm.abnormal_labs:
                    raise ConfigInvalid(f"abnormal labs not sorted/unique for patient {patient.id!r}")


def admission_nodes(dataset: EhrDataset, adm: Admission, include_labs: bool = True) -> tuple[int, ...]:
    """Concept node ids of one admission: diseases, then lab ids offset by |D|."""
    nodes = list(adm.diseases)
    if include_labs:
        offset = dataset.num_diseases
        nodes.extend(offset + l for l in adm.abnormal_labs)
    return tuple(nodes)


# ----------------------------------------------------------------- file io

def save_vocab(dataset: EhrDataset, path: str | Path) -> None:
    payload = {
        "diseases": list(dataset.disease_codes),
        "labs": [{"code": lab.code, "category": lab.category} for lab in dataset.labs],
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True, ensure_ascii=False, indent=2)
        fh.write("\n")


def load_vocab(path: str | Path) -> tuple[tuple[str, ...], tuple[LabSpec, ...]]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    diseases = tuple(str(code) for code in payload["diseases"])
    labs = tuple(LabSpec(str(row["code"]), int(row["category"])) for row in payload["labs"])
    return diseases, labs


def save_dataset(dataset: EhrDataset, path: str | Path, vocab_path: str | Path) -> None:
    """One patient per line; labs serialized in sorted-id order (canonical)."""
    save_vocab(dataset, vocab_path)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for patient in dataset.patients:
            row = {
                "patient": patient.id,
                "admissions": [
                    {"diseases": [dataset.disease_codes[d] for d in adm.diseases],
                     "abnormal_labs": [dataset.labs[l].code for l in adm.abnormal_labs]}
                    for adm in patient.admissions
                ],
            }
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def load_dataset(path: str | Path, vocab_path: str | Path) -> EhrDataset:
    """Parse the JSONL export; unknown codes and disease-free admissions are errors."""
    disease_codes, labs = load_vocab(vocab_path)
    disease_id = {code: i for i, code in enumerate(disease_codes)}
    lab_id = {lab.code: i for i, lab in enumerate(labs)}
    patients: list[Patient] = []
    with open(path, encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            row = json.loads(line)
            admissions: list[Admission] = []
            for adm in row["admissions"]:
                diseases = []
                for code in adm["diseases"]:
                    if code not in disease_id:
                        raise UnknownCode(code, number)
                    diseases.append(disease_id[code])
                if not diseases:
                    raise EmptyAdmission(number)
                lab_ids = []
                for code in adm.get("abnormal_labs", []):
                    if code not in lab_id:
                        raise UnknownCode(code, number)
                    lab_ids.append(lab_id[code])
                admissions.append(Admission(tuple(diseases), tuple(sorted(set(lab_ids)))))
            if not admissions:
                raise EmptyAdmission(number)
            patients.append(Patient(str(row["patient"]), tuple(admissions)))
    dataset = EhrDataset(tuple(patients), disease_codes, labs)
    dataset.validate()
    return dataset


# ------------------------------------------------------------------ split

def split_dataset(dataset: EhrDataset, ratios: Sequence[float], seed: int,
                  ) -> tuple[EhrDataset, EhrDataset, EhrDataset]:
    """Patient-disjoint (train, valid, test) split.

    Valid and test hold round(ratio * N) patients each, drawn by seeded
    shuffle from the multi-admission pool only; everything else, including
    every single-admission patient, lands in train.  Original patient order
    is preserved inside each part.
    """
    if len(ratios) != 3:
        raise RatioInvalid(f"expected 3 ratios, got {len(ratios)}")
    if any(r < 0 for r in ratios):
        raise RatioInvalid(f"ratios must be non-negative, got {tuple(ratios)}")
    total = float(sum(ratios))
    if abs(total - 1.0) > 1e-9:
        raise RatioInvalid(f"ratios sum to {total!r}, expected 1 within 1e-9")
    n = len(dataset.patients)
    n_valid = int(ratios[1] * n + 0.5)
    n_test = int(ratios[2] * n + 0.5)
    multi = [i for i, p in enumerate(dataset.patients) if len(p.admissions) >= 2]
    if n_valid + n_test > len(multi):
        raise RatioInvalid(
            f"valid+test need {n_valid + n_test} multi-admission patients, only {len(multi)} available")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(multi))
    valid_idx = {multi[j] for j in order[:n_valid]}
    test_idx = {multi[j] for j in order[n_valid:n_valid + n_test]}

    def subset(keep: Iterable[int]) -> EhrDataset:
        kept = tuple(dataset.patients[i] for i in sorted(keep))
        return replace(dataset, patients=kept)

    train_idx = [i for i in range(n) if i not in valid_idx and i not in test_idx]
    return subset(train_idx), subset(valid_idx), subset(test_idx)


# ---------------------------------------------------------------- targets

@dataclass(frozen=True)
class ProxyExample:
    """Inputs are concept-node-id admissions; targets are local lab indices
    (position within the category's id-ordered lab list) per category."""
    patient_id: str
    inputs: tuple[tuple[int, ...], ...]
    targets: tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]]


@dataclass(frozen=True)
class DownstreamExample:
    patient_id: str
    inputs: tuple[tuple[int, ...], ...]
    target_diseases: tuple[int, ...]   # disease ids of the final admission
    target_lab_nodes: tuple[int, ...]  # concept node ids of its abnormal labs
    hf_label: int


def _category_locals(dataset: EhrDataset) -> dict[int, dict[int, int]]:
    by_cat = dataset.labs_by_category()
    return {c: {lab: i for i, lab in enumerate(ids)} for c, ids in by_cat.items()}


def build_proxy_targets(dataset: EhrDataset, patient: Patient) -> ProxyExample:
    """Next-admission abnormal-lab targets, one multi-hot set per category.

    With T >= 2 admissions the first T-1 (diseases and labs) are input and
    admission T's labs are the target.  A single-admission patient predicts
    its own labs from its diseases alone, so nothing leaks.
    """
    locals_by_cat = _category_locals(dataset)
    if len(patient.admissions) >= 2:
        inputs = tuple(admission_nodes(dataset, adm) for adm in patient.admissions[:-1])
        target_adm = patient.admissions[-1]
    else:
        only = patient.admissions[0]
        inputs = (admission_nodes(dataset, only, include_labs=False),)
        target_adm = only
    per_cat: dict[int, list[int]] = {c: [] for c in LAB_CATEGORIES}
    for lab in target_adm.abnormal_labs:
        cat = dataset.labs[lab].category
        per_cat[cat].append(locals_by_cat[cat][lab])
    targets = tuple(tuple(sorted(per_cat[c])) for c in LAB_CATEGORIES)
    return ProxyExample(patient.id, inputs, targets)  # type: ignore[arg-type]


def proxy_examples(dataset: EhrDataset) -> list[ProxyExample]:
    return [build_proxy_targets(dataset, p) for p in dataset.patients]


def build_downstream_targets(dataset: EhrDataset, patient: Patient,
                             hf_codes: Sequence[str]) -> DownstreamExample:
    """Final-admission diagnosis and heart-failure targets from the earlier
    admissions; requires at least two admissions."""
    if len(patient.admissions) < 2:
        raise TooFewAdmissions(
            f"patient {patient.id!r} has {len(patient.admissions)} admission(s), need >= 2")
    inputs = tuple(admission_nodes(dataset, adm) for adm in patient.admissions[:-1])
    target = patient.admissions[-1]
    marker_ids = {i for i, code in enumerate(dataset.disease_codes) if code in set(hf_codes)}
    hf = int(any(d in marker_ids for d in target.diseases))
    lab_nodes = tuple(dataset.num_diseases + l for l in target.abnormal_labs)
    return DownstreamExample(patient.id, inputs, tuple(sorted(set(target.diseases))), lab_nodes, hf)


def downstream_examples(dataset: EhrDataset, hf_codes: Sequence[str]) -> list[DownstreamExample]:
    """Examples for every multi-admission patient, in dataset order."""
    return [build_downstream_targets(dataset, p, hf_codes)
            for p in dataset.patients if len(p.admissions) >= 2]


# ---------------------------------------------------- synthetic generation

BACKGROUND_ABNORMAL_RATE = 0.02
MAX_ADMISSIONS = 12
MIN_CODES_PER_ADMISSION = 2
MAX_CODES_PER_ADMISSION = 4
CHRONIC_CARRY_RATE = 0.85


@dataclass(frozen=True)
class SyntheticConfig:
    patients: int = 750
    num_diseases: int = 48
    lab_sizes: tuple[int, int, int] = (42, 29, 4)
    clusters: int = 4
    hierarchy_depth: int = 2
    affinity: float = 0.8       # planted disease->lab signal strength
    progression: float = 0.7    # probability the next admission keeps the cluster
    mean_admissions: float = 2.7
    hf_codes: tuple[str, ...] | None = None  # default: every cluster-0 disease
    seed: int = 0

    def validate(self) -> None:
        if self.patients < 1 or self.num_diseases < 1 or self.clusters < 1:
            raise ConfigInvalid("patients, num_diseases, and clusters must be >= 1")
        if len(self.lab_sizes) != 3 or any(s < 1 for s in self.lab_sizes):
            raise ConfigInvalid(f"lab_sizes must be three counts >= 1, got {self.lab_sizes}")
        if self.hierarchy_depth != 2:
            raise ConfigInvalid("only a 2-level disease hierarchy is supported")
        if not (0.0 <= self.affinity <= 1.0 and 0.0 <= self.progression <= 1.0):
            raise ConfigInvalid("affinity and progression must be in [0, 1]")
        if self.clusters > self.num_diseases:
            raise ConfigInvalid("more clusters than diseases")
        if self.num_diseases > 900:
            raise ConfigInvalid("num_diseases capped at 900 (3-digit code space)")
        if not (1.0 < self.mean_admissions <= MAX_ADMISSIONS):
            raise ConfigInvalid(f"mean_admissions must be in (1, {MAX_ADMISSIONS}]")


@dataclass(frozen=True)
class PlantedStructure:
    """The latent design shared by the generator, the aligned disease
    hierarchy, and the default heart-failure marker set."""
    disease_codes: tuple[str, ...]
    labs: tuple[LabSpec, ...]
    cluster_of: tuple[int, ...]    # latent cluster (= hierarchy parent) per disease
    primary_lab: tuple[int, ...]   # the one lab each disease drives
    hf_codes: tuple[str, ...]      # cluster-0 disease codes unless overridden


def planted_structure(config: SyntheticConfig) -> PlantedStructure:
    config.validate()
    disease_codes = tuple(str(100 + i) for i in range(config.num_diseases))
    labs = []
    for cat, size in zip(LAB_CATEGORIES, config.lab_sizes):
        offset = len(labs)
        labs.extend(LabSpec(f"L{offset + j:03d}", cat) for j in range(size))
    num_labs = len(labs)
    cluster_of = tuple(i % config.clusters for i in range(config.num_diseases))
    primary_lab = tuple(i % num_labs for i in range(config.num_diseases))
    if config.hf_codes is not None:
        hf_codes = tuple(config.hf_codes)
    else:
        hf_codes = tuple(code for code, c in zip(disease_codes, cluster_of) if c == 0)
    return PlantedStructure(disease_codes, tuple(labs), cluster_of, primary_lab, hf_codes)


def _sample_admission_count(rng: np.random.Generator, mean: float) -> int:
    """Truncated geometric on 1..MAX_ADMISSIONS with untruncated mean `mean`."""
    q = 1.0 / mean
    while True:
        t = int(rng.geometric(q))
        if t <= MAX_ADMISSIONS:
            return t


def generate_synthetic(config: SyntheticConfig) -> EhrDataset:
    """Draw a dataset with planted disease clusters and disease->lab signal.

    Per patient: the admission count is truncated-geometric; the first
    admission's cluster is uniform and each later admission keeps the
    previous cluster with probability `progression`, otherwise jumps
    uniformly to a different one.  The disease set then evolves as a Markov
    step: each previous disease persists with the chronic carry rate, and
    the remaining slots of the 2..4 target width are filled from the current
    cluster's pool.  Lab l fires abnormally with probability
    1 - (1-bg) * (1-affinity)^k where k counts present diseases whose
    primary lab is l and bg is the background rate.  Byte-stable per seed.
    """
    plan = planted_structure(config)
    rng = np.random.default_rng(config.seed)
    num_labs = len(plan.labs)
    pools = [np.flatnonzero(np.asarray(plan.cluster_of) == c) for c in range(config.clusters)]
    primary = np.asarray(plan.primary_lab)
    patients = []
    for i in range(config.patients):
        t_count = _sample_admission_count(rng, config.mean_admissions)
        cluster = int(rng.integers(config.clusters))
        admissions: list[Admission] = []
        prev: tuple[int, ...] = ()
        for _ in range(t_count):
            pool = pools[cluster]
            width = int(rng.integers(MIN_CODES_PER_ADMISSION, MAX_CODES_PER_ADMISSION + 1))
            carried = [d for d in prev if rng.random() < CHRONIC_CARRY_RATE]
            if len(carried) > width:
                keep = rng.choice(len(carried), size=width, replace=False)
                carried = [carried[j] for j in sorted(keep)]
            fresh_pool = np.setdiff1d(pool, np.asarray(carried, dtype=np.int64))
            need = min(width - len(carried), len(fresh_pool))
            fresh = rng.choice(fresh_pool, size=max(need, 0), replace=False) if len(fresh_pool) else []
            diseases = tuple(int(d) for d in carried) + tuple(int(d) for d in fresh)
            hits = np.bincount(primary[list(diseases)], minlength=num_labs)
            p_abn = 1.0 - (1.0 - BACKGROUND_ABNORMAL_RATE) * (1.0 - config.affinity) ** hits
            abnormal = np.flatnonzero(rng.random(num_labs) < p_abn)
            admissions.append(Admission(diseases, tuple(int(l) for l in abnormal)))
            prev = diseases
            if config.clusters > 1 and rng.random() >= config.progression:
                others = [c for c in range(config.clusters) if c != cluster]
                cluster = others[int(rng.integers(len(others)))]
        patients.append(Patient(f"synth-{i:05d}", tuple(admissions)))
    dataset = EhrDataset(tuple(patients), plan.disease_codes, plan.labs)
    dataset.validate()
    return dataset


def marker_code(lab_code: str) -> str:
    """Phenotype code for a lab's abnormality marker (`L003` -> `HP:0000003`)."""
    return f"HP:{int(lab_code[1:]):07d}"


def synthetic_disease_kg(config: SyntheticConfig) -> KnowledgeGraph:
    """Two-level hierarchy over the synthetic disease codes, plus one
    abnormality marker per primary lab.

    Every disease points at its cluster's group entity via IS_A, group
    entities form a RELATED_TO ring, and each disease links to the Phenotype
    marker of its primary lab via HAS_MARKER.  The graph is connected,
    cluster membership is recoverable from link structure, and the marker
    edges give every disease a distinctive neighborhood.  Embeddings trained
    on this graph seed the encoder's disease and lab feature rows.
    """
    plan = planted_structure(config)
    graph = KnowledgeGraph()
    num_d = len(plan.disease_codes)
    for i, code in enumerate(plan.disease_codes):
        graph.entities[i] = Entity(i, f"Condition {code}", "Disease", code)
    # Short group surfaces: one character 3-gram each, so no two groups look
    # alike to the normalizer's surface embedder.
    for g in range(config.clusters):
        graph.entities[num_d + g] = Entity(num_d + g, f"P{g:02d}", "Disease")
    graph.relations[0] = Relation(0, "IS_A")
    graph.relations[1] = Relation(1, "RELATED_TO")
    graph.relations[2] = Relation(2, "HAS_MARKER")
    for i in range(num_d):
        graph.triples.append(Triple(i, 0, num_d + plan.cluster_of[i], "Ontology"))
    if config.clusters > 1:
        for g in range(config.clusters):
            graph.triples.append(
                Triple(num_d + g, 1, num_d + (g + 1) % config.clusters, "Ontology"))
    marker_base = num_d + config.clusters
    marker_ids: dict[int, int] = {}
    for i in range(num_d):
        lab = plan.primary_lab[i]
        if lab not in marker_ids:
            mid = marker_base + len(marker_ids)
            marker_ids[lab] = mid
            spec = plan.labs[lab]
            graph.entities[mid] = Entity(mid, f"Marker {spec.code}", "Phenotype",
                                         marker_code(spec.code))
        graph.triples.append(Triple(i, 2, marker_ids[lab], "Ontology"))
    return graph
