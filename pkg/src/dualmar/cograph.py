"""Concept co-occurrence graph over the combined disease+lab vocabulary.

B counts, per admission, every unordered disease-disease pair and every
disease-abnormal-lab pair (lab-lab pairs are excluded by default); the mixed
adjacency is A = (1-phi)*B + phi*I and its row-normalized form drives graph
propagation.  Matrices are stored sparse.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .ehr import EhrDataset
from .errors import PhiOutOfRange, UnknownCode


def build_cooccurrence(dataset: EhrDataset, include_lab_lab: bool = False,
                       include_disease_lab: bool = True,
                       per_patient: bool = False) -> sp.csr_matrix:
    """Symmetric zero-diagonal pair-count matrix over the |C| concept nodes.

    `per_patient` collapses repeated pairs within one patient to a single
    count; `include_lab_lab` adds abnormal-lab pairs for the denser graph
    variant; `include_disease_lab=False` keeps only disease-disease edges
    (the disease-only ablation).
    """
    n_dis = dataset.num_diseases
    n = dataset.num_concepts
    rows: list[int] = []
    cols: list[int] = []
    for patient in dataset.patients:
        seen: set[tuple[int, int]] = set()
        for adm in patient.admissions:
            diseases = sorted(set(adm.diseases))
            for d in diseases:
                if not 0 <= d < n_dis:
                    raise UnknownCode(str(d))
            labs = [n_dis + l for l in adm.abnormal_labs]
            for l in labs:
                if not n_dis <= l < n:
                    raise UnknownCode(str(l - n_dis))
            pairs: list[tuple[int, int]] = []
            for i, a in enumerate(diseases):
                pairs.extend((a, b) for b in diseases[i + 1:])
            if include_disease_lab:
                pairs.extend((d, l) for d in diseases for l in labs)
            if include_lab_lab:
                pairs.extend((labs[i], labs[j])
                             for i in range(len(labs)) for j in range(i + 1, len(labs)))
            if per_patient:
                pairs = [p for p in pairs if p not in seen]
                seen.update(pairs)
            for a, b in pairs:
                rows.extend((a, b))
                cols.extend((b, a))
    data = np.ones(len(rows), dtype=np.int64)
    b = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    b.sum_duplicates()
    return b


def assemble_adjacency(b: sp.spmatrix, phi: float) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """(A, A-hat) with A = (1-phi)*B + phi*I entry-wise exact and A-hat row
    normalized; a node with an all-zero A row becomes a pure self-loop."""
    if not 0.0 <= phi <= 1.0:
        raise PhiOutOfRange(f"phi must be in [0, 1], got {phi!r}")
    n = b.shape[0]
    a = ((1.0 - phi) * b.tocsr().astype(np.float64) + phi * sp.identity(n, format="csr")).tocsr()
    a.eliminate_zeros()
    row_sums = np.asarray(a.sum(axis=1)).ravel()
    zero_rows = np.flatnonzero(row_sums == 0.0)
    if zero_rows.size:
        fix = sp.coo_matrix((np.ones(zero_rows.size), (zero_rows, zero_rows)), shape=(n, n))
        a_for_norm = (a + fix).tocsr()
        row_sums = np.asarray(a_for_norm.sum(axis=1)).ravel()
    else:
        a_for_norm = a
    inv = sp.diags(1.0 / row_sums)
    a_hat = (inv @ a_for_norm).tocsr()
    return a, a_hat


def neighbor_mask(a: sp.spmatrix) -> np.ndarray:
    """Dense boolean off-diagonal nonzero pattern of A (the attention mask)."""
    dense = np.asarray(a.todense()) != 0.0
    np.fill_diagonal(dense, False)
    return dense


@dataclass(frozen=True)
class GraphExport:
    num_nodes: int
    phi: float
    node_codes: tuple[str, ...]


def node_codes(dataset: EhrDataset) -> tuple[str, ...]:
    """Concept-node code per index: diseases first, then labs."""
    return tuple(dataset.disease_codes) + tuple(lab.code for lab in dataset.labs)


def save_graph(path_prefix: str | Path, b: sp.spmatrix, phi: float,
               codes: Iterable[str]) -> None:
    """Coordinate-list export of B (row, col, value per line) plus a JSON
    header with the node count, phi, and the node index map."""
    prefix = Path(path_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    coo = b.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(prefix.with_suffix(".coo"), "w", encoding="utf-8", newline="\n") as fh:
        for i in order:
            fh.write(f"{coo.row[i]}\t{coo.col[i]}\t{coo.data[i]}\n")
    header = {
        "num_nodes": int(b.shape[0]),
        "phi": float(phi),
        "nodes": {code: idx for idx, code in enumerate(codes)},
    }
    with open(prefix.with_suffix(".json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(header, fh, sort_keys=True, ensure_ascii=False, indent=2)
        fh.write("\n")


def load_graph(path_prefix: str | Path) -> tuple[sp.csr_matrix, float, dict[str, int]]:
    prefix = Path(path_prefix)
    with open(prefix.with_suffix(".json"), encoding="utf-8") as fh:
        header = json.load(fh)
    n = int(header["num_nodes"])
    rows, cols, vals = [], [], []
    with open(prefix.with_suffix(".coo"), encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            r, c, v = line.split("\t")
            rows.append(int(r))
            cols.append(int(c))
            vals.append(int(v))
    b = sp.coo_matrix((vals, (rows, cols)), shape=(n, n), dtype=np.int64).tocsr()
    return b, float(header["phi"]), {str(k): int(v) for k, v in header["nodes"].items()}
