import numpy as np
import pytest
import scipy.sparse as sp

from dualmar.cograph import (assemble_adjacency, build_cooccurrence,
                             load_graph, neighbor_mask, node_codes, save_graph)
from dualmar.ehr import Admission, EhrDataset, LabSpec, Patient
from dualmar.errors import PhiOutOfRange, UnknownCode

from util import brute_cooccurrence, random_ehr_dataset


def tiny_dataset():
    labs = (LabSpec("L000", 1), LabSpec("L001", 2))
    patients = (
        Patient("p0", (Admission((0, 1), (0,)), Admission((1, 2), (0, 1)))),
        Patient("p1", (Admission((0, 1), ()),)),
    )
    return EhrDataset(patients, ("100", "101", "102"), labs)


def test_pair_counts_hand_checked():
    b = build_cooccurrence(tiny_dataset()).toarray()
    # disease pair (0,1) appears in two admissions
    assert b[0, 1] == 2
    assert b[1, 2] == 1
    # disease 0 with lab 0 (node 3) once; diagonal stays empty
    assert b[0, 3] == 1
    assert b[1, 3] == 2
    assert np.all(np.diag(b) == 0)


def test_symmetry_and_flags_on_random_datasets():
    rng = np.random.default_rng(0)
    for _ in range(25):
        ds = random_ehr_dataset(rng)
        for lab_lab in (False, True):
            for dis_lab in (False, True):
                for per_patient in (False, True):
                    b = build_cooccurrence(ds, include_lab_lab=lab_lab,
                                           include_disease_lab=dis_lab,
                                           per_patient=per_patient)
                    dense = b.toarray()
                    assert np.array_equal(dense, dense.T)
                    assert np.all(np.diag(dense) == 0)
                    ref = brute_cooccurrence(ds, include_lab_lab=lab_lab,
                                             include_disease_lab=dis_lab,
                                             per_patient=per_patient)
                    assert np.array_equal(dense, ref)


def test_counts_add_over_dataset_concatenation():
    rng = np.random.default_rng(1)
    a = random_ehr_dataset(rng)
    extra = tuple(Patient(f"x-{p.id}", p.admissions) for p in a.patients[:3])
    combined = EhrDataset(a.patients + extra, a.disease_codes, a.labs)
    b_a = build_cooccurrence(a).toarray()
    b_extra = build_cooccurrence(
        EhrDataset(extra, a.disease_codes, a.labs)).toarray()
    assert np.array_equal(build_cooccurrence(combined).toarray(), b_a + b_extra)


def test_unknown_code_rejected():
    labs = (LabSpec("L000", 1),)
    ds = EhrDataset((Patient("p", (Admission((0, 5), ()),)),), ("100",), labs)
    with pytest.raises(UnknownCode):
        build_cooccurrence(ds)


def test_adjacency_identity_and_normalization():
    rng = np.random.default_rng(2)
    for _ in range(10):
        ds = random_ehr_dataset(rng)
        b = build_cooccurrence(ds)
        phi = float(rng.uniform(0.1, 0.9))
        a, a_hat = assemble_adjacency(b, phi)
        n = b.shape[0]
        expected = (1.0 - phi) * b.toarray() + phi * np.eye(n)
        assert np.array_equal(a.toarray(), expected)
        assert np.max(np.abs(a_hat.toarray().sum(axis=1) - 1.0)) < 1e-9


def test_adjacency_phi_edge_cases():
    b = build_cooccurrence(tiny_dataset())
    a, a_hat = assemble_adjacency(b, 1.0)
    assert np.array_equal(a.toarray(), np.eye(b.shape[0]))
    assert np.array_equal(a_hat.toarray(), np.eye(b.shape[0]))
    # phi=0 leaves isolated nodes with zero rows; normalization self-loops them
    a0, a0_hat = assemble_adjacency(b, 0.0)
    assert np.array_equal(a0.toarray(), b.toarray())
    assert np.max(np.abs(a0_hat.toarray().sum(axis=1) - 1.0)) < 1e-9
    with pytest.raises(PhiOutOfRange):
        assemble_adjacency(b, -0.01)
    with pytest.raises(PhiOutOfRange):
        assemble_adjacency(b, 1.01)


def test_neighbor_mask_off_diagonal():
    b = build_cooccurrence(tiny_dataset())
    a, _ = assemble_adjacency(b, 0.5)
    mask = neighbor_mask(a)
    assert mask.dtype == bool
    assert not mask.diagonal().any()
    assert mask[0, 1] and mask[1, 0]
    dense = b.toarray()
    assert np.array_equal(mask, (dense != 0))


def test_node_codes_layout():
    ds = tiny_dataset()
    codes = node_codes(ds)
    assert codes == ("100", "101", "102", "L000", "L001")


def test_graph_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    ds = random_ehr_dataset(rng)
    b = build_cooccurrence(ds)
    prefix = tmp_path / "graph"
    save_graph(prefix, b, 0.37, node_codes(ds))
    b2, phi, nodes = load_graph(prefix)
    assert phi == 0.37
    assert np.array_equal(b.toarray(), b2.toarray())
    assert nodes[ds.disease_codes[0]] == 0
    first = (tmp_path / "graph.coo").read_bytes()
    save_graph(prefix, b, 0.37, node_codes(ds))
    assert (tmp_path / "graph.coo").read_bytes() == first
