"""Diagnosis knowledge-graph model: vocabulary, cross-referencing, clustering,
normalization, and archive I/O.

A graph holds entity and relation vocabularies plus a triple list.  Raw
triples arrive as 4-column TSV (head surface, relation label, tail surface,
category-pair tag); normalized graphs round-trip through a 3-file archive
that preserves ids, codes, and triple sources.

Normalization cross-references entities onto ICD-9-CM / ATC-4 / HPO codes,
merges duplicates per category by average-linkage clustering of surface
embeddings, canonicalizes relation labels the same way, drops self-loops and
duplicate triples, and prunes unreferenced vocabulary.  The single-pass
reduction runs to a fixed point so normalizing twice changes nothing.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from .errors import ConflictingMapping, EmptyFile, InvalidThreshold, MalformedLine

CATEGORIES = ("Disease", "Drug", "Phenotype", "Other")
SOURCES = ("Ontology", "Generated")
EMBED_DIM = 256


@dataclass(frozen=True)
class Entity:
    id: int
    surface: str
    category: str
    code: str | None = None


@dataclass(frozen=True)
class Relation:
    id: int
    label: str


@dataclass(frozen=True)
class Triple:
    head: int
    relation: int
    tail: int
    source: str = "Ontology"


@dataclass
class KnowledgeGraph:
    entities: dict[int, Entity] = field(default_factory=dict)
    relations: dict[int, Relation] = field(default_factory=dict)
    triples: list[Triple] = field(default_factory=list)

    def surface_signature(self) -> tuple:
        """Structure visible through the raw TSV format (no ids, codes, sources)."""
        ent = frozenset((e.surface, e.category) for e in self.entities.values())
        rel = frozenset(r.label for r in self.relations.values())
        tri = frozenset(
            (self.entities[t.head].surface, self.relations[t.relation].label,
             self.entities[t.tail].surface)
            for t in self.triples
        )
        return ent, rel, tri


# ----------------------------------------------------------------- raw TSV

def _parse_pair_tag(tag: str, line_number: int) -> tuple[str, str]:
    parts = tag.split("-")
    if len(parts) != 2 or parts[0] not in CATEGORIES or parts[1] not in CATEGORIES:
        raise MalformedLine(line_number, f"line {line_number}: bad category pair {tag!r}")
    return parts[0], parts[1]


def load_triples(path: str | Path, default_source: str = "Ontology") -> KnowledgeGraph:
    """Read 4-column raw triple TSV into a graph with fresh ids.

    Entities are keyed by (surface, category); relations by label.  Raises
    MalformedLine (with line number) on a bad row and EmptyFile when no rows
    survive.
    """
    graph = KnowledgeGraph()
    ent_ids: dict[tuple[str, str], int] = {}
    rel_ids: dict[str, int] = {}

    def entity_id(surface: str, category: str) -> int:
        key = (surface, category)
        if key not in ent_ids:
            eid = len(ent_ids)
            ent_ids[key] = eid
            graph.entities[eid] = Entity(eid, surface, category)
        return ent_ids[key]

    def relation_id(label: str) -> int:
        if label not in rel_ids:
            rid = len(rel_ids)
            rel_ids[label] = rid
            graph.relations[rid] = Relation(rid, label)
        return rel_ids[label]

    text = Path(path).read_text(encoding="utf-8")
    for number, line in enumerate(text.split("\n"), start=1):
        if line == "" and number == text.count("\n") + 1:
            continue  # trailing newline
        fields = line.split("\t")
        if len(fields) != 4:
            raise MalformedLine(number, f"line {number}: expected 4 tab-separated fields, got {len(fields)}")
        head, label, tail, tag = fields
        if not head or not label or not tail:
            raise MalformedLine(number, f"line {number}: empty field")
        head_cat, tail_cat = _parse_pair_tag(tag, number)
        graph.triples.append(Triple(
            head=entity_id(head, head_cat),
            relation=relation_id(label),
            tail=entity_id(tail, tail_cat),
            source=default_source,
        ))
    if not graph.triples:
        raise EmptyFile(f"{path}: no triples")
    return graph


def save_triples(graph: KnowledgeGraph, path: str | Path) -> None:
    """Write the raw 4-column TSV form (UTF-8, LF, no header)."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        for t in graph.triples:
            head = graph.entities[t.head]
            tail = graph.entities[t.tail]
            label = graph.relations[t.relation].label
            fh.write(f"{head.surface}\t{label}\t{tail.surface}\t{head.category}-{tail.category}\n")


# ----------------------------------------------------------------- archive

def save_kg_archive(graph: KnowledgeGraph, directory: str | Path) -> None:
    """Write entities.tsv / relations.tsv / triples.tsv preserving ids."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "entities.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for e in graph.entities.values():
            fh.write(f"{e.id}\t{e.surface}\t{e.category}\t{e.code or ''}\n")
    with open(d / "relations.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for r in graph.relations.values():
            fh.write(f"{r.id}\t{r.label}\n")
    with open(d / "triples.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for t in graph.triples:
            fh.write(f"{t.head}\t{t.relation}\t{t.tail}\t{t.source}\n")


def load_kg_archive(directory: str | Path) -> KnowledgeGraph:
    d = Path(directory)
    graph = KnowledgeGraph()
    for number, line in enumerate(_read_lines(d / "entities.tsv"), start=1):
        fields = line.split("\t")
        if len(fields) != 4:
            raise MalformedLine(number, f"entities.tsv line {number}")
        eid = int(fields[0])
        if fields[2] not in CATEGORIES:
            raise MalformedLine(number, f"entities.tsv line {number}: bad category {fields[2]!r}")
        graph.entities[eid] = Entity(eid, fields[1], fields[2], fields[3] or None)
    for number, line in enumerate(_read_lines(d / "relations.tsv"), start=1):
        fields = line.split("\t")
        if len(fields) != 2:
            raise MalformedLine(number, f"relations.tsv line {number}")
        rid = int(fields[0])
        graph.relations[rid] = Relation(rid, fields[1])
    for number, line in enumerate(_read_lines(d / "triples.tsv"), start=1):
        fields = line.split("\t")
        if len(fields) != 4 or fields[3] not in SOURCES:
            raise MalformedLine(number, f"triples.tsv line {number}")
        graph.triples.append(Triple(int(fields[0]), int(fields[1]), int(fields[2]), fields[3]))
    if not graph.entities:
        raise EmptyFile(f"{directory}: empty archive")
    return graph


def _read_lines(path: Path) -> list[str]:
    text = path.read_text(encoding="utf-8")
    if text.endswith("\n"):
        text = text[:-1]
    return text.split("\n") if text else []


# ----------------------------------------------------- code cross-reference

_ICD9 = re.compile(r"^(V\d{2}|E\d{3}|\d{3})(\.\d{1,2})?$")
_ATC4 = re.compile(r"^[A-Z]\d{2}[A-Z]{2}$")
_ATC5 = re.compile(r"^[A-Z]\d{2}[A-Z]{2}\d{2}$")
_HPO = re.compile(r"^HP:\d{7}$")

SYSTEM_BY_CATEGORY = {"Disease": "ICD9", "Drug": "ATC", "Phenotype": "HPO"}


def normalize_code(system: str, code: str) -> str | None:
    """Validate a source code for its system; ATC-5 codes truncate to ATC-4."""
    code = code.strip()
    if system == "ICD9":
        return code if _ICD9.match(code) else None
    if system == "ATC":
        if _ATC5.match(code):
            return code[:5]
        return code if _ATC4.match(code) else None
    if system == "HPO":
        return code if _HPO.match(code) else None
    return None


class CrossRefTable:
    """(system, surface-or-source-key) -> normalized code lookups."""

    def __init__(self, entries: Iterable[tuple[str, str, str]] = ()):
        self._map: dict[tuple[str, str], str] = {}
        for system, key, code in entries:
            self.add(system, key, code)

    def add(self, system: str, key: str, code: str) -> None:
        normalized = normalize_code(system, code)
        if normalized is None:
            raise ValueError(f"{code!r} is not a valid {system} code")
        slot = (system, key.casefold())
        if slot in self._map and self._map[slot] != normalized:
            raise ConflictingMapping(f"{system}:{key!r} maps to both {self._map[slot]!r} and {normalized!r}")
        self._map[slot] = normalized

    def lookup(self, system: str, key: str) -> str | None:
        return self._map.get((system, key.casefold()))

    def __len__(self) -> int:
        return len(self._map)

    @classmethod
    def from_json(cls, payload) -> "CrossRefTable":
        table = cls()
        entries = payload.get("entries", payload) if isinstance(payload, dict) else payload
        for entry in entries:
            if isinstance(entry, dict):
                table.add(entry["system"], entry["key"], entry["code"])
            else:
                table.add(entry[0], entry[1], entry[2])
        return table


def resolve_code(entity: Entity, table: CrossRefTable) -> str | None:
    """Normalized code for an entity: table lookup by surface or source key,
    then the entity's own code field, then the surface itself as a code."""
    system = SYSTEM_BY_CATEGORY.get(entity.category)
    if system is None:
        return None
    hit = table.lookup(system, entity.surface)
    if hit is not None:
        return hit
    if entity.code is not None:
        by_key = table.lookup(system, entity.code)
        if by_key is not None:
            return by_key
        direct = normalize_code(system, entity.code)
        if direct is not None:
            return direct
    return normalize_code(system, entity.surface)


def apply_cross_reference(graph: KnowledgeGraph, table: CrossRefTable) -> KnowledgeGraph:
    """Fill normalized codes; entities without any match get code None."""
    entities = {
        eid: replace(e, code=resolve_code(e, table))
        for eid, e in graph.entities.items()
    }
    return KnowledgeGraph(entities=entities, relations=dict(graph.relations),
                          triples=list(graph.triples))


# ------------------------------------------------------------- clustering

def embed_surface(text: str, dim: int = EMBED_DIM) -> np.ndarray:
    """Character 3-gram hashing into an L2-normalized count vector.

    Deterministic across processes (no salted hashing); strings shorter than
    three characters hash as a single gram.
    """
    import zlib

    vec = np.zeros(dim, dtype=np.float64)
    s = text.casefold()
    grams = [s[i:i + 3] for i in range(len(s) - 2)] if len(s) >= 3 else [s]
    for gram in grams:
        vec[zlib.crc32(gram.encode("utf-8")) % dim] += 1.0
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def similarity_matrix(vectors: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity with an exact-equality fast path.

    Bitwise-identical rows score exactly 1.0 so a threshold of 1.0 merges
    them and nothing else.
    """
    v = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(v, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    sim = np.clip((v / safe[:, None]) @ (v / safe[:, None]).T, -1.0, 1.0)
    groups: dict[bytes, list[int]] = {}
    for i in range(v.shape[0]):
        groups.setdefault(v[i].tobytes(), []).append(i)
    for members in groups.values():
        idx = np.asarray(members)
        sim[np.ix_(idx, idx)] = 1.0
    return sim


def cluster_from_similarity(sim: np.ndarray, theta: float) -> list[list[int]]:
    """Cut the average-linkage dendrogram where cluster similarity >= theta.

    Average linkage is monotone, so for theta1 <= theta2 the theta2 cut
    refines the theta1 cut (the merge order never depends on theta).
    """
    if not 0.0 <= theta <= 1.0:
        raise InvalidThreshold(f"theta must lie in [0, 1], got {theta}")
    n = sim.shape[0]
    if n == 0:
        return []
    if n == 1:
        return [[0]]
    iu = np.triu_indices(n, k=1)
    condensed = np.maximum(1.0 - sim[iu], 0.0)
    labels = fcluster(linkage(condensed, method="average"), t=1.0 - theta, criterion="distance")
    clusters: dict[int, list[int]] = {}
    for idx, label in enumerate(labels):
        clusters.setdefault(int(label), []).append(idx)
    return sorted(clusters.values(), key=lambda members: members[0])


def cluster_entities(entities: Sequence[Entity],
                     embedder: Callable[[str], np.ndarray] = embed_surface,
                     theta: float = 0.85) -> list[tuple[int, list[int]]]:
    """Group entities by surface-embedding similarity.

    Returns (canonical id, member ids) per cluster; the canonical entity is
    the lowest id holding a normalized code, else the lowest id outright.
    """
    if not 0.0 <= theta <= 1.0:
        raise InvalidThreshold(f"theta must lie in [0, 1], got {theta}")
    if not entities:
        return []
    vectors = np.stack([embedder(e.surface) for e in entities])
    clusters = cluster_from_similarity(similarity_matrix(vectors), theta)
    out: list[tuple[int, list[int]]] = []
    for members in clusters:
        ids = sorted(entities[m].id for m in members)
        coded = sorted(entities[m].id for m in members if entities[m].code)
        out.append((coded[0] if coded else ids[0], ids))
    return out


# ------------------------------------------------------------ normalization

def _merge_pass(graph: KnowledgeGraph, table: CrossRefTable, theta: float,
                relation_theta: float, embedder: Callable[[str], np.ndarray]) -> KnowledgeGraph:
    graph = apply_cross_reference(graph, table)

    # Entities sharing a (category, code) collapse onto the lowest id.
    remap: dict[int, int] = {}
    by_code: dict[tuple[str, str], int] = {}
    for eid in sorted(graph.entities):
        e = graph.entities[eid]
        if e.code is None:
            continue
        key = (e.category, e.code)
        if key in by_code:
            remap[eid] = by_code[key]
        else:
            by_code[key] = eid
    survivors = [graph.entities[eid] for eid in sorted(graph.entities) if eid not in remap]

    # Per-category embedding clustering, but only over entities that stayed
    # uncoded: distinct normalized codes are distinct concepts no matter how
    # similar the surfaces look.
    for category in CATEGORIES:
        members = [e for e in survivors if e.category == category and e.code is None]
        if len(members) < 2:
            continue
        for canonical, ids in cluster_entities(members, embedder, theta):
            for eid in ids:
                if eid != canonical:
                    remap[eid] = canonical
    # Chase chains (code merge followed by cluster merge).
    def final(eid: int) -> int:
        while eid in remap:
            eid = remap[eid]
        return eid

    # Relation clustering by label embedding; canonical is the lowest id.
    rel_remap: dict[int, int] = {}
    rel_list = [graph.relations[rid] for rid in sorted(graph.relations)]
    if len(rel_list) >= 2:
        vectors = np.stack([embedder(r.label) for r in rel_list])
        for members in cluster_from_similarity(similarity_matrix(vectors), relation_theta):
            ids = sorted(rel_list[m].id for m in members)
            for rid in ids[1:]:
                rel_remap[rid] = ids[0]

    # Rewrite triples, drop self-loops, dedupe keeping the strongest source.
    source_rank = {name: rank for rank, name in enumerate(SOURCES)}
    best: dict[tuple[int, int, int], Triple] = {}
    order: list[tuple[int, int, int]] = []
    for t in graph.triples:
        head, tail = final(t.head), final(t.tail)
        rel = rel_remap.get(t.relation, t.relation)
        if head == tail:
            continue
        key = (head, rel, tail)
        if key not in best:
            best[key] = Triple(head, rel, tail, t.source)
            order.append(key)
        elif source_rank[t.source] < source_rank[best[key].source]:
            best[key] = Triple(head, rel, tail, t.source)
    triples = [best[key] for key in order]

    # Prune vocabulary down to what the triple set references.
    used_entities = {t.head for t in triples} | {t.tail for t in triples}
    used_relations = {t.relation for t in triples}
    entities = {eid: graph.entities[eid] for eid in sorted(used_entities)}
    relations = {rid: graph.relations[rid] for rid in sorted(used_relations)}
    return KnowledgeGraph(entities=entities, relations=relations, triples=triples)


def normalize_kg(graph: KnowledgeGraph, table: CrossRefTable | None = None,
                 theta: float = 0.85, relation_theta: float | None = None,
                 embedder: Callable[[str], np.ndarray] = embed_surface) -> KnowledgeGraph:
    """Cross-reference, merge, canonicalize, dedupe, prune; runs to a fixed point.

    The single pass is repeated until the graph stops changing, which makes
    normalize_kg(normalize_kg(g)) == normalize_kg(g) hold exactly.  Each
    pass only ever merges or drops, so the loop terminates.
    """
    if not 0.0 <= theta <= 1.0:
        raise InvalidThreshold(f"theta must lie in [0, 1], got {theta}")
    rel_theta = theta if relation_theta is None else relation_theta
    if not 0.0 <= rel_theta <= 1.0:
        raise InvalidThreshold(f"relation theta must lie in [0, 1], got {rel_theta}")
    table = table or CrossRefTable()
    current = graph
    # Each pass either merges/drops something or settles code assignments, so
    # twice the vocabulary size bounds the iteration count comfortably.
    for _ in range(2 * (len(graph.entities) + len(graph.relations)) + 4):
        reduced = _merge_pass(current, table, theta, rel_theta, embedder)
        if (reduced.entities == current.entities and reduced.relations == current.relations
                and reduced.triples == current.triples):
            return reduced
        current = reduced
    return current


def kg_stats(graph: KnowledgeGraph) -> dict:
    """Exact counts over the vocabularies and triple set."""
    by_category: dict[str, int] = {c: 0 for c in CATEGORIES}
    for e in graph.entities.values():
        by_category[e.category] += 1
    by_source: dict[str, int] = {s: 0 for s in SOURCES}
    for t in graph.triples:
        by_source[t.source] += 1
    return {
        "entities": len(graph.entities),
        "relations": len(graph.relations),
        "triples": len(graph.triples),
        "entities_by_category": {c: n for c, n in by_category.items() if n},
        "triples_by_source": {s: n for s, n in by_source.items() if n},
        "coded_entities": sum(1 for e in graph.entities.values() if e.code),
    }


def graph_to_id_triples(graph: KnowledgeGraph) -> tuple[np.ndarray, list[int], list[int]]:
    """Dense 0-based triple array for embedding training, plus row -> id maps."""
    ent_rows = {eid: row for row, eid in enumerate(sorted(graph.entities))}
    rel_rows = {rid: row for row, rid in enumerate(sorted(graph.relations))}
    triples = np.array(
        [[ent_rows[t.head], rel_rows[t.relation], ent_rows[t.tail]] for t in graph.triples],
        dtype=np.int64,
    ).reshape(-1, 3)
    return triples, sorted(graph.entities), sorted(graph.relations)
