"""Prompt rendering and triple extraction against an injected text oracle.

The oracle is any callable from prompt text to response text; nothing here
talks to a network.  Responses are parsed for bracketed update lines
``[ENTITY 1, RELATIONSHIP, ENTITY 2]``; every candidate group is either
accepted or rejected with a reason (Garbled, Incomplete, TermMismatch,
Duplicate).  A transcript cache keyed by (prompt hash, pass index) makes
whole harvests replayable offline.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .errors import InvalidSpec
from .kg import CATEGORIES, Entity, KnowledgeGraph, Relation, Triple

Oracle = Callable[[str], str]


@dataclass(frozen=True)
class PromptSpec:
    term: str
    category: str
    topics: str
    text: str

    def validate(self) -> None:
        for name in ("term", "category", "topics", "text"):
            if not getattr(self, name).strip():
                raise InvalidSpec(f"prompt spec field {name!r} is empty")
        if self.category not in CATEGORIES:
            raise InvalidSpec(f"unknown category {self.category!r}")


@dataclass(frozen=True)
class HarvestTriple:
    head: str
    relation: str
    tail: str


@dataclass
class ParseReport:
    accepted: list[HarvestTriple] = field(default_factory=list)
    rejected: list[tuple[str, str]] = field(default_factory=list)  # (snippet, reason)


# The in-context worked example shown in every prompt.  The update list is
# exactly what the parser should recover from this block.
EXAMPLE_TERM = "Heart Failure"
EXAMPLE_UPDATES = (
    HarvestTriple("Heart Failure", "IS_CAUSED_BY", "Narrowed Arteries"),
    HarvestTriple("Heart Failure", "IS_CAUSED_BY", "High Blood Pressure"),
    HarvestTriple("Heart Failure", "HAS_SYMPTOMS", "Shortness of Breath"),
    HarvestTriple("Heart Failure", "HAS_SYMPTOMS", "Fluid Build-up in Lungs"),
    HarvestTriple("Heart Failure", "NEEDS_TREATMENT", "Proper Treatment"),
    HarvestTriple("Heart Failure", "NEEDS_TREATMENT", "Lifestyle Changes"),
)

EXAMPLE_BLOCK = """Disease Name: Heart Failure
Topics: Overview
Text: Heart failure occurs when the heart muscle does not pump blood as well as it should. Blood then backs up, and fluid can build up in the lungs, causing shortness of breath. Conditions such as narrowed arteries in the heart and high blood pressure gradually leave the heart too weak or too stiff to fill and pump properly. Proper treatment can improve the signs of heart failure, and lifestyle changes help many people manage the condition.

Updates:
[Heart Failure, IS_CAUSED_BY, Narrowed Arteries],
[Heart Failure, IS_CAUSED_BY, High Blood Pressure],
[Heart Failure, HAS_SYMPTOMS, Shortness of Breath],
[Heart Failure, HAS_SYMPTOMS, Fluid Build-up in Lungs],
[Heart Failure, NEEDS_TREATMENT, Proper Treatment],
[Heart Failure, NEEDS_TREATMENT, Lifestyle Changes]"""

PROMPT_TEMPLATE = """Given a crawled text about a specific topic of a certain {category_lower}, please find triples related to the given {category_lower} in terms of the crawled text. The output must follow these rules:
- Fill triples into Updates based on the given information, strictly following the output style of the example updates.
- Each update should follow the format of [ENTITY 1, RELATIONSHIP, ENTITY 2] with a directed edge.
- Both ENTITY 1 and ENTITY 2 should be nouns, and one of them must be {term}.
- Output each unique triple once; do not output it repeatedly.
- The {category_lower} name may not be matched exactly in the crawled text (it can be abbreviated or partly matched); consider it as the same thing.

Example:
{example}

Given Information:
{category} Name: {term}
Topics: {topics}
Text: {text}

Updates:
"""


def render_prompt(spec: PromptSpec) -> str:
    """Deterministic prompt text for one spec; byte-stable across calls."""
    spec.validate()
    return PROMPT_TEMPLATE.format(
        category=spec.category,
        category_lower=spec.category.lower(),
        term=spec.term,
        topics=spec.topics,
        text=spec.text,
        example=EXAMPLE_BLOCK,
    )


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


_WS = re.compile(r"\s+")


def _squeeze(text: str) -> str:
    return _WS.sub(" ", text).strip()


def matches_term(entity: str, term: str) -> bool:
    """Exact, abbreviation-initials, or substring match, case-insensitive."""
    e = _squeeze(entity).casefold()
    t = _squeeze(term).casefold()
    if not e or not t:
        return False
    if e == t:
        return True
    words = t.split(" ")
    if len(words) >= 2 and e == "".join(w[0] for w in words):
        return True
    return t in e or e in t


def upper_snake(label: str) -> str:
    return re.sub(r"[\s\-]+", "_", _squeeze(label)).upper()


def parse_updates(text: str, term: str) -> ParseReport:
    """Extract update triples from a response.

    Every bracket group becomes exactly one accepted triple or one rejected
    record; a non-empty response with no bracket group at all is recorded
    once as Garbled.
    """
    report = ParseReport()
    seen: set[tuple[str, str, str]] = set()
    found_any = False
    i = 0
    while i < len(text):
        if text[i] != "[":
            i += 1
            continue
        found_any = True
        close = text.find("]", i)
        next_open = text.find("[", i + 1)
        if close == -1 or (next_open != -1 and next_open < close):
            stop = next_open if next_open != -1 else len(text)
            report.rejected.append((_squeeze(text[i:stop])[:80], "Incomplete"))
            i = stop if next_open != -1 else len(text)
            continue
        content = text[i + 1:close]
        i = close + 1
        snippet = _squeeze(f"[{content}]")[:80]
        if content.strip().endswith("..."):
            report.rejected.append((snippet, "Incomplete"))
            continue
        parts = [_squeeze(p) for p in content.split(",")]
        if len(parts) != 3 or not all(parts):
            report.rejected.append((snippet, "Garbled"))
            continue
        head, relation, tail = parts[0], upper_snake(parts[1]), parts[2]
        if not (matches_term(head, term) or matches_term(tail, term)):
            report.rejected.append((snippet, "TermMismatch"))
            continue
        key = (head.casefold(), relation, tail.casefold())
        if key in seen:
            report.rejected.append((snippet, "Duplicate"))
            continue
        seen.add(key)
        report.accepted.append(HarvestTriple(head, relation, tail))
    if not found_any and text.strip():
        report.rejected.append((_squeeze(text)[:80], "Garbled"))
    return report


# ------------------------------------------------------------- transcripts

@dataclass(frozen=True)
class TranscriptEntry:
    prompt_hash: str
    pass_index: int
    response: str


class TranscriptCache:
    """Replayable (prompt hash, pass index) -> response store, JSONL on disk."""

    def __init__(self, entries: Iterable[TranscriptEntry] = ()):
        self._store: dict[tuple[str, int], str] = {}
        for entry in entries:
            self.put(entry)

    def put(self, entry: TranscriptEntry) -> None:
        self._store[(entry.prompt_hash, entry.pass_index)] = entry.response

    def get(self, prompt_h: str, pass_index: int) -> str | None:
        return self._store.get((prompt_h, pass_index))

    def entries(self) -> list[TranscriptEntry]:
        return [TranscriptEntry(h, p, r) for (h, p), r in sorted(self._store.items())]

    def save_jsonl(self, path: str | Path) -> None:
        out = Path(path)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            for entry in self.entries():
                fh.write(json.dumps({"prompt_hash": entry.prompt_hash,
                                     "pass": entry.pass_index,
                                     "response": entry.response},
                                    sort_keys=True, ensure_ascii=False) + "\n")

    @classmethod
    def load_jsonl(cls, path: str | Path) -> "TranscriptCache":
        cache = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                row = json.loads(line)
                cache.put(TranscriptEntry(row["prompt_hash"], int(row["pass"]), row["response"]))
        return cache


# ---------------------------------------------------------------- harvest

@dataclass
class SpecOutcome:
    term: str
    accepted: list[HarvestTriple]
    rejected: list[tuple[str, str]]
    oracle_failures: int


@dataclass
class HarvestReport:
    fragment: KnowledgeGraph
    outcomes: list[SpecOutcome]
    transcript: TranscriptCache


def harvest(specs: Sequence[PromptSpec], oracle: Oracle | None, x: int = 2, y: int = 1,
            cache: TranscriptCache | None = None) -> HarvestReport:
    """Run every spec through x independent passes of 1 + y reads each.

    Responses come from `cache` when present (recorded under sequential pass
    indices), otherwise from `oracle`, whose raw output is recorded into the
    returned transcript.  Oracle errors, and cache misses when no oracle is
    given (pure replay), are counted per spec and skipped.  Accepted triples
    are unioned across reads and passes, then assembled into a
    Generated-source graph fragment.
    """
    if x < 1 or y < 0:
        raise InvalidSpec(f"need x >= 1 passes and y >= 0 re-reads, got x={x} y={y}")
    transcript = TranscriptCache()
    outcomes: list[SpecOutcome] = []
    fragment = KnowledgeGraph()
    ent_ids: dict[tuple[str, str], int] = {}
    rel_ids: dict[str, int] = {}
    triple_keys: set[tuple[int, int, int]] = set()

    def entity_id(surface: str, category: str) -> int:
        key = (surface, category)
        if key not in ent_ids:
            eid = len(ent_ids)
            ent_ids[key] = eid
            fragment.entities[eid] = Entity(eid, surface, category)
        return ent_ids[key]

    def relation_id(label: str) -> int:
        if label not in rel_ids:
            rid = len(rel_ids)
            rel_ids[label] = rid
            fragment.relations[rid] = Relation(rid, label)
        return rel_ids[label]

    for spec in specs:
        prompt = render_prompt(spec)
        p_hash = prompt_hash(prompt)
        accepted: list[HarvestTriple] = []
        seen: set[tuple[str, str, str]] = set()
        rejected: list[tuple[str, str]] = []
        failures = 0
        for pass_index in range(x * (1 + y)):
            response = cache.get(p_hash, pass_index) if cache is not None else None
            if response is None:
                if oracle is None:
                    failures += 1
                    continue
                try:
                    response = oracle(prompt)
                except Exception:  # noqa: BLE001 - oracle is foreign code
                    failures += 1
                    continue
            transcript.put(TranscriptEntry(p_hash, pass_index, response))
            report = parse_updates(response, spec.term)
            rejected.extend(report.rejected)
            for triple in report.accepted:
                key = (triple.head.casefold(), triple.relation, triple.tail.casefold())
                if key in seen:
                    continue
                seen.add(key)
                accepted.append(triple)
        outcomes.append(SpecOutcome(spec.term, accepted, rejected, failures))
        for triple in accepted:
            head_cat = spec.category if matches_term(triple.head, spec.term) else "Other"
            tail_cat = spec.category if matches_term(triple.tail, spec.term) else "Other"
            h = entity_id(triple.head, head_cat)
            t = entity_id(triple.tail, tail_cat)
            r = relation_id(triple.relation)
            if (h, r, t) not in triple_keys:
                triple_keys.add((h, r, t))
                fragment.triples.append(Triple(h, r, t, "Generated"))
    return HarvestReport(fragment=fragment, outcomes=outcomes, transcript=transcript)
