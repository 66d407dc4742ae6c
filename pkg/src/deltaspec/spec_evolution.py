"""Functional entries, RFC update chains, and differential deltas.

An RFC's protocol content is distilled into functional entries, one per
described behavior. The updates/obsoletes metadata of a corpus forms a DAG
whose root-to-leaf paths are the update chains; for each edge, diffing the
two entry sets yields a delta (added / modified / deprecated / inherited)
and the added-or-modified entries become the verification targets for that
increment. Entry pairing is cheap lexical prefiltering; only the surviving
pairs are classified by the model.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .errors import CycleDetected, MissingDelta
from .llm_gateway import PHASE_GRAPH, LlmGateway, request
from .rfc_ingest import RfcDocument, section_sort_key
from .tokenizer import token_texts

ENTRY_STATUSES = ("new", "modified", "inherited", "deprecated")
DEFAULT_TITLE_OVERLAP = 0.5

ENTRY_CONTRACT = {
    "type": "array",
    "items": {
        "type": "object",
        "required": ["title", "summary"],
        "properties": {
            "title": {"type": "string", "minLength": 1},
            "summary": {"type": "string"},
            "concepts": {"type": "array", "items": {"type": "string"}},
        },
    },
}

_PAIR_CONTRACT = {
    "type": "object",
    "required": ["classification"],
    "properties": {"classification": {"enum": ["modified", "inherited"]}},
}

_REMOVED_CONTRACT = {
    "type": "object",
    "required": ["classification"],
    "properties": {"classification": {"enum": ["deprecated", "inherited"]}},
}

_ENTRY_SYSTEM = (
    "You distill RFC sections into functional entries: discrete protocol "
    "behaviors an implementation must provide. Respond with a JSON array of "
    "objects {title, summary, concepts} where concepts names the protocol "
    "entities involved."
)

_PAIR_SYSTEM = (
    "You compare two functional entries from consecutive spec revisions and "
    "answer whether the behavior was modified or inherited unchanged. "
    'Respond with JSON {"classification": "modified"|"inherited"}.'
)

_REMOVED_SYSTEM = (
    "An entry from the older spec has no counterpart in the newer one. "
    "Decide whether the newer spec deprecates the behavior or inherits it "
    'by reference. Respond with JSON {"classification": "deprecated"|"inherited"}.'
)


@dataclass(frozen=True)
class FunctionalEntry:
    rfc: int
    section: str
    title: str
    summary: str
    concepts: tuple[str, ...] = ()
    status: str = "new"

    def __post_init__(self):
        if self.status not in ENTRY_STATUSES:
            raise ValueError(f"unknown entry status {self.status!r}")

    @property
    def id(self) -> str:
        key = f"{self.rfc}|{self.section}|{self.title.lower()}"
        return hashlib.sha256(key.encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {"rfc": self.rfc, "section": self.section, "title": self.title,
                "summary": self.summary, "concepts": list(self.concepts),
                "status": self.status}

    @classmethod
    def from_dict(cls, d: dict) -> "FunctionalEntry":
        return cls(rfc=d["rfc"], section=d["section"], title=d["title"],
                   summary=d["summary"], concepts=tuple(d.get("concepts", ())),
                   status=d.get("status", "new"))


@dataclass
class FunctionalDelta:
    added: list[FunctionalEntry] = field(default_factory=list)
    modified: list[tuple[FunctionalEntry, FunctionalEntry]] = field(default_factory=list)
    deprecated: list[FunctionalEntry] = field(default_factory=list)
    inherited: list[FunctionalEntry] = field(default_factory=list)

    def validate(self) -> None:
        """Each entry id may appear in exactly one bucket (pairs use both sides)."""
        buckets = [
            [e.id for e in self.added],
            [old.id for old, _ in self.modified] + [new.id for _, new in self.modified],
            [e.id for e in self.deprecated],
            [e.id for e in self.inherited],
        ]
        flat = [i for b in buckets for i in b]
        if len(flat) != len(set(flat)):
            raise ValueError("delta buckets overlap")

    def targets(self) -> list[FunctionalEntry]:
        """Entries an implementation of the newer spec must newly satisfy."""
        return list(self.added) + [new for _, new in self.modified]

    def to_dict(self) -> dict:
        return {
            "added": [e.to_dict() for e in self.added],
            "modified": [[o.to_dict(), n.to_dict()] for o, n in self.modified],
            "deprecated": [e.to_dict() for e in self.deprecated],
            "inherited": [e.to_dict() for e in self.inherited],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FunctionalDelta":
        return cls(
            added=[FunctionalEntry.from_dict(e) for e in d.get("added", ())],
            modified=[(FunctionalEntry.from_dict(o), FunctionalEntry.from_dict(n))
                      for o, n in d.get("modified", ())],
            deprecated=[FunctionalEntry.from_dict(e) for e in d.get("deprecated", ())],
            inherited=[FunctionalEntry.from_dict(e) for e in d.get("inherited", ())],
        )


class _HasChainMeta(Protocol):
    number: int
    updates: tuple[int, ...]
    obsoletes: tuple[int, ...]
    published: str


@dataclass(frozen=True)
class RfcMeta:
    """Chain-relevant metadata when full document text is not needed."""

    number: int
    updates: tuple[int, ...] = ()
    obsoletes: tuple[int, ...] = ()
    published: str = "0000-00"


def load_rfc_metadata(path: str | Path) -> list[RfcMeta]:
    data = json.loads(Path(path).read_text())
    rows = data["rfcs"] if isinstance(data, dict) else data
    return [RfcMeta(number=r["number"],
                    updates=tuple(r.get("updates", ())),
                    obsoletes=tuple(r.get("obsoletes", ())),
                    published=r.get("published", "0000-00"))
            for r in rows]


@dataclass(frozen=True)
class ChainEdge:
    src: int
    dst: int
    kind: str  # "updates" | "obsoletes"


class UpdateChainGraph:
    def __init__(self, nodes: Iterable[int], edges: Iterable[ChainEdge],
                 dates: dict[int, str]):
        self.nodes = sorted(set(nodes))
        self.edges = sorted(set(edges), key=lambda e: (e.src, e.dst, e.kind))
        self.dates = dict(dates)
        self.deltas: dict[tuple[int, int], FunctionalDelta] = {}
        self._check_dag()
        self._check_dates()

    def _check_dag(self) -> None:
        indeg = {n: 0 for n in self.nodes}
        adj: dict[int, list[int]] = {n: [] for n in self.nodes}
        for e in self.edges:
            indeg[e.dst] += 1
            adj[e.src].append(e.dst)
        queue = [n for n in self.nodes if indeg[n] == 0]
        seen = 0
        while queue:
            n = queue.pop()
            seen += 1
            for m in adj[n]:
                indeg[m] -= 1
                if indeg[m] == 0:
                    queue.append(m)
        if seen != len(self.nodes):
            cyclic = sorted(n for n in self.nodes if indeg[n] > 0)
            raise CycleDetected(f"update metadata is cyclic around {cyclic}")

    def _check_dates(self) -> None:
        for e in self.edges:
            if self.dates.get(e.src, "") > self.dates.get(e.dst, ""):
                raise ValueError(
                    f"edge {e.src}->{e.dst} goes backward in time "
                    f"({self.dates.get(e.src)} > {self.dates.get(e.dst)})")

    def successors(self, node: int) -> list[int]:
        return sorted({e.dst for e in self.edges if e.src == node})

    def predecessors(self, node: int) -> list[int]:
        return sorted({e.src for e in self.edges if e.dst == node})

    def roots(self) -> list[int]:
        have_incoming = {e.dst for e in self.edges}
        return [n for n in self.nodes if n not in have_incoming]

    def chains(self) -> list[list[int]]:
        """All maximal root-to-leaf paths; a node with no edges is its own chain."""
        out: list[list[int]] = []

        def walk(path: list[int]) -> None:
            nxt = self.successors(path[-1])
            if not nxt:
                out.append(list(path))
                return
            for n in nxt:
                walk(path + [n])

        for root in self.roots():
            walk([root])
        return out

    def set_delta(self, src: int, dst: int, delta: FunctionalDelta) -> None:
        delta.validate()
        self.deltas[(src, dst)] = delta

    def to_dict(self) -> dict:
        return {
            "nodes": self.nodes,
            "dates": {str(k): v for k, v in sorted(self.dates.items())},
            "edges": [{"src": e.src, "dst": e.dst, "kind": e.kind}
                      for e in self.edges],
            "chains": self.chains(),
        }


def build_update_chain(docs: Sequence[_HasChainMeta]) -> UpdateChainGraph:
    """Edges point old -> new: an RFC that updates or obsoletes X hangs off X."""
    numbers = {d.number for d in docs}
    edges: list[ChainEdge] = []
    for d in docs:
        for target in d.updates:
            if target in numbers:
                edges.append(ChainEdge(src=target, dst=d.number, kind="updates"))
        for target in d.obsoletes:
            if target in numbers:
                edges.append(ChainEdge(src=target, dst=d.number, kind="obsoletes"))
    return UpdateChainGraph(nodes=numbers, edges=edges,
                            dates={d.number: d.published for d in docs})


def extract_functional_entries(doc: RfcDocument, gateway: LlmGateway,
                               model: str) -> list[FunctionalEntry]:
    """One pass per non-empty section, in section order."""
    entries: list[FunctionalEntry] = []
    for section in sorted(doc.sections, key=lambda s: section_sort_key(s.id)):
        prose = section.prose()
        if not prose.strip():
            continue
        req = request(
            model,
            _ENTRY_SYSTEM,
            (f"TASK: extract-entries\nRFC: {doc.number}\n"
             f"SECTION: {section.id} {section.heading}\nTEXT:\n{prose}"),
            contract=ENTRY_CONTRACT,
        )
        result = gateway.complete(req, PHASE_GRAPH)
        for item in result.parsed:
            entries.append(FunctionalEntry(
                rfc=doc.number,
                section=section.id,
                title=item["title"],
                summary=item.get("summary", ""),
                concepts=tuple(item.get("concepts", ())),
            ))
    # Dedupe identical behaviors restated across sections: keep the first.
    seen: dict[str, FunctionalEntry] = {}
    for e in entries:
        key = e.title.lower()
        if key not in seen:
            seen[key] = e
    return list(seen.values())


def title_overlap(a: str, b: str) -> float:
    """Symmetric token-set overlap of two titles, in [0, 1]."""
    ta = {t.lower() for t in token_texts(a)}
    tb = {t.lower() for t in token_texts(b)}
    if not ta or not tb:
        return 0.0
    return len(ta & tb) / max(len(ta), len(tb))


def diff_functional_entries(
    old: Sequence[FunctionalEntry],
    new: Sequence[FunctionalEntry],
    gateway: LlmGateway,
    model: str,
    *,
    overlap_threshold: float = DEFAULT_TITLE_OVERLAP,
) -> FunctionalDelta:
    """Diff two entry sets into a delta.

    Pairs form greedily from the highest title overlap down, one partner
    each, and only pairs at or above the threshold exist at all; the model
    then classifies each pair (modified vs inherited) and each unpaired old
    entry (deprecated vs inherited by reference). Unpaired new entries are
    additions, no model call needed.
    """
    candidates: list[tuple[float, FunctionalEntry, FunctionalEntry]] = []
    for o in old:
        for n in new:
            sim = title_overlap(o.title, n.title)
            if sim >= overlap_threshold:
                candidates.append((sim, o, n))
    candidates.sort(key=lambda t: (-t[0], t[1].id, t[2].id))
    paired_old: dict[str, FunctionalEntry] = {}
    paired_new: dict[str, FunctionalEntry] = {}
    pairs: list[tuple[FunctionalEntry, FunctionalEntry]] = []
    for _, o, n in candidates:
        if o.id in paired_old or n.id in paired_new:
            continue
        paired_old[o.id] = o
        paired_new[n.id] = n
        pairs.append((o, n))

    delta = FunctionalDelta()
    for o, n in pairs:
        req = request(
            model,
            _PAIR_SYSTEM,
            (f"TASK: classify-entry-pair\nOLD TITLE: {o.title}\n"
             f"OLD SUMMARY: {o.summary}\nNEW TITLE: {n.title}\n"
             f"NEW SUMMARY: {n.summary}"),
            contract=_PAIR_CONTRACT,
        )
        result = gateway.complete(req, PHASE_GRAPH)
        if result.parsed["classification"] == "modified":
            delta.modified.append((replace(o, status="modified"),
                                   replace(n, status="modified")))
        else:
            delta.inherited.append(replace(n, status="inherited"))
    for n in new:
        if n.id not in paired_new:
            delta.added.append(replace(n, status="new"))
    for o in old:
        if o.id in paired_old:
            continue
        req = request(
            model,
            _REMOVED_SYSTEM,
            (f"TASK: classify-removed-entry\nTITLE: {o.title}\n"
             f"SUMMARY: {o.summary}"),
            contract=_REMOVED_CONTRACT,
        )
        result = gateway.complete(req, PHASE_GRAPH)
        if result.parsed["classification"] == "deprecated":
            delta.deprecated.append(replace(o, status="deprecated"))
        else:
            delta.inherited.append(replace(o, status="inherited"))
    delta.validate()
    return delta


@dataclass(frozen=True)
class Increment:
    rfc_from: int
    rfc_to: int
    delta: FunctionalDelta
    targets: tuple[FunctionalEntry, ...]

    def to_dict(self) -> dict:
        return {"rfc_from": self.rfc_from, "rfc_to": self.rfc_to,
                "delta": self.delta.to_dict(),
                "targets": [e.to_dict() for e in self.targets]}

    @classmethod
    def from_dict(cls, d: dict) -> "Increment":
        return cls(rfc_from=d["rfc_from"], rfc_to=d["rfc_to"],
                   delta=FunctionalDelta.from_dict(d["delta"]),
                   targets=tuple(FunctionalEntry.from_dict(e) for e in d["targets"]))


def enumerate_increments(graph: UpdateChainGraph,
                         chain: Sequence[int]) -> list[Increment]:
    """Increments along one chain, in order; every edge needs its delta."""
    out: list[Increment] = []
    for src, dst in zip(chain, chain[1:]):
        delta = graph.deltas.get((src, dst))
        if delta is None:
            raise MissingDelta(f"no delta computed for edge {src}->{dst}")
        out.append(Increment(rfc_from=src, rfc_to=dst, delta=delta,
                             targets=tuple(delta.targets())))
    return out
