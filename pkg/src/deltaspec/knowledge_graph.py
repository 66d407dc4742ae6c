"""Knowledge graph over spec and code chunks, with dual-path retrieval.

Entities (states, events, actions, mechanisms) are extracted per chunk by the
gateway, deduplicated by kind and normalized name, and linked three ways:
mentions (entity -> chunk), relates-to (entity <-> entity co-occurrence) and
implements-candidate (entity -> function, via the chunk/function map).
Communities come from deterministic label propagation over relates-to edges.

Retrieval walks two paths and sums their contributions: direct
implements-candidate edges from the query entities at full weight, and edges
from community siblings damped by a configurable factor. Scores only ever
accumulate, so adding an edge never demotes an already-reachable function.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .chunk_mapper import Chunk, ChunkFunctionMap
from .errors import ContractViolation, EmptyGraph, SchemaViolation
from .llm_gateway import PHASE_GRAPH, LlmGateway, request

ENTITY_KINDS = ("state", "event", "action", "mechanism")
FALLBACK_KIND = "mechanism"
DEFAULT_DAMPING = 0.5

ENTITY_CONTRACT = {
    "type": "array",
    "items": {
        "type": "object",
        "required": ["kind", "name"],
        "properties": {
            "kind": {"type": "string"},
            "name": {"type": "string", "minLength": 1},
            "description": {"type": "string"},
        },
    },
}

_EXTRACT_SYSTEM = (
    "You identify protocol entities in RFC prose or kernel source. "
    "Classify each as state, event, action, or mechanism. "
    "Respond with a JSON array of objects {kind, name, description}."
)


def normalize_name(name: str) -> str:
    return " ".join(name.lower().split())


def entity_id(kind: str, name: str) -> str:
    return hashlib.sha256(f"{kind}|{normalize_name(name)}".encode()).hexdigest()[:16]


@dataclass
class Entity:
    kind: str
    name: str
    description: str = ""
    provenance: list[str] = field(default_factory=list)  # chunk ids, in order

    def __post_init__(self):
        if self.kind not in ENTITY_KINDS:
            self.kind = FALLBACK_KIND

    @property
    def id(self) -> str:
        return entity_id(self.kind, self.name)


@dataclass(frozen=True)
class GraphEdge:
    src: str
    dst: str
    relation: str  # "mentions" | "relates-to" | "implements-candidate"
    weight: float


@dataclass(frozen=True)
class Community:
    id: int
    members: frozenset[str]
    summary: str


class KnowledgeGraph:
    def __init__(self, damping: float = DEFAULT_DAMPING):
        self.damping = damping
        self.entities: dict[str, Entity] = {}
        self.chunk_origins: dict[str, str] = {}  # chunk id -> origin
        self.function_names: dict[str, str] = {}  # fid -> function name
        self._mentions: dict[tuple[str, str], float] = {}
        self._relates: dict[tuple[str, str], float] = {}
        self._implements: dict[tuple[str, str], float] = {}
        self.communities: list[Community] = []

    # -- construction --------------------------------------------------------

    def add_entity(self, entity: Entity) -> Entity:
        existing = self.entities.get(entity.id)
        if existing is None:
            self.entities[entity.id] = entity
            return entity
        if not existing.description and entity.description:
            existing.description = entity.description
        for chunk_id in entity.provenance:
            if chunk_id not in existing.provenance:
                existing.provenance.append(chunk_id)
        return existing

    def register_chunk(self, chunk: Chunk) -> None:
        self.chunk_origins[chunk.id] = chunk.origin

    def add_mention(self, eid: str, chunk_id: str, weight: float = 1.0) -> None:
        if chunk_id not in self.chunk_origins:
            raise SchemaViolation(f"mention references unknown chunk {chunk_id}")
        key = (eid, chunk_id)
        self._mentions[key] = self._mentions.get(key, 0.0) + weight

    def add_relates(self, a: str, b: str, weight: float = 1.0) -> None:
        if a == b:
            return
        key = (min(a, b), max(a, b))
        self._relates[key] = self._relates.get(key, 0.0) + weight

    def add_implements(self, eid: str, fid: str, weight: float = 1.0) -> None:
        key = (eid, fid)
        self._implements[key] = self._implements.get(key, 0.0) + weight

    # -- views ----------------------------------------------------------------

    @property
    def edges(self) -> list[GraphEdge]:
        out = [GraphEdge(e, c, "mentions", w)
               for (e, c), w in sorted(self._mentions.items())]
        out += [GraphEdge(a, b, "relates-to", w)
                for (a, b), w in sorted(self._relates.items())]
        out += [GraphEdge(e, f, "implements-candidate", w)
                for (e, f), w in sorted(self._implements.items())]
        return out

    def relates_adjacency(self) -> dict[str, dict[str, float]]:
        adj: dict[str, dict[str, float]] = {}
        for (a, b), w in self._relates.items():  # keys are canonical (a < b)
            adj.setdefault(a, {})[b] = w
            adj.setdefault(b, {})[a] = w
        return adj

    def implements_by_entity(self) -> dict[str, list[tuple[str, float]]]:
        out: dict[str, list[tuple[str, float]]] = {}
        for (e, f), w in sorted(self._implements.items()):
            out.setdefault(e, []).append((f, w))
        return out

    def entities_by_name(self, name: str) -> list[Entity]:
        norm = normalize_name(name)
        return [e for _, e in sorted(self.entities.items())
                if normalize_name(e.name) == norm]

    def function_name(self, fid: str) -> str:
        if fid in self.function_names:
            return self.function_names[fid]
        return fid.rsplit(":", 1)[-1]

    # -- serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "damping": self.damping,
            "entities": [
                {"id": e.id, "kind": e.kind, "name": e.name,
                 "description": e.description, "provenance": e.provenance}
                for _, e in sorted(self.entities.items())
            ],
            "chunk_origins": dict(sorted(self.chunk_origins.items())),
            "function_names": dict(sorted(self.function_names.items())),
            "edges": [
                {"src": e.src, "dst": e.dst, "relation": e.relation, "weight": e.weight}
                for e in self.edges
            ],
            "communities": [
                {"id": c.id, "members": sorted(c.members), "summary": c.summary}
                for c in self.communities
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KnowledgeGraph":
        g = cls(damping=d.get("damping", DEFAULT_DAMPING))
        for e in d["entities"]:
            ent = Entity(kind=e["kind"], name=e["name"],
                         description=e.get("description", ""),
                         provenance=list(e.get("provenance", [])))
            g.entities[ent.id] = ent
        g.chunk_origins = dict(d.get("chunk_origins", {}))
        g.function_names = dict(d.get("function_names", {}))
        for e in d["edges"]:
            key = (e["src"], e["dst"])
            if e["relation"] == "mentions":
                g._mentions[key] = e["weight"]
            elif e["relation"] == "relates-to":
                g._relates[key] = e["weight"]
            else:
                g._implements[key] = e["weight"]
        g.communities = [
            Community(id=c["id"], members=frozenset(c["members"]), summary=c["summary"])
            for c in d.get("communities", [])
        ]
        return g

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "KnowledgeGraph":
        return cls.from_dict(json.loads(Path(path).read_text()))


def extract_entities(chunk: Chunk, gateway: LlmGateway, model: str) -> list[Entity]:
    """Entities mentioned in one chunk; empty chunks cost zero calls."""
    if not chunk.text.strip():
        return []
    req = request(
        model,
        _EXTRACT_SYSTEM,
        f"TASK: extract-entities\nCHUNK: {chunk.id}\nTEXT:\n{chunk.text}",
        contract=ENTITY_CONTRACT,
    )
    try:
        result = gateway.complete(req, PHASE_GRAPH)
    except ContractViolation as exc:
        raise SchemaViolation(f"entity extraction failed contract: {exc}") from exc
    seen: dict[str, Entity] = {}
    for item in result.parsed:
        ent = Entity(kind=item["kind"], name=item["name"],
                     description=item.get("description", ""),
                     provenance=[chunk.id])
        if ent.id in seen:
            continue
        seen[ent.id] = ent
    return list(seen.values())


def build_graph(
    chunks: Sequence[Chunk],
    gateway: LlmGateway,
    model: str,
    *,
    fmap: ChunkFunctionMap | None = None,
    function_names: Mapping[str, str] | None = None,
    damping: float = DEFAULT_DAMPING,
    seed: int = 0,
) -> KnowledgeGraph:
    """Assemble the graph from a chunk corpus (text and code together)."""
    graph = KnowledgeGraph(damping=damping)
    if function_names:
        graph.function_names.update(function_names)
    ordered = sorted(chunks, key=lambda c: (c.origin, c.index))
    for chunk in ordered:
        graph.register_chunk(chunk)
    for chunk in ordered:
        found = extract_entities(chunk, gateway, model)
        merged = [graph.add_entity(e) for e in found]
        ids = sorted({e.id for e in merged})
        for eid in ids:
            graph.add_mention(eid, chunk.id)
        for i, a in enumerate(ids):
            for b in ids[i + 1:]:
                graph.add_relates(a, b)
        if fmap is not None:
            links = fmap.chunk_to_functions.get(chunk.id, ())
            fids = sorted({l.fid for l in links})
            for eid in ids:
                for fid in fids:
                    graph.add_implements(eid, fid)
    graph.communities = detect_communities(graph, seed=seed)
    return graph


def detect_communities(graph: KnowledgeGraph, *, seed: int = 0,
                       max_rounds: int = 100) -> list[Community]:
    """Label propagation over relates-to edges, fully deterministic.

    Each round visits nodes in an order shuffled by a seeded RNG; a node
    adopts the neighbor label with the largest total edge weight, breaking
    ties toward the smallest (label ids are entity ids, so "ascending id").
    Stops at convergence or after ``max_rounds`` rounds. Entities with no
    relates-to edges stay in singleton communities.
    """
    ids = sorted(graph.entities)
    adj = graph.relates_adjacency()
    labels = {eid: eid for eid in ids}
    rng = random.Random(seed)
    for _ in range(max_rounds):
        order = list(ids)
        rng.shuffle(order)
        changed = False
        for node in order:
            neighbors = adj.get(node)
            if not neighbors:
                continue
            by_label: dict[str, float] = {}
            for other, w in neighbors.items():
                lbl = labels[other]
                by_label[lbl] = by_label.get(lbl, 0.0) + w
            best = max(by_label.values())
            winner = min(l for l, w in by_label.items() if w == best)
            if winner != labels[node]:
                labels[node] = winner
                changed = True
        if not changed:
            break
    groups: dict[str, list[str]] = {}
    for eid in ids:
        groups.setdefault(labels[eid], []).append(eid)
    communities = []
    for idx, members in enumerate(sorted(groups.values(), key=min)):
        names = sorted(graph.entities[m].name for m in members)
        preview = ", ".join(names[:6])
        summary = f"community of {len(members)} entities: {preview}"
        communities.append(Community(id=idx, members=frozenset(members),
                                     summary=summary))
    return communities


def retrieve_code_for_spec(
    query: Iterable[str],
    graph: KnowledgeGraph,
    k: int = 20,
) -> list[tuple[str, float]]:
    """Rank candidate functions for a set of entity names or ids.

    Path A follows implements-candidate edges from the query entities at
    weight 1.0. Path B adds the same edges from community siblings of the
    query entities, damped by the graph's damping factor. Ties break
    lexicographically by function name, then fid.
    """
    if not graph.entities:
        raise EmptyGraph("cannot retrieve from a graph with no entities")
    query_ids: set[str] = set()
    for q in query:
        if q in graph.entities:
            query_ids.add(q)
        else:
            query_ids.update(e.id for e in graph.entities_by_name(q))
    implements = graph.implements_by_entity()
    scores: dict[str, float] = {}
    for eid in sorted(query_ids):
        for fid, w in implements.get(eid, ()):
            scores[fid] = scores.get(fid, 0.0) + w
    sibling_pool: set[str] = set()
    for community in graph.communities:
        if community.members & query_ids:
            sibling_pool.update(community.members - query_ids)
    for eid in sorted(sibling_pool):
        for fid, w in implements.get(eid, ()):
            scores[fid] = scores.get(fid, 0.0) + w * graph.damping
    ranked = sorted(scores.items(),
                    key=lambda kv: (-kv[1], graph.function_name(kv[0]), kv[0]))
    return ranked[:k]
