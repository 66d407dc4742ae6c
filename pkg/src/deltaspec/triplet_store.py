"""Differential triplets and exemplar retrieval for few-shot prompting.

A triplet is (spec text, intermediate representation, code, label), where the
label says whether the code satisfies the spec text. Positives come from
description/solution records; negatives from real patches, whose before-image
is inconsistent by construction. Retrieval fuses lexical BM25 with embedding
cosine, takes the top k per label class, and returns the union ordered by
ascending complexity so prompts grow from easy to hard.

BM25 here is Okapi with the nonnegative idf variant
``ln(1 + (N - df + 0.5) / (df + 0.5))``; query tokens are iterated with
multiplicity and both sides are casefolded before matching.
"""

from __future__ import annotations

import difflib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .errors import EmptyStore, InvalidRecord
from .llm_gateway import PHASE_GRAPH, LlmGateway, request
from .tokenizer import count_tokens, token_texts

LABELS = ("consistent", "inconsistent")

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75

_IR_SYSTEM = (
    "You turn a behavior description into a terse intermediate representation: "
    "an imperative statement of what a correct implementation must do."
)


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 5
    fusion_alpha: float = 0.5
    bm25_k1: float = DEFAULT_K1
    bm25_b: float = DEFAULT_B


@dataclass(frozen=True)
class DifferentialTriplet:
    id: str
    spec_text: str
    intermediate_repr: str
    code: str
    label: str
    source: str  # "description" | "patch"
    complexity: int  # code token count

    def __post_init__(self):
        if self.label not in LABELS:
            raise InvalidRecord(f"unknown label {self.label!r}")

    def document(self) -> str:
        return f"{self.spec_text}\n{self.code}"

    def to_dict(self) -> dict:
        return {"id": self.id, "spec_text": self.spec_text,
                "intermediate_repr": self.intermediate_repr, "code": self.code,
                "label": self.label, "source": self.source,
                "complexity": self.complexity}

    @classmethod
    def from_dict(cls, d: dict) -> "DifferentialTriplet":
        return cls(id=d["id"], spec_text=d["spec_text"],
                   intermediate_repr=d["intermediate_repr"], code=d["code"],
                   label=d["label"], source=d["source"],
                   complexity=d["complexity"])


@dataclass
class CorpusStats:
    doc_count: int
    avg_len: float
    doc_freqs: dict[str, int]

    @classmethod
    def from_docs(cls, token_lists: Sequence[Sequence[str]]) -> "CorpusStats":
        n = len(token_lists)
        total = sum(len(toks) for toks in token_lists)
        freqs: dict[str, int] = {}
        for toks in token_lists:
            for term in set(toks):
                freqs[term] = freqs.get(term, 0) + 1
        return cls(doc_count=n, avg_len=(total / n if n else 0.0), doc_freqs=freqs)


def bm25_score(query_tokens: Sequence[str], doc_tokens: Sequence[str],
               stats: CorpusStats, k1: float = DEFAULT_K1,
               b: float = DEFAULT_B) -> float:
    """Okapi BM25 of one document against a query, given corpus stats."""
    if not doc_tokens or stats.doc_count == 0:
        return 0.0
    tf: dict[str, int] = {}
    for t in doc_tokens:
        tf[t] = tf.get(t, 0) + 1
    dl = len(doc_tokens)
    norm = k1 * (1.0 - b + b * dl / stats.avg_len) if stats.avg_len > 0 else k1
    score = 0.0
    for term in query_tokens:
        f = tf.get(term, 0)
        if f == 0:
            continue
        df = stats.doc_freqs.get(term, 0)
        idf = math.log(1.0 + (stats.doc_count - df + 0.5) / (df + 0.5))
        score += idf * f * (k1 + 1.0) / (f + norm)
    return score


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


class TripletStore:
    def __init__(self, triplets: Sequence[DifferentialTriplet] = ()):
        self.triplets: list[DifferentialTriplet] = list(triplets)
        self._stats: CorpusStats | None = None

    def __len__(self) -> int:
        return len(self.triplets)

    def add(self, triplet: DifferentialTriplet) -> None:
        if not triplet.spec_text.strip() or not triplet.code.strip():
            raise InvalidRecord(f"triplet {triplet.id} has empty spec text or code")
        self.triplets.append(triplet)
        self._stats = None

    def corpus_stats(self) -> CorpusStats:
        if self._stats is None:
            self._stats = CorpusStats.from_docs(
                [_doc_tokens(t) for t in self.triplets])
        return self._stats

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [json.dumps(t.to_dict(), sort_keys=True) for t in self.triplets]
        path.write_text("\n".join(lines) + ("\n" if lines else ""))

    @classmethod
    def load(cls, path: str | Path) -> "TripletStore":
        store = cls()
        for line in Path(path).read_text().splitlines():
            if line.strip():
                store.triplets.append(DifferentialTriplet.from_dict(json.loads(line)))
        return store


def _doc_tokens(triplet: DifferentialTriplet) -> list[str]:
    return [t.lower() for t in token_texts(triplet.document())]


def _generate_ir(gateway: LlmGateway, model: str, task: str, body: str) -> str:
    result = gateway.complete(
        request(model, _IR_SYSTEM, f"TASK: {task}\n{body}"), PHASE_GRAPH)
    return result.text.strip()


def synth_positive(record: Mapping, gateway: LlmGateway,
                   model: str) -> DifferentialTriplet:
    """A consistent triplet from a description/solution record."""
    description = str(record.get("description", "")).strip()
    solution = str(record.get("solution", "")).strip()
    if not description or not solution:
        raise InvalidRecord(
            f"record {record.get('id')!r} needs both description and solution")
    ir = _generate_ir(gateway, model, "synth-ir",
                      f"DESCRIPTION:\n{description}")
    return DifferentialTriplet(
        id=str(record["id"]),
        spec_text=description,
        intermediate_repr=ir,
        code=solution,
        label="consistent",
        source="description",
        complexity=count_tokens(solution),
    )


def synth_negative(record: Mapping, gateway: LlmGateway, model: str,
                   *, paired_positive: bool = False) -> list[DifferentialTriplet]:
    """Triplets from a patch record: the before-image is inconsistent with
    the patched behavior; with ``paired_positive`` the after-image joins as
    its consistent twin."""
    summary = str(record.get("summary", "")).strip()
    before = str(record.get("before", "")).strip()
    after = str(record.get("after", "")).strip()
    if not summary or not before or not after:
        raise InvalidRecord(
            f"record {record.get('id')!r} needs summary, before and after")
    if before == after:
        raise InvalidRecord(
            f"record {record.get('id')!r} has identical before and after")
    diff = "\n".join(difflib.unified_diff(
        before.splitlines(), after.splitlines(),
        fromfile="before", tofile="after", lineterm=""))
    ir = _generate_ir(gateway, model, "synth-ir-negative",
                      f"SUMMARY:\n{summary}\nDIFF:\n{diff}")
    out = [DifferentialTriplet(
        id=f"{record['id']}:before",
        spec_text=summary,
        intermediate_repr=ir,
        code=before,
        label="inconsistent",
        source="patch",
        complexity=count_tokens(before),
    )]
    if paired_positive:
        out.append(DifferentialTriplet(
            id=f"{record['id']}:after",
            spec_text=summary,
            intermediate_repr=ir,
            code=after,
            label="consistent",
            source="patch",
            complexity=count_tokens(after),
        ))
    return out


def retrieve_exemplars(
    query_text: str,
    store: TripletStore,
    gateway: LlmGateway,
    cfg: RetrievalConfig = RetrievalConfig(),
) -> list[DifferentialTriplet]:
    """Top-k exemplars per label class under the fused score.

    fused = alpha * cosine(embeddings) + (1 - alpha) * minmax(BM25), with
    BM25 min-max normalized over the store (degenerate spread maps to 0).
    The union of the per-label winners comes back sorted by ascending
    complexity, ties by id.
    """
    if len(store) == 0:
        raise EmptyStore("exemplar retrieval over an empty store")
    stats = store.corpus_stats()
    q_tokens = [t.lower() for t in token_texts(query_text)]
    q_vec = gateway.embed(query_text)
    raw_bm25: list[float] = []
    cosines: list[float] = []
    for t in store.triplets:
        raw_bm25.append(bm25_score(q_tokens, _doc_tokens(t), stats,
                                   cfg.bm25_k1, cfg.bm25_b))
        cosines.append(cosine(q_vec, gateway.embed(t.document())))
    lo, hi = min(raw_bm25), max(raw_bm25)
    spread = hi - lo
    fused: list[float] = []
    for bm, cs in zip(raw_bm25, cosines):
        norm_bm = (bm - lo) / spread if spread > 0 else 0.0
        fused.append(cfg.fusion_alpha * cs + (1.0 - cfg.fusion_alpha) * norm_bm)
    chosen: list[DifferentialTriplet] = []
    for label in LABELS:
        pool = [(f, t) for f, t in zip(fused, store.triplets) if t.label == label]
        pool.sort(key=lambda ft: (-ft[0], ft[1].id))
        chosen.extend(t for _, t in pool[:cfg.k])
    chosen.sort(key=lambda t: (t.complexity, t.id))
    return chosen
