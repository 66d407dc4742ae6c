"""Redundancy-aware chunking and the chunk/function bidirectional map.

The chunker cuts a token stream into windows of ``chunk_size`` tokens with a
trailing redundancy region. A cut prefers the latest primary boundary inside
[nominal_end, nominal_end + redundancy], falls back to the latest secondary
boundary there, and otherwise cuts at the nominal end. Every chunk after the
first starts ``redundancy`` tokens before the previous cut, so consecutive
chunks overlap and no boundary-straddling construct is lost to either side.

Chunks remember the absolute character offset of their text plus per-token
offsets, which is what lets ``reconstruct_function`` stitch a function that
crosses chunk boundaries back together byte-for-byte.
"""

from __future__ import annotations

import hashlib
from bisect import bisect_left
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .code_ingest import CodeFunction
from .errors import InvalidConfig, SpanMismatch, UnknownFunction
from .tokenizer import Token

DEFAULT_CHUNK_SIZE = 500
DEFAULT_REDUNDANCY_RATIO = 0.10

_SENTENCE_ENDERS = (".", "!", "?")


@dataclass(frozen=True)
class Chunk:
    id: str
    origin: str  # "rfc:793:3.2" or "code:v6.9:net/ipv4/tcp.c"
    index: int
    span: tuple[int, int]  # [start, end) in token indices of the stream
    text: str
    overlap_prev: int  # tokens shared with the previous chunk
    char_start: int  # absolute offset of text[0] in the source
    token_starts: tuple[int, ...]  # per-token offsets relative to char_start
    token_ends: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "origin": self.origin,
            "index": self.index,
            "span": list(self.span),
            "text": self.text,
            "overlap_prev": self.overlap_prev,
            "char_start": self.char_start,
            "token_starts": list(self.token_starts),
            "token_ends": list(self.token_ends),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Chunk":
        return cls(id=d["id"], origin=d["origin"], index=d["index"],
                   span=(d["span"][0], d["span"][1]), text=d["text"],
                   overlap_prev=d["overlap_prev"], char_start=d["char_start"],
                   token_starts=tuple(d["token_starts"]),
                   token_ends=tuple(d["token_ends"]))


def _chunk_id(origin: str, index: int, text: str) -> str:
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
    return hashlib.sha256(f"{origin}#{index}#{digest}".encode()).hexdigest()[:16]


def _coerce_tokens(tokens: Sequence[Token] | Sequence[str],
                   source_text: str | None) -> tuple[list[Token], str]:
    """Accept plain strings by synthesizing a space-joined source for them."""
    if tokens and isinstance(tokens[0], str):
        rendered: list[Token] = []
        pos = 0
        for t in tokens:
            rendered.append(Token(t, pos, pos + len(t)))
            pos += len(t) + 1
        return rendered, " ".join(tokens)  # type: ignore[arg-type]
    if source_text is None and tokens:
        raise InvalidConfig("token objects require source_text")
    return list(tokens), source_text or ""  # type: ignore[arg-type]


def _latest_in_window(sorted_bounds: Sequence[int], lo: int, hi: int) -> int | None:
    """Largest boundary b with lo <= b <= hi, else None."""
    idx = bisect_left(sorted_bounds, hi + 1) - 1
    if idx >= 0 and sorted_bounds[idx] >= lo:
        return sorted_bounds[idx]
    return None


def chunk_stream(
    tokens: Sequence[Token] | Sequence[str],
    *,
    origin: str = "stream",
    source_text: str | None = None,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    redundancy_ratio: float = DEFAULT_REDUNDANCY_RATIO,
    boundaries: Iterable[int] = (),
    fallback_boundaries: Iterable[int] = (),
) -> list[Chunk]:
    """Cut a token stream into overlapping chunks.

    ``boundaries`` and ``fallback_boundaries`` are token indices at which a
    cut is clean (for code: function ends, then statement ends; for prose:
    sentence ends). Spans always cover the stream; each non-first chunk
    overlaps its predecessor by exactly ``floor(redundancy_ratio *
    chunk_size)`` tokens.
    """
    if chunk_size <= 0:
        raise InvalidConfig(f"chunk_size must be positive, got {chunk_size}")
    if not 0.0 <= redundancy_ratio <= 0.5:
        raise InvalidConfig(
            f"redundancy_ratio must be in [0, 0.5], got {redundancy_ratio}")
    toks, text = _coerce_tokens(tokens, source_text)
    n = len(toks)
    if n == 0:
        return []
    redundancy = int(redundancy_ratio * chunk_size)
    primary = sorted(set(b for b in boundaries if 0 < b <= n))
    secondary = sorted(set(b for b in fallback_boundaries if 0 < b <= n))

    chunks: list[Chunk] = []
    start = 0
    index = 0
    while True:
        nominal = start + chunk_size
        if nominal >= n:
            end = n
        else:
            hi = min(nominal + redundancy, n)
            cut = _latest_in_window(primary, nominal, hi)
            if cut is None:
                cut = _latest_in_window(secondary, nominal, hi)
            end = cut if cut is not None else nominal
        char_lo = toks[start].start if index > 0 else 0
        char_hi = toks[end].start if end < n else len(text)
        chunk_text = text[char_lo:char_hi]
        chunks.append(Chunk(
            id=_chunk_id(origin, index, chunk_text),
            origin=origin,
            index=index,
            span=(start, end),
            text=chunk_text,
            overlap_prev=0 if index == 0 else chunks[-1].span[1] - start,
            char_start=char_lo,
            token_starts=tuple(t.start - char_lo for t in toks[start:end]),
            token_ends=tuple(t.end - char_lo for t in toks[start:end]),
        ))
        if end >= n:
            break
        start = max(end - redundancy, 0)
        index += 1
    return chunks


def statement_boundaries(tokens: Sequence[Token] | Sequence[str]) -> list[int]:
    """Token indices just after ';' or '}' runs (clean cut points in code)."""
    out = []
    for i, t in enumerate(tokens):
        text = t.text if isinstance(t, Token) else t
        if ";" in text or "}" in text:
            out.append(i + 1)
    return out


def sentence_boundaries(tokens: Sequence[Token] | Sequence[str]) -> list[int]:
    """Token indices just after sentence-ending punctuation runs."""
    out = []
    for i, t in enumerate(tokens):
        text = t.text if isinstance(t, Token) else t
        if text and all(not c.isalnum() for c in text) and text[-1] in _SENTENCE_ENDERS:
            out.append(i + 1)
    return out


@dataclass(frozen=True)
class FunctionSpan:
    """A function's extent in token space, optionally pinned to char space."""

    fid: str
    tok_start: int
    tok_end: int  # exclusive
    char_start: int | None = None
    char_end: int | None = None


def spans_for_functions(functions: Sequence[CodeFunction],
                        tokens: Sequence[Token]) -> list[FunctionSpan]:
    """Convert extracted char spans to token spans over one file's stream."""
    starts = [t.start for t in tokens]
    ends = [t.end for t in tokens]
    spans = []
    for f in functions:
        ts = bisect_left(starts, f.span.char_start)
        te = bisect_left(ends, f.span.char_end + 1)  # tokens fully inside
        spans.append(FunctionSpan(fid=f.fid, tok_start=ts, tok_end=te,
                                  char_start=f.span.char_start,
                                  char_end=f.span.char_end))
    return spans


@dataclass(frozen=True)
class MapLink:
    chunk_id: str
    fid: str
    tok_start: int
    tok_end: int


@dataclass
class ChunkFunctionMap:
    chunk_to_functions: dict[str, list[MapLink]]
    function_to_chunks: dict[str, list[MapLink]]
    spans: dict[str, FunctionSpan]

    def validate(self) -> None:
        """Mutual-inverse links and gap-free ordered coverage per function."""
        forward = {(l.chunk_id, l.fid, l.tok_start, l.tok_end)
                   for links in self.chunk_to_functions.values() for l in links}
        backward = {(l.chunk_id, l.fid, l.tok_start, l.tok_end)
                    for links in self.function_to_chunks.values() for l in links}
        if forward != backward:
            raise SpanMismatch("chunk->function and function->chunk links differ")
        for fid, links in self.function_to_chunks.items():
            span = self.spans[fid]
            pos = span.tok_start
            for link in links:
                if link.tok_start > pos:
                    raise SpanMismatch(f"gap in coverage of {fid} at {pos}")
                pos = max(pos, link.tok_end)
            if pos < span.tok_end:
                raise SpanMismatch(f"{fid} not covered past token {pos}")

    def to_dict(self) -> dict:
        return {
            "links": [
                {"chunk_id": l.chunk_id, "fid": l.fid,
                 "tok_start": l.tok_start, "tok_end": l.tok_end}
                for links in self.function_to_chunks.values() for l in links
            ],
            "spans": {
                fid: {"tok_start": s.tok_start, "tok_end": s.tok_end,
                      "char_start": s.char_start, "char_end": s.char_end}
                for fid, s in sorted(self.spans.items())
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChunkFunctionMap":
        fmap = cls(chunk_to_functions={}, function_to_chunks={}, spans={})
        for fid, s in d["spans"].items():
            fmap.spans[fid] = FunctionSpan(fid=fid, tok_start=s["tok_start"],
                                           tok_end=s["tok_end"],
                                           char_start=s.get("char_start"),
                                           char_end=s.get("char_end"))
        for l in d["links"]:
            link = MapLink(l["chunk_id"], l["fid"], l["tok_start"], l["tok_end"])
            fmap.chunk_to_functions.setdefault(link.chunk_id, []).append(link)
            fmap.function_to_chunks.setdefault(link.fid, []).append(link)
        return fmap


def build_map(chunks: Sequence[Chunk],
              spans: Iterable[FunctionSpan]) -> ChunkFunctionMap:
    """Create mutual links for every chunk/function span intersection.

    Links carry the raw intersection in token space; because consecutive
    chunks overlap, a boundary-straddling function gets overlapping links and
    reconstruction deduplicates them. A span no chunk covers end-to-end is a
    caller bug and raises SpanMismatch.
    """
    ordered = sorted(chunks, key=lambda c: c.span[0])
    fmap = ChunkFunctionMap(chunk_to_functions={c.id: [] for c in ordered},
                            function_to_chunks={}, spans={})
    for span in spans:
        fmap.spans[span.fid] = span
        links: list[MapLink] = []
        covered = span.tok_start
        for chunk in ordered:
            lo = max(chunk.span[0], span.tok_start)
            hi = min(chunk.span[1], span.tok_end)
            if lo >= hi:
                continue
            link = MapLink(chunk.id, span.fid, lo, hi)
            links.append(link)
            fmap.chunk_to_functions[chunk.id].append(link)
            if lo <= covered:
                covered = max(covered, hi)
        if not links or covered < span.tok_end:
            raise SpanMismatch(
                f"{span.fid} tokens [{span.tok_start},{span.tok_end}) "
                "not covered by the chunk stream")
        fmap.function_to_chunks[span.fid] = links
    return fmap


def reconstruct_function(fid: str, fmap: ChunkFunctionMap,
                         chunks: Mapping[str, Chunk] | Sequence[Chunk]) -> str:
    """Reassemble a function's exact source text from its chunks.

    Walks the function's links in order, taking from each only the tokens not
    already emitted, and slices chunk text by stored offsets; interior cut
    points borrow the next chunk's first claimed token start so whitespace
    between tokens survives unchanged.
    """
    if fid not in fmap.function_to_chunks:
        raise UnknownFunction(fid)
    span = fmap.spans[fid]
    store: Mapping[str, Chunk]
    if isinstance(chunks, Mapping):
        store = chunks
    else:
        store = {c.id: c for c in chunks}
    pieces: list[str] = []
    pos = span.tok_start
    for link in fmap.function_to_chunks[fid]:
        lo = max(link.tok_start, pos)
        hi = link.tok_end
        if hi <= lo:
            continue
        chunk = store[link.chunk_id]
        cs = chunk.span[0]
        if lo == span.tok_start and span.char_start is not None:
            char_lo = span.char_start - chunk.char_start
        else:
            char_lo = chunk.token_starts[lo - cs]
        if hi == span.tok_end:
            if span.char_end is not None:
                char_hi = span.char_end - chunk.char_start
            else:
                char_hi = chunk.token_ends[hi - 1 - cs]
        elif hi < chunk.span[1]:
            char_hi = chunk.token_starts[hi - cs]
        else:
            char_hi = len(chunk.text)
        pieces.append(chunk.text[char_lo:char_hi])
        pos = hi
    return "".join(pieces)
