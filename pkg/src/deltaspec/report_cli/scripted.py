"""Deterministic rule-based responder backing the offline mock provider.

Each prompt the pipeline emits begins with a TASK marker; this module answers
from fixed keyword tables so the bundled corpus produces the same artifacts on
every machine, with no model in the loop. The rules only read what is in the
prompt (chunk text, summaries, key terms, candidate code), the same signals a
live judge would see.
"""

from __future__ import annotations

import json
import re

from ..llm_gateway import LlmRequest

# (any-of trigger phrases, kind, canonical entity name)
ENTITY_RULES: tuple[tuple[tuple[str, ...], str, str], ...] = (
    (("initial sequence number", "isn"), "mechanism", "isn generation"),
    (("secret key",), "mechanism", "secret key"),
    (("reseed",), "event", "secret key reseed"),
    (("challenge ack",), "action", "challenge ack"),
    (("rst",), "event", "rst segment"),
    (("syn",), "event", "syn segment"),
    (("receive window",), "state", "receive window"),
    (("timestamp",), "mechanism", "timestamps option"),
    (("md5",), "mechanism", "md5 signature"),
)

# (all-of trigger phrases, title, summary, concepts)
ENTRY_RULES: tuple[tuple[tuple[str, ...], str, str, tuple[str, ...]], ...] = (
    (("initial sequence number",),
     "initial sequence number generation",
     "Generate initial sequence numbers that resist off-path prediction.",
     ("isn generation",)),
    (("secret key", "hash"),
     "keyed hash isn computation",
     "Compute initial sequence numbers with a keyed hash over the connection "
     "identifiers.",
     ("secret key", "isn generation")),
    (("reseed",),
     "periodic secret key reseeding",
     "Reseed the secret key used for initial sequence number computation.",
     ("secret key reseed", "secret key")),
    (("challenge ack",),
     "challenge ack response",
     "Answer questionable rst or syn segments with a challenge acknowledgment.",
     ("challenge ack",)),
    (("rst", "receive window"),
     "rst acceptance validation",
     "Accept an rst segment only if its sequence number is inside the receive "
     "window.",
     ("rst segment", "receive window")),
)

_TASK_RE = re.compile(r"^TASK:\s*(\S+)", re.MULTILINE)
_FUNCTION_RE = re.compile(r"^FUNCTION (.+):$", re.MULTILINE)


def _normalize(text: str) -> str:
    return text.lower().replace("_", " ")


def _has_phrase(text: str, phrase: str) -> bool:
    pattern = rf"(?<![a-z0-9]){re.escape(phrase)}(?![a-z0-9])"
    return re.search(pattern, text) is not None


def _after_marker(content: str, marker: str) -> str:
    idx = content.find(marker)
    return content[idx + len(marker):] if idx >= 0 else ""


def _line_value(content: str, prefix: str) -> str:
    for line in content.splitlines():
        if line.startswith(prefix):
            return line[len(prefix):].strip()
    return ""


def scripted_responder(req: LlmRequest) -> str | None:
    content = req.messages[-1][1]
    m = _TASK_RE.search(content)
    if not m:
        return None
    task = m.group(1)
    handler = _HANDLERS.get(task)
    return handler(content) if handler else None


def _extract_entities(content: str) -> str:
    text = _normalize(_after_marker(content, "TEXT:\n"))
    out = []
    for triggers, kind, name in ENTITY_RULES:
        if any(_has_phrase(text, t) for t in triggers):
            out.append({"kind": kind, "name": name,
                        "description": f"{name} as referenced in the source"})
    return json.dumps(out)


def _extract_entries(content: str) -> str:
    text = _normalize(_after_marker(content, "TEXT:\n"))
    out = []
    for triggers, title, summary, concepts in ENTRY_RULES:
        if all(_has_phrase(text, t) for t in triggers):
            out.append({"title": title, "summary": summary,
                        "concepts": list(concepts)})
    return json.dumps(out)


def _classify_pair(content: str) -> str:
    old_summary = _line_value(content, "OLD SUMMARY:")
    new_summary = _line_value(content, "NEW SUMMARY:")
    verdict = "inherited" if old_summary == new_summary else "modified"
    return json.dumps({"classification": verdict})


def _classify_removed(content: str) -> str:
    return json.dumps({"classification": "inherited"})


def _synth_ir(content: str) -> str:
    body = _after_marker(content, "DESCRIPTION:\n").strip()
    first = body.splitlines()[0] if body else ""
    return f"A correct implementation must: {first}"


def _synth_ir_negative(content: str) -> str:
    summary = _after_marker(content, "SUMMARY:\n").split("DIFF:")[0].strip()
    first = summary.splitlines()[0] if summary else ""
    return f"A correct implementation must: {first}"


def _generate_ir(content: str) -> str:
    titles = []
    in_targets = False
    for line in content.splitlines():
        if line.startswith("TARGETS:"):
            in_targets = True
            continue
        if in_targets:
            if line.startswith("- "):
                titles.append(line[2:].split(":", 1)[0].strip())
            else:
                break
    return "The implementation must provide: " + "; ".join(titles)


def _judge(content: str) -> str:
    terms_line = _line_value(content, "KEY TERMS:")
    terms = [t.strip() for t in terms_line.split(";") if t.strip()]
    tail = _after_marker(content, "CANDIDATES:")
    headers = list(_FUNCTION_RE.finditer(tail))
    bodies: list[tuple[str, str]] = []
    for i, h in enumerate(headers):
        end = headers[i + 1].start() if i + 1 < len(headers) else len(tail)
        bodies.append((h.group(1), _normalize(tail[h.end():end])))
    joined = "\n".join(b for _, b in bodies)
    words = {w for term in terms for w in term.split()}
    missing = sorted(
        term for term in terms
        if not all(w in joined for w in term.split()))
    cited = [fid for fid, body in bodies
             if any(w in body for w in words)][:5]
    if missing:
        verdict = "not-implemented"
        rationale = "missing key terms: " + "; ".join(missing)
    else:
        verdict = "implemented"
        rationale = "all key terms present: " + "; ".join(terms)
    return json.dumps({"verdict": verdict, "rationale": rationale,
                       "cited_functions": cited})


_HANDLERS = {
    "extract-entities": _extract_entities,
    "extract-entries": _extract_entries,
    "classify-entry-pair": _classify_pair,
    "classify-removed-entry": _classify_removed,
    "synth-ir": _synth_ir,
    "synth-ir-negative": _synth_ir_negative,
    "generate-ir": _generate_ir,
    "judge-increment": _judge,
}
