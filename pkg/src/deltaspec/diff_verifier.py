"""Incremental differential verification: trials, verdicts, findings.

Each verification task asks one question: does this code version implement
the functionality a spec increment introduced? The judge runs an odd number
of independent trials; a value wins only with a strict majority, otherwise
the cell is unknown. Unknown maps to not-implemented for classification but
stays flagged so a reader can tell abstention from refutation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

from .errors import (ContractViolation, EmptyResponse, GatewayError,
                     ShapeMismatch, UnknownFunction, VerificationAborted)
from .knowledge_graph import KnowledgeGraph, retrieve_code_for_spec
from .llm_gateway import PHASE_REASONING, LlmGateway, request
from .spec_evolution import FunctionalEntry, Increment
from .triplet_store import RetrievalConfig, TripletStore, retrieve_exemplars

IMPLEMENTED = "implemented"
NOT_IMPLEMENTED = "not-implemented"
UNKNOWN = "unknown"
VERDICT_VALUES = (IMPLEMENTED, NOT_IMPLEMENTED, UNKNOWN)

DEFAULT_TRIALS = 5
DEFAULT_BUDGET = 20

GROUND_TRUTH_LABELS = ("consistent", "inconsistent")

JUDGMENT_CONTRACT = {
    "type": "object",
    "required": ["verdict"],
    "properties": {
        "verdict": {"enum": list(VERDICT_VALUES)},
        "rationale": {"type": "string"},
        "cited_functions": {"type": "array", "items": {"type": "string"}},
    },
}

_IR_SYSTEM = (
    "You compress spec functionality into a terse intermediate representation: "
    "one imperative paragraph stating what a conforming implementation must do."
)

_JUDGE_SYSTEM = (
    "You compare an intermediate representation of required spec behavior "
    "against candidate kernel functions and decide whether the behavior is "
    "implemented. Respond with JSON "
    '{"verdict": "implemented"|"not-implemented"|"unknown", '
    '"rationale": str, "cited_functions": [str]}.'
)


@dataclass(frozen=True)
class VerificationTask:
    rfc: int
    code_version: str
    targets: tuple[FunctionalEntry, ...]
    candidates: tuple[tuple[str, float], ...]  # (fid, retrieval weight)
    rfc_from: int | None = None  # None = whole-RFC mode
    budget: int = DEFAULT_BUDGET

    def trimmed_candidates(self) -> tuple[tuple[str, float], ...]:
        return self.candidates[:self.budget]

    @property
    def subject(self) -> str:
        return "; ".join(t.title for t in self.targets)

    def key_terms(self) -> list[str]:
        seen: list[str] = []
        for t in self.targets:
            for c in t.concepts:
                if c not in seen:
                    seen.append(c)
        return seen


@dataclass(frozen=True)
class Trial:
    index: int
    verdict: str
    rationale: str
    cited: tuple[str, ...]
    ir_text: str


@dataclass(frozen=True)
class Verdict:
    value: str
    trials: tuple[Trial, ...]
    counts: dict[str, int]
    subject: str
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "counts": {k: self.counts.get(k, 0) for k in VERDICT_VALUES},
            "subject": self.subject,
            "flags": list(self.flags),
            "trials": [
                {"index": t.index, "verdict": t.verdict, "rationale": t.rationale,
                 "cited": list(t.cited), "ir_text": t.ir_text}
                for t in self.trials
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Verdict":
        return cls(
            value=d["value"],
            trials=tuple(Trial(index=t["index"], verdict=t["verdict"],
                               rationale=t["rationale"], cited=tuple(t["cited"]),
                               ir_text=t["ir_text"]) for t in d["trials"]),
            counts=dict(d["counts"]),
            subject=d["subject"],
            flags=tuple(d.get("flags", ())),
        )


@dataclass(frozen=True)
class Finding:
    system: str
    rfc: int
    description: str
    vulnerability_class: str
    evidence: tuple[str, ...]
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"system": self.system, "rfc": self.rfc,
                "description": self.description,
                "vulnerability_class": self.vulnerability_class,
                "evidence": list(self.evidence), "flags": list(self.flags)}

    @classmethod
    def from_dict(cls, d: dict) -> "Finding":
        return cls(system=d["system"], rfc=d["rfc"],
                   description=d["description"],
                   vulnerability_class=d["vulnerability_class"],
                   evidence=tuple(d["evidence"]), flags=tuple(d.get("flags", ())))


def majority_verdict(votes: Sequence[str]) -> tuple[str, dict[str, int]]:
    """Strict-majority vote: a decided value must win more than half the
    trials outright; anything else, including an unknown plurality, is
    unknown."""
    if not votes:
        raise EmptyResponse("no trial votes to aggregate")
    counts = {v: 0 for v in VERDICT_VALUES}
    for v in votes:
        if v not in counts:
            raise EmptyResponse(f"unusable verdict value {v!r}")
        counts[v] += 1
    threshold = len(votes) / 2.0
    for value in (IMPLEMENTED, NOT_IMPLEMENTED):
        if counts[value] > threshold:
            return value, counts
    return UNKNOWN, counts


def generate_intermediate_repr(
    task: VerificationTask,
    exemplars: Sequence,
    gateway: LlmGateway,
    model: str,
    trial: int,
) -> str:
    lines = [f"TASK: generate-ir", f"TRIAL: {trial}", f"RFC: {task.rfc}", "TARGETS:"]
    for t in task.targets:
        concepts = ", ".join(t.concepts)
        lines.append(f"- {t.title}: {t.summary} [concepts: {concepts}]")
    if exemplars:
        lines.append("EXEMPLAR IRS:")
        for ex in exemplars:
            lines.append(f"- {ex.intermediate_repr}")
    result = gateway.complete(request(model, _IR_SYSTEM, "\n".join(lines)),
                              PHASE_REASONING)
    return result.text.strip()


def _judge_once(
    task: VerificationTask,
    ir_text: str,
    code_texts: Mapping[str, str],
    exemplars: Sequence,
    gateway: LlmGateway,
    model: str,
    trial: int,
) -> Trial:
    lines = [
        "TASK: judge-increment",
        f"TRIAL: {trial}",
        f"RFC: {task.rfc}",
        f"CODE VERSION: {task.code_version}",
        "IR:",
        ir_text,
        "KEY TERMS: " + "; ".join(task.key_terms()),
    ]
    if exemplars:
        lines.append("EXEMPLARS:")
        for ex in exemplars:
            lines.append(f"--- exemplar ({ex.label}) ---")
            lines.append(f"spec: {ex.spec_text}")
            lines.append(f"code:\n{ex.code}")
    lines.append("CANDIDATES:")
    for fid, _ in task.trimmed_candidates():
        body = code_texts.get(fid)
        if body is None:
            raise UnknownFunction(f"no code text supplied for candidate {fid}")
        lines.append(f"FUNCTION {fid}:")
        lines.append(body)
    req = request(model, _JUDGE_SYSTEM, "\n".join(lines),
                  contract=JUDGMENT_CONTRACT)
    try:
        result = gateway.complete(req, PHASE_REASONING)
    except ContractViolation as exc:
        raise EmptyResponse(f"judgment yielded no usable verdict: {exc}") from exc
    parsed = result.parsed
    allowed = {fid for fid, _ in task.trimmed_candidates()}
    cited = tuple(f for f in parsed.get("cited_functions", ()) if f in allowed)
    return Trial(index=trial, verdict=parsed["verdict"],
                 rationale=parsed.get("rationale", ""), cited=cited,
                 ir_text=ir_text)


def verify_increment(
    task: VerificationTask,
    code_texts: Mapping[str, str],
    store: TripletStore | None,
    gateway: LlmGateway,
    model: str,
    *,
    retrieval: RetrievalConfig = RetrievalConfig(),
    trials: int = DEFAULT_TRIALS,
) -> Verdict:
    """Run all trials for one task and aggregate the votes.

    Exemplars are retrieved once per task and shared by every trial; the
    trial index is embedded in each prompt so repeated sampling is real
    sampling, not cache replay. A gateway failure mid-task aborts with the
    completed trials attached.
    """
    if trials < 1 or trials % 2 == 0:
        raise ValueError(f"trials must be odd and positive, got {trials}")
    if not task.targets:
        raise ValueError("verification task has no target entries")
    exemplars: Sequence = ()
    if store is not None and len(store) > 0:
        query = "\n".join(f"{t.title} {t.summary}" for t in task.targets)
        exemplars = retrieve_exemplars(query, store, gateway, retrieval)
    done: list[Trial] = []
    flags: list[str] = []
    if task.rfc_from is None:
        flags.append("whole-rfc")
    if not task.trimmed_candidates():
        flags.append("no-candidates")
    for t in range(1, trials + 1):
        try:
            ir = generate_intermediate_repr(task, exemplars, gateway, model, t)
            done.append(_judge_once(task, ir, code_texts, exemplars,
                                    gateway, model, t))
        except GatewayError as exc:
            raise VerificationAborted(
                f"gateway failed on trial {t}/{trials} for RFC {task.rfc}: {exc}",
                partial_trials=done) from exc
    value, counts = majority_verdict([t.verdict for t in done])
    return Verdict(value=value, trials=tuple(done), counts=counts,
                   subject=task.subject, flags=tuple(flags))


def verify_chain(
    chain: Sequence[int],
    increments: Sequence[Increment],
    root_entries: Sequence[FunctionalEntry],
    code_version: str,
    graph: KnowledgeGraph,
    store: TripletStore | None,
    gateway: LlmGateway,
    model: str,
    code_text_resolver: Callable[[Sequence[str]], Mapping[str, str]],
    *,
    retrieval: RetrievalConfig = RetrievalConfig(),
    trials: int = DEFAULT_TRIALS,
    budget: int = DEFAULT_BUDGET,
    memo: dict | None = None,
    task_log: dict[tuple[str, int], list[str]] | None = None,
) -> dict[int, Verdict]:
    """One matrix row: a Verdict per chain RFC for one code version.

    The chain root is verified in whole-RFC mode over all its entries; each
    edge is verified over its increment targets. An increment with no targets
    inherits the predecessor's verdict, flagged. ``memo`` (keyed by
    (version, rfc)) lets overlapping chains share cells; ``task_log`` (same
    keys) collects the candidate fids each verified cell actually saw.
    """
    row: dict[int, Verdict] = {}
    memo = memo if memo is not None else {}

    def run_task(rfc: int, rfc_from: int | None,
                 targets: Sequence[FunctionalEntry]) -> Verdict:
        key = (code_version, rfc)
        if key in memo:
            return memo[key]
        concepts: list[str] = []
        for entry in targets:
            for c in entry.concepts:
                if c not in concepts:
                    concepts.append(c)
        candidates = tuple(retrieve_code_for_spec(concepts, graph, k=budget))
        task = VerificationTask(rfc=rfc, code_version=code_version,
                                targets=tuple(targets), candidates=candidates,
                                rfc_from=rfc_from, budget=budget)
        if task_log is not None:
            task_log[key] = [fid for fid, _ in task.trimmed_candidates()]
        code_texts = code_text_resolver([fid for fid, _ in task.trimmed_candidates()])
        verdict = verify_increment(task, code_texts, store, gateway, model,
                                   retrieval=retrieval, trials=trials)
        memo[key] = verdict
        return verdict

    root = chain[0]
    row[root] = run_task(root, None, tuple(root_entries))
    previous = row[root]
    for inc in increments:
        if inc.targets:
            verdict = run_task(inc.rfc_to, inc.rfc_from, inc.targets)
        else:
            key = (code_version, inc.rfc_to)
            if key in memo:
                verdict = memo[key]
            else:
                verdict = replace(previous,
                                  flags=tuple(previous.flags) + ("inherited",))
                memo[key] = verdict
        row[inc.rfc_to] = verdict
        previous = verdict
    return row


def compile_findings(
    matrix: Mapping[str, Mapping[int, Verdict | str]],
    ground_truth: Mapping[str, Mapping[int, str]] | None = None,
    vulnerability_classes: Mapping[int, str] | None = None,
) -> tuple[list[Finding], tuple[int, int, int, int] | None]:
    """Findings from a verdict matrix, plus confusion counts in eval mode.

    A finding is produced for every cell judged not-implemented (unknown
    counts as not-implemented, flagged "unknown-verdict") and, when ground
    truth is supplied, for every cell that disagrees with it (flagged
    "ground-truth-mismatch"). The confusion is (TP, FP, TN, FN) with
    "inconsistency present" as the positive class.
    """
    if ground_truth is not None:
        if set(matrix) != set(ground_truth):
            raise ShapeMismatch(
                f"matrix versions {sorted(matrix)} != truth versions "
                f"{sorted(ground_truth)}")
        for version in matrix:
            if set(matrix[version]) != set(ground_truth[version]):
                raise ShapeMismatch(
                    f"version {version}: matrix RFCs != ground truth RFCs")
    classes = vulnerability_classes or {}
    findings: list[Finding] = []
    tp = fp = fn = tn = 0
    for version in sorted(matrix):
        for rfc in sorted(matrix[version]):
            cell = matrix[version][rfc]
            if isinstance(cell, Verdict):
                value = cell.value
                verdict = cell
            else:
                value = cell
                verdict = None
            predicted_positive = value != IMPLEMENTED
            flags: list[str] = []
            if value == UNKNOWN:
                flags.append("unknown-verdict")
            mismatch = False
            if ground_truth is not None:
                truth = ground_truth[version][rfc]
                if truth not in GROUND_TRUTH_LABELS:
                    raise ShapeMismatch(
                        f"ground truth label {truth!r} for {version}/{rfc}")
                truth_positive = truth == "inconsistent"
                if predicted_positive and truth_positive:
                    tp += 1
                elif predicted_positive and not truth_positive:
                    fp += 1
                elif not predicted_positive and truth_positive:
                    fn += 1
                else:
                    tn += 1
                if predicted_positive != truth_positive:
                    mismatch = True
                    flags.append("ground-truth-mismatch")
            if not (predicted_positive or mismatch):
                continue
            description = f"RFC {rfc} functionality not confirmed in {version}"
            evidence: tuple[str, ...] = ()
            if verdict is not None:
                majority_trials = [t for t in verdict.trials if t.verdict == value]
                source_trials = majority_trials or list(verdict.trials)
                if source_trials and source_trials[0].rationale:
                    description = f"{verdict.subject}: {source_trials[0].rationale}"
                elif verdict.subject:
                    description = verdict.subject
                cited: list[str] = []
                for t in source_trials:
                    for fid in t.cited:
                        if fid not in cited:
                            cited.append(fid)
                evidence = tuple(sorted(cited))
            findings.append(Finding(
                system=version,
                rfc=rfc,
                description=description,
                vulnerability_class=classes.get(rfc, "unclassified"),
                evidence=evidence,
                flags=tuple(flags),
            ))
    confusion = (tp, fp, tn, fn) if ground_truth is not None else None
    return findings, confusion
