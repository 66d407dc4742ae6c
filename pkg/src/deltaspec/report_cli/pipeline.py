"""Stage functions that turn a config into artifacts on disk.

Each stage reads its inputs from the workdir (or the fixture tree named in
the config), does its work through the library modules, and writes JSON
artifacts. Artifacts carry no timestamps and no absolute paths, so two runs
over the same inputs are byte-for-byte identical; only the response cache
(kept outside the workdir) differs between cold and warm runs.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

from ..chunk_mapper import (
    Chunk,
    ChunkFunctionMap,
    build_map,
    chunk_stream,
    reconstruct_function,
    sentence_boundaries,
    spans_for_functions,
    statement_boundaries,
)
from ..code_ingest import (
    CodebaseIndex,
    CodeFunction,
    SourceFile,
    build_index,
    compute_extraction_stats,
)
from ..diff_verifier import Verdict, compile_findings, verify_chain
from ..errors import InvalidConfig, MissingArtifact
from ..knowledge_graph import KnowledgeGraph, build_graph
from ..llm_gateway import (
    CostLedger,
    HashEmbedder,
    HttpProvider,
    LlmGateway,
    MockProvider,
)
from ..rfc_ingest import RfcDocument, parse_rfc
from ..spec_evolution import (
    FunctionalEntry,
    Increment,
    UpdateChainGraph,
    build_update_chain,
    diff_functional_entries,
    enumerate_increments,
    extract_functional_entries,
)
from ..tokenizer import tokenize
from ..triplet_store import (
    RetrievalConfig,
    TripletStore,
    synth_negative,
    synth_positive,
)
from .config import PipelineConfig
from .metrics import Confusion, Metrics, compute_metrics
from .scripted import scripted_responder


def _write_json(path: Path, payload: object) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n",
                    encoding="utf-8")


def _write_jsonl(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(r, sort_keys=True) for r in rows]
    path.write_text("\n".join(lines) + ("\n" if lines else ""),
                    encoding="utf-8")


def _read_json(path: Path) -> object:
    if not path.is_file():
        raise MissingArtifact(f"expected artifact {path}; run the earlier "
                              "stages first")
    return json.loads(path.read_text(encoding="utf-8"))


def _read_jsonl(path: Path) -> list[dict]:
    if not path.is_file():
        raise MissingArtifact(f"expected artifact {path}; run the earlier "
                              "stages first")
    return [json.loads(line)
            for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip()]


def make_gateway(cfg: PipelineConfig) -> LlmGateway:
    ledger = CostLedger(prices=cfg.prices, unit=cfg.price_unit)
    if cfg.provider == "mock":
        if cfg.transcript is not None:
            provider = MockProvider.from_jsonl(cfg.transcript,
                                               rules=scripted_responder)
        else:
            provider = MockProvider(rules=scripted_responder)
        backoff = 0.0
    else:
        provider = HttpProvider()
        backoff = 0.5
    return LlmGateway(provider,
                      cache_dir=cfg.cache_dir,
                      ledger=ledger,
                      embedder=HashEmbedder(),
                      backoff_base=backoff)


# -- stage: ingest-rfc -------------------------------------------------------

def ingest_rfcs(cfg: PipelineConfig) -> list[RfcDocument]:
    if not cfg.rfc_sources:
        raise InvalidConfig("config lists no rfc_sources")
    docs = [parse_rfc(src.read_text(encoding="utf-8"))
            for src in cfg.rfc_sources]
    docs.sort(key=lambda d: d.number)
    _write_json(cfg.workdir / "rfc" / "docs.json",
                {"rfcs": [d.to_dict() for d in docs]})
    return docs


def load_docs(cfg: PipelineConfig) -> list[RfcDocument]:
    data = _read_json(cfg.workdir / "rfc" / "docs.json")
    return [RfcDocument.from_dict(d) for d in data["rfcs"]]


# -- stage: ingest-code ------------------------------------------------------

def _code_kwargs(cfg: PipelineConfig) -> dict:
    kwargs: dict = {}
    if cfg.code_globs is not None:
        kwargs["globs"] = cfg.code_globs
    if cfg.code_keywords is not None:
        kwargs["keywords"] = cfg.code_keywords
    return kwargs


def ingest_code(cfg: PipelineConfig, version: str) -> CodebaseIndex:
    root = cfg.code_trees.get(version)
    if root is None:
        raise InvalidConfig(f"no code tree configured for version {version!r}")
    index = build_index(root, version, stub_headers=cfg.stub_headers,
                        **_code_kwargs(cfg))
    out = cfg.workdir / "code" / version
    _write_json(out / "index.json", {
        "version": version,
        "files": [{"path": f.path, "line_count": f.line_count,
                   "token_count": f.token_count} for f in index.files],
        "total_functions": index.total_functions,
        "total_lines": index.total_lines,
    })
    _write_jsonl(out / "functions.jsonl",
                 [f.to_dict() for f in index.functions])
    return index


def load_functions(cfg: PipelineConfig, version: str) -> list[CodeFunction]:
    rows = _read_jsonl(cfg.workdir / "code" / version / "functions.jsonl")
    return [CodeFunction.from_dict(r) for r in rows]


# -- stage: build-graph ------------------------------------------------------

def _text_chunks(cfg: PipelineConfig,
                 docs: list[RfcDocument]) -> list[Chunk]:
    chunks: list[Chunk] = []
    for doc in docs:
        text = "\n\n".join(s.prose() for s in doc.sections if s.prose().strip())
        toks = tokenize(text)
        chunks.extend(chunk_stream(
            toks,
            origin=f"rfc:{doc.number}",
            source_text=text,
            chunk_size=cfg.chunk_size,
            redundancy_ratio=cfg.redundancy_ratio,
            boundaries=sentence_boundaries(toks),
        ))
    return chunks


def _code_chunks(cfg: PipelineConfig, version: str,
                 files: list[SourceFile],
                 functions: list[CodeFunction],
                 ) -> tuple[list[Chunk], ChunkFunctionMap]:
    by_file: dict[str, list[CodeFunction]] = {}
    for f in functions:
        by_file.setdefault(f.file, []).append(f)
    all_chunks: list[Chunk] = []
    merged = ChunkFunctionMap(chunk_to_functions={}, function_to_chunks={},
                              spans={})
    for src in files:
        toks = tokenize(src.content)
        if not toks:
            continue
        funcs = sorted(by_file.get(src.path, ()),
                       key=lambda f: f.span.char_start)
        func_ends = spans_for_functions(funcs, toks)
        chunks = chunk_stream(
            toks,
            origin=f"code:{version}:{src.path}",
            source_text=src.content,
            chunk_size=cfg.chunk_size,
            redundancy_ratio=cfg.redundancy_ratio,
            boundaries=[s.tok_end for s in func_ends],
            fallback_boundaries=statement_boundaries(toks),
        )
        all_chunks.extend(chunks)
        if funcs:
            fmap = build_map(chunks, func_ends)
            merged.chunk_to_functions.update(fmap.chunk_to_functions)
            merged.function_to_chunks.update(fmap.function_to_chunks)
            merged.spans.update(fmap.spans)
        else:
            merged.chunk_to_functions.update({c.id: [] for c in chunks})
    return all_chunks, merged


def build_graph_stage(cfg: PipelineConfig, version: str) -> KnowledgeGraph:
    docs = load_docs(cfg)
    root = cfg.code_trees.get(version)
    if root is None:
        raise InvalidConfig(f"no code tree configured for version {version!r}")
    functions = load_functions(cfg, version)
    files = [SourceFile.load(Path(root), rel, version)
             for rel in sorted({f.file for f in functions})]

    text_chunks = _text_chunks(cfg, docs)
    code_chunks, fmap = _code_chunks(cfg, version, files, functions)
    fmap.validate()

    _write_jsonl(cfg.workdir / "chunks" / "text.jsonl",
                 [c.to_dict() for c in text_chunks])
    _write_jsonl(cfg.workdir / "chunks" / f"code-{version}.jsonl",
                 [c.to_dict() for c in code_chunks])
    _write_json(cfg.workdir / "maps" / f"{version}.json", fmap.to_dict())

    gateway = make_gateway(cfg)
    graph = build_graph(
        text_chunks + code_chunks,
        gateway,
        cfg.model,
        fmap=fmap,
        function_names={f.fid: f.name for f in functions},
        damping=cfg.damping,
    )
    graph.save(cfg.workdir / "graph" / f"{version}.json")
    _write_json(cfg.workdir / "graph" / f"ledger-{version}.json",
                gateway.ledger.as_dict())
    return graph


# -- stage: build-chains -----------------------------------------------------

def build_chains_stage(cfg: PipelineConfig) -> UpdateChainGraph:
    docs = load_docs(cfg)
    gateway = make_gateway(cfg)
    chain_graph = build_update_chain(docs)

    entries: dict[int, list[FunctionalEntry]] = {}
    for doc in docs:
        entries[doc.number] = extract_functional_entries(doc, gateway,
                                                         cfg.model)
    for edge in chain_graph.edges:
        delta = diff_functional_entries(entries[edge.src], entries[edge.dst],
                                        gateway, cfg.model)
        chain_graph.set_delta(edge.src, edge.dst, delta)

    out = cfg.workdir / "chains"
    _write_json(out / "chains.json", chain_graph.to_dict())
    _write_jsonl(out / "entries.jsonl",
                 [{"rfc": rfc, "entries": [e.to_dict() for e in items]}
                  for rfc, items in sorted(entries.items())])
    increments: list[dict] = []
    for chain in chain_graph.chains():
        for inc in enumerate_increments(chain_graph, chain):
            increments.append(inc.to_dict())
    # Chains sharing a prefix repeat its increments; store each edge once.
    unique = {(r["rfc_from"], r["rfc_to"]): r for r in increments}
    _write_jsonl(out / "increments.jsonl",
                 [unique[k] for k in sorted(unique)])
    _write_json(out / "ledger.json", gateway.ledger.as_dict())
    return chain_graph


# -- stage: synth-triplets ---------------------------------------------------

def synth_triplets_stage(cfg: PipelineConfig) -> TripletStore:
    gateway = make_gateway(cfg)
    store = TripletStore()
    if cfg.triplet_descriptions is not None:
        for rec in _read_jsonl(cfg.triplet_descriptions):
            store.add(synth_positive(rec, gateway, cfg.model))
    if cfg.triplet_patches is not None:
        for rec in _read_jsonl(cfg.triplet_patches):
            for t in synth_negative(rec, gateway, cfg.model,
                                    paired_positive=cfg.paired_positive):
                store.add(t)
    store.save(cfg.workdir / "triplets" / "store.jsonl")
    _write_json(cfg.workdir / "triplets" / "ledger.json",
                gateway.ledger.as_dict())
    return store


# -- stage: verify -----------------------------------------------------------

def _load_verify_inputs(cfg: PipelineConfig, version: str):
    functions = load_functions(cfg, version)
    fmap = ChunkFunctionMap.from_dict(
        _read_json(cfg.workdir / "maps" / f"{version}.json"))
    chunk_rows = _read_jsonl(cfg.workdir / "chunks" / f"code-{version}.jsonl")
    chunks = {c["id"]: Chunk.from_dict(c) for c in chunk_rows}
    graph = KnowledgeGraph.load(cfg.workdir / "graph" / f"{version}.json")
    return functions, fmap, chunks, graph


def verify_stage(cfg: PipelineConfig) -> dict[str, dict[int, Verdict]]:
    docs = load_docs(cfg)
    chain_graph = build_update_chain(docs)
    entry_rows = _read_jsonl(cfg.workdir / "chains" / "entries.jsonl")
    entries = {row["rfc"]: [FunctionalEntry.from_dict(e)
                            for e in row["entries"]]
               for row in entry_rows}
    inc_rows = _read_jsonl(cfg.workdir / "chains" / "increments.jsonl")
    increments = {(r["rfc_from"], r["rfc_to"]): Increment.from_dict(r)
                  for r in inc_rows}

    store_path = cfg.workdir / "triplets" / "store.jsonl"
    store = TripletStore.load(store_path) if store_path.is_file() else None
    retrieval = RetrievalConfig(k=cfg.retrieval_k,
                                fusion_alpha=cfg.fusion_alpha)
    gateway = make_gateway(cfg)

    matrix: dict[str, dict[int, Verdict]] = {}
    task_log: dict[tuple[str, int], list[str]] = {}
    for version in cfg.versions:
        functions, fmap, chunks, graph = _load_verify_inputs(cfg, version)

        def resolver(fids, fmap=fmap, chunks=chunks):
            return {fid: reconstruct_function(fid, fmap, chunks)
                    for fid in fids}

        memo: dict = {}
        row: dict[int, Verdict] = {}
        for chain in chain_graph.chains():
            chain_incs = []
            for src, dst in zip(chain, chain[1:]):
                if (src, dst) not in increments:
                    raise MissingArtifact(
                        f"no stored increment for edge {src}->{dst}")
                chain_incs.append(increments[(src, dst)])
            row.update(verify_chain(
                chain, chain_incs, entries.get(chain[0], ()), version,
                graph, store, gateway, cfg.model, resolver,
                retrieval=retrieval, trials=cfg.trials, budget=cfg.budget,
                memo=memo, task_log=task_log))
        matrix[version] = row

        index = CodebaseIndex(version=version, files=[], functions=functions)
        selected = {rfc: fids for (v, rfc), fids in task_log.items()
                    if v == version and fids}
        if selected:
            stats = compute_extraction_stats(index, selected)
            _write_json(cfg.workdir / "verify" / f"stats-{version}.json",
                        stats.to_dict())

    _write_json(cfg.workdir / "verify" / "matrix.json", {
        "versions": {
            version: {str(rfc): verdict.to_dict()
                      for rfc, verdict in sorted(row.items())}
            for version, row in matrix.items()
        },
    })
    findings, _ = compile_findings(matrix,
                                   vulnerability_classes=_classes(cfg))
    _write_jsonl(cfg.workdir / "verify" / "findings.jsonl",
                 [f.to_dict() for f in findings])
    # Earlier stages ran in their own processes; fold their ledgers in so
    # this artifact accounts for the whole run, not just the judge trials.
    for snap_path in sorted(cfg.workdir.glob("graph/ledger-*.json")) + [
            cfg.workdir / "chains" / "ledger.json",
            cfg.workdir / "triplets" / "ledger.json"]:
        if snap_path.is_file():
            gateway.ledger.absorb(_read_json(snap_path))
    _write_json(cfg.workdir / "verify" / "ledger.json",
                gateway.ledger.as_dict())
    return matrix


def _classes(cfg: PipelineConfig) -> dict[int, str]:
    return {int(k): v for k, v in cfg.vulnerability_classes.items()}


def load_matrix(cfg: PipelineConfig) -> dict[str, dict[int, Verdict]]:
    data = _read_json(cfg.workdir / "verify" / "matrix.json")
    return {version: {int(rfc): Verdict.from_dict(v)
                      for rfc, v in cells.items()}
            for version, cells in data["versions"].items()}


# -- stage: eval -------------------------------------------------------------

def eval_stage(cfg: PipelineConfig) -> Metrics:
    if cfg.ground_truth is None:
        raise InvalidConfig("config has no ground_truth path")
    matrix = load_matrix(cfg)
    truth_raw = _read_json(cfg.ground_truth)
    truth = {version: {int(rfc): label for rfc, label in cells.items()}
             for version, cells in truth_raw.items()}
    findings, confusion = compile_findings(matrix, ground_truth=truth,
                                           vulnerability_classes=_classes(cfg))
    tp, fp, tn, fn = confusion
    conf = Confusion(tp=tp, fp=fp, tn=tn, fn=fn)
    metrics = compute_metrics(conf)
    _write_json(cfg.workdir / "eval" / "metrics.json", {
        "confusion": conf.to_dict(),
        "metrics": metrics.to_dict(),
        "findings": [f.to_dict() for f in findings],
    })
    return metrics
