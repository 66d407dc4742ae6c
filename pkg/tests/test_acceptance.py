"""End-to-end acceptance checks, one test per release criterion.

Each test carries an ``acceptance`` marker; the terminal summary prints one
PASS/FAIL line per criterion after the run.
"""

import hashlib
import itertools
import json
import math
import random
import time

import pytest

from conftest import FIXTURES, run_stages
from deltaspec.chunk_mapper import (
    FunctionSpan,
    build_map,
    chunk_stream,
    reconstruct_function,
)
from deltaspec.code_ingest import ExtractionStats, SourceFile, extract_functions
from deltaspec.diff_verifier import majority_verdict
from deltaspec.llm_gateway import HashEmbedder, LlmGateway, MockProvider
from deltaspec.report_cli import pipeline
from deltaspec.report_cli.cli import main
from deltaspec.report_cli.config import load_config
from deltaspec.report_cli.cost import CostModelInputs, cost_model
from deltaspec.report_cli.metrics import Confusion, compute_metrics
from deltaspec.spec_evolution import build_update_chain, load_rfc_metadata
from deltaspec.tokenizer import token_texts
from deltaspec.triplet_store import (
    LABELS,
    CorpusStats,
    DifferentialTriplet,
    RetrievalConfig,
    TripletStore,
    bm25_score,
    retrieve_exemplars,
)

VERDICTS = ("implemented", "not-implemented", "unknown")


@pytest.mark.acceptance(1, "published metrics come from a unique confusion")
def test_metrics_match_published_values_uniquely():
    started = time.monotonic()
    m = compute_metrics(Confusion(tp=15, fp=2, fn=3, tn=36))
    assert abs(100.0 * m.accuracy - 91.1) <= 0.05
    assert abs(100.0 * m.precision - 88.2) <= 0.05
    assert abs(100.0 * m.recall - 83.3) <= 0.05
    assert abs(m.f1 - 0.857) <= 0.001

    matches = []
    total = 56
    for tp in range(total + 1):
        for fp in range(total + 1 - tp):
            for fn in range(total + 1 - tp - fp):
                tn = total - tp - fp - fn
                c = compute_metrics(Confusion(tp=tp, fp=fp, tn=tn, fn=fn))
                if (abs(100.0 * c.accuracy - 91.1) <= 0.05
                        and abs(100.0 * c.precision - 88.2) <= 0.05
                        and abs(100.0 * c.recall - 83.3) <= 0.05
                        and abs(c.f1 - 0.857) <= 0.001):
                    matches.append((tp, fp, fn, tn))
    assert matches == [(15, 2, 3, 36)]
    assert time.monotonic() - started < 1.0


@pytest.mark.acceptance(2, "cost-model saving identities hold exactly")
def test_cost_identities_on_random_inputs():
    started = time.monotonic()
    rng = random.Random(24)
    for _ in range(1000):
        n = rng.randint(1, 40)
        len_spec = rng.randint(0, 20000)
        m_code = rng.randint(0, 20000)
        delta_len = rng.randint(0, len_spec)
        delta_m = rng.randint(0, m_code)
        r = cost_model(CostModelInputs(
            n_updates=n, len_spec=len_spec, m_code=m_code,
            delta_len=delta_len, delta_m=delta_m))
        assert isinstance(r.delta, int)
        assert r.delta == r.naive - r.total
        assert r.delta == (n - 1) * m_code - n * (delta_len + delta_m)
    assert time.monotonic() - started < 1.0


@pytest.mark.acceptance(3, "extraction rates round to the reference figures")
def test_extraction_rates_round_as_reported():
    stats = ExtractionStats.from_raw("linux-6.9", 1250, 37327, 69.8, 5628.7)
    assert stats.function_extraction_rate == 5.6
    assert stats.line_extraction_rate == 15.1


@pytest.mark.acceptance(4, "chunking covers, bounds overlap, round-trips")
def test_chunking_invariants_on_random_streams():
    started = time.monotonic()
    rng = random.Random(793)
    for case in range(1000):
        n = rng.randint(1, 300)
        toks = [f"w{i}" for i in range(n)]
        size = rng.randint(1, 100)
        ratio = rng.uniform(0.0, 0.5)
        bound = sorted(rng.sample(range(1, n + 1), min(rng.randint(0, 8), n)))
        extra = sorted(rng.sample(range(1, n + 1), min(rng.randint(0, 8), n)))
        chunks = chunk_stream(
            toks, origin=f"s{case}", chunk_size=size, redundancy_ratio=ratio,
            boundaries=bound, fallback_boundaries=extra)

        assert chunks[0].span[0] == 0
        assert chunks[-1].span[1] == n
        redundancy = int(ratio * size)
        for prev, cur in zip(chunks, chunks[1:]):
            overlap = prev.span[1] - cur.span[0]
            assert overlap == cur.overlap_prev
            assert 0 <= overlap <= redundancy <= 50

        spans = []
        for j in range(rng.randint(0, 3)):
            a = rng.randrange(0, n)
            spans.append(FunctionSpan(fid=f"f{j}", tok_start=a,
                                      tok_end=rng.randint(a + 1, n)))
        fmap = build_map(chunks, spans)
        fmap.validate()
        store = {c.id: c for c in chunks}
        for sp in spans:
            rebuilt = reconstruct_function(sp.fid, fmap, store)
            assert rebuilt == " ".join(toks[sp.tok_start:sp.tok_end])
    assert time.monotonic() - started < 5.0


def okapi_reference(query, doc, docs, k1=1.2, b=0.75):
    """Independent Okapi BM25 transcription used as the scoring oracle."""
    n = len(docs)
    avgdl = sum(len(d) for d in docs) / n
    score = 0.0
    for term in query:
        df = sum(1 for d in docs if term in d)
        tf = doc.count(term)
        if tf == 0:
            continue
        idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
        score += idf * tf * (k1 + 1.0) / (tf + k1 * (1 - b + b * len(doc) / avgdl))
    return score


@pytest.mark.acceptance(5, "retrieval scoring matches closed-form BM25")
def test_retrieval_against_reference_scoring():
    rng = random.Random(5925)
    gateway = LlmGateway(MockProvider(), embedder=HashEmbedder())
    for case in range(100):
        vocab = [f"t{j}" for j in range(rng.randint(4, 14))]
        docs = [[rng.choice(vocab) for _ in range(rng.randint(1, 25))]
                for _ in range(rng.randint(2, 10))]
        stats = CorpusStats.from_docs(docs)
        for _ in range(3):
            query = [rng.choice(vocab) for _ in range(rng.randint(1, 5))]
            for doc in docs:
                got = bm25_score(query, doc, stats)
                assert abs(got - okapi_reference(query, doc, docs)) <= 1e-9

        store = TripletStore()
        for i in range(rng.randint(4, 10)):
            text = " ".join(rng.choice(vocab)
                            for _ in range(rng.randint(3, 20)))
            store.add(DifferentialTriplet(
                id=f"x{i}", spec_text=text, intermediate_repr=f"IR {i}",
                code=f"code {i}", label=LABELS[i % 2], source="description",
                complexity=rng.randint(1, 99)))
        query_text = " ".join(rng.choice(vocab)
                              for _ in range(rng.randint(1, 6)))
        k = rng.randint(1, 3)

        lexical_only = retrieve_exemplars(
            query_text, store, gateway, RetrievalConfig(k=k, fusion_alpha=0.0))
        q_tokens = [t.lower() for t in token_texts(query_text)]
        corpus = store.corpus_stats()
        expected_ids = set()
        for label in LABELS:
            pool = [t for t in store.triplets if t.label == label]
            pool.sort(key=lambda t: (
                -bm25_score(q_tokens,
                            [w.lower() for w in token_texts(t.document())],
                            corpus),
                t.id))
            expected_ids.update(t.id for t in pool[:k])
        assert {t.id for t in lexical_only} == expected_ids

        fused = retrieve_exemplars(
            query_text, store, gateway,
            RetrievalConfig(k=k, fusion_alpha=rng.random()))
        for result in (lexical_only, fused):
            pairs = [(t.complexity, t.id) for t in result]
            assert pairs == sorted(pairs)


@pytest.mark.acceptance(6, "bundled RFC metadata yields the four chains")
def test_bundled_metadata_builds_expected_chains():
    metas = load_rfc_metadata(FIXTURES / "chains" / "rfc_metadata.json")
    graph = build_update_chain(metas)
    assert graph.chains() == [
        [793, 1323, 7323],
        [793, 1948, 6528],
        [793, 2385, 5925],
        [793, 5961],
    ]


@pytest.mark.acceptance(7, "mock pipeline is correct and byte-reproducible")
def test_end_to_end_mock_run_is_deterministic(mini_config):
    started = time.monotonic()
    stages = ("ingest-rfc", "ingest-code", "build-graph", "build-chains",
              "synth-triplets", "verify", "eval", "report")
    workdirs = []
    for name in ("one", "two"):
        cfg_path = mini_config(name)
        for stage in stages:
            assert main([stage, "--config", str(cfg_path)]) == 0
        workdirs.append(load_config(cfg_path).workdir)

    cells = json.loads(
        (workdirs[0] / "verify" / "matrix.json").read_text())["versions"]
    verdicts = {version: {rfc: cell["value"] for rfc, cell in row.items()}
                for version, row in cells.items()}
    assert verdicts["toy-a"] == {"793": "implemented", "1948": "implemented",
                                 "5961": "implemented", "6528": "implemented"}
    assert verdicts["toy-b"] == {"793": "implemented", "1948": "implemented",
                                 "5961": "implemented",
                                 "6528": "not-implemented"}

    lines = (workdirs[0] / "verify" / "findings.jsonl").read_text().splitlines()
    findings = [json.loads(l) for l in lines]
    assert len(findings) == 1
    assert findings[0]["system"] == "toy-b"
    assert findings[0]["rfc"] == 6528
    assert findings[0]["vulnerability_class"] == \
        "TCP sequence number prediction"
    assert findings[0]["evidence"] == [
        "net/ipv4/tcp_isn.c:11:tcp_isn_hash",
        "net/ipv4/tcp_isn.c:22:net_secret_init",
        "net/ipv4/tcp_isn.c:36:tcp_init_sequence",
    ]

    def tree_digest(root):
        digest = {}
        for path in sorted(root.rglob("*")):
            if not path.is_file():
                continue
            rel = path.relative_to(root).as_posix()
            if rel.startswith("report/"):
                continue
            digest[rel] = hashlib.sha256(path.read_bytes()).hexdigest()
        return digest

    first, second = tree_digest(workdirs[0]), tree_digest(workdirs[1])
    assert len(first) >= 20
    assert first == second

    def scrub(path):
        return "\n".join(l for l in path.read_text().splitlines()
                         if "generated" not in l)

    for name in ("report.json", "report.md"):
        assert scrub(workdirs[0] / "report" / name) == \
            scrub(workdirs[1] / "report" / name)
    assert time.monotonic() - started < 30.0


@pytest.mark.acceptance(8, "majority voting matches brute force on all ballots")
def test_majority_vote_brute_force():
    verdict, counts = majority_verdict(["unknown"] * 4 + ["implemented"])
    assert verdict == "unknown"
    assert counts == {"implemented": 1, "not-implemented": 0, "unknown": 4}
    for combo in itertools.product(VERDICTS, repeat=5):
        votes = list(combo)
        expected = next((v for v in VERDICTS if votes.count(v) >= 3),
                        "unknown")
        assert majority_verdict(votes)[0] == expected


@pytest.mark.acceptance(9, "warm rerun is cache-served with stable ledgers")
def test_warm_rerun_hits_cache_only(mini_config, monkeypatch):
    cfg_path = mini_config("warm")
    cfg = run_stages(cfg_path, through="eval")
    ledger_bytes = (cfg.workdir / "verify" / "ledger.json").read_bytes()

    built = []
    real = pipeline.make_gateway

    def spy(*args, **kwargs):
        gateway = real(*args, **kwargs)
        built.append(gateway)
        return gateway

    monkeypatch.setattr(pipeline, "make_gateway", spy)
    run_stages(cfg_path, through="eval")

    assert built
    requests = sum(g.stats.requests for g in built)
    assert requests > 0
    assert sum(g.stats.provider_calls for g in built) == 0
    assert sum(g.stats.cache_hits for g in built) == requests
    assert (cfg.workdir / "verify" / "ledger.json").read_bytes() == ledger_bytes


@pytest.mark.acceptance(10, "annotated corpus spans match hand annotations")
def test_annotated_extraction_matches_hand_spans():
    source = SourceFile.load(FIXTURES / "annotated", "annotated.c", "annotated")
    functions = extract_functions(source)
    expected = json.loads(
        (FIXTURES / "annotated" / "annotated_spans.json").read_text())
    assert len(functions) >= 10
    got = [{"name": f.name, "tier": f.extraction_tier,
            "line_start": f.span.line_start, "line_end": f.span.line_end}
           for f in functions]
    assert got == expected["functions"]
    by_name = {f.name: f for f in functions}
    assert by_name["tcp_rx_hook"].extraction_tier == "brace-fallback"
