import math
import random

import pytest

from oracles import ranked, simple_paths
from sciloop.core import UsageError
from sciloop.knowledge import (
    DictionaryExtractor,
    EvidenceChain,
    ExtractionRecord,
    KnowledgeGraph,
    dense_retrieve,
    esterification_record,
    graph_search,
    ingest,
    merge_rank,
    read_records,
    retrieve_evidence,
    write_records,
)
from sciloop.similarity import cosine


def chain_kg():
    kg = KnowledgeGraph()
    rec = ExtractionRecord("s1", (("a", "concept", "first"), ("b", "method", "second"),
                                  ("c", "dataset", "third")),
                           (("a", "b", "uses"), ("b", "c", "evaluated_on")))
    return kg, rec


def test_ingest_counts_and_idempotence():
    kg, rec = chain_kg()
    assert ingest(kg, rec) == (3, 2)
    snapshot = kg.to_dict()
    assert ingest(kg, rec) == (0, 0)
    assert kg.to_dict() == snapshot
    assert kg.edges[("concept/a", "method/b", "uses")].provenance == "s1"


def test_record_validation():
    with pytest.raises(UsageError):
        ExtractionRecord("s", (("a", "concept", ""),), (("a", "zz", "r"),))
    with pytest.raises(ValueError):
        ExtractionRecord("s", (("a", "widget", ""),))


def test_esterification_fixture():
    kg = KnowledgeGraph()
    n, e = ingest(kg, esterification_record())
    assert n == 10 and e == 13
    assert ("concept/alcohol", "method/esterification", "reactant_of") in kg.edges
    assert ("method/esterification", "concept/ester", "produces") in kg.edges
    assert ("method/esterification", "concept/water", "by_product") in kg.edges
    paths = graph_search(kg, ["Alcohol"], 2)
    assert ("concept/alcohol", "method/esterification", "concept/ester") in paths


def test_graph_search_chain():
    kg, rec = chain_kg()
    ingest(kg, rec)
    a, b, c = "concept/a", "method/b", "dataset/c"
    assert graph_search(kg, ["a"], 2) == [(a,), (a, b), (a, b, c)]
    assert graph_search(kg, ["A"], 1) == [(a,), (a, b)]
    assert graph_search(kg, ["zzz"], 2) == []
    with pytest.raises(UsageError):
        graph_search(kg, ["a"], 0)


def toy_kg(n=50, m=90, seed=0):
    rng = random.Random(seed)
    vocab = "acid base ester alcohol catalyst enzyme protein lattice graph kernel flow yield".split()
    kinds = ["concept", "method", "dataset", "document"]
    ents = [(f"e{i:02d}", rng.choice(kinds), " ".join(rng.sample(vocab, 3))) for i in range(n)]
    rels = set()
    while len(rels) < m:
        a, b = rng.sample(range(n), 2)
        rels.add((f"e{a:02d}", f"e{b:02d}", rng.choice(["cites", "by_product", "uses"])))
    kg = KnowledgeGraph()
    ingest(kg, ExtractionRecord("toy", tuple(ents), tuple(sorted(rels))))
    return kg


def test_graph_search_matches_enumerator():
    kg = toy_kg()
    adj = {nid: set(kg.neighbors(nid)) for nid in kg.nodes}
    for seeds in (["e00"], ["e03", "e17"], ["E42"]):
        for hops in (1, 2, 3):
            ids = [nid for s in seeds for nid in kg.find_label(s)]
            got = graph_search(kg, seeds, hops)
            assert set(got) == simple_paths(adj, ids, hops)
            assert got == sorted(got)


def test_dense_retrieve():
    kg = toy_kg()
    target = kg.nodes["concept/e05"] if "concept/e05" in kg.nodes else next(iter(kg.nodes.values()))
    hits = dense_retrieve(kg, target.text, 3)
    assert math.isclose(hits[0][1], 1.0)
    assert len(dense_retrieve(kg, "acid", 500)) == 50
    assert dense_retrieve(KnowledgeGraph(), "x", 3) == []
    q = kg.encoder.encode("enzyme kernel yield")
    nodes = list(kg.nodes.values())
    want = ranked(nodes, lambda n: cosine(q, n.embedding))[:10]
    assert [nodes.index(n) for n, _ in dense_retrieve(kg, "enzyme kernel yield", 10)] == want


def test_merge_rank_arithmetic():
    kg, rec = chain_kg()
    ingest(kg, rec)
    a, b = "concept/a", "method/b"
    sims = {a: 0.8, b: 0.6, "dataset/c": 0.1}
    single = merge_rank(kg, [(a,)], [], 5, similarity=sims)
    assert single[0].score == 0.8
    pair = merge_rank(kg, [(a, b)], [], 5, similarity=sims)
    assert math.isclose(pair[0].score, 0.63, abs_tol=1e-12)
    assert pair[0].relations == ("uses",)
    dup = merge_rank(kg, [(a,), (b, a), (a, b)], [(kg.nodes[a], 0.8)], 5, similarity=sims)
    assert [c.path for c in dup] == [(a,), (a, b)]


def test_merge_rank_properties():
    kg = toy_kg()
    query = "catalyst enzyme"
    chains = retrieve_evidence(kg, query, ["e00", "e10"], max_hops=2, k=30)
    assert all(0 <= c.score <= 1 for c in chains)
    keys = [(-c.score, c.hops, c.path) for c in chains]
    assert keys == sorted(keys)
    assert len({frozenset(c.path) for c in chains}) == len(chains)
    for c in chains:
        assert kg.is_walk(c.path)
        for (x, y), rel in zip(zip(c.path, c.path[1:]), c.relations):
            assert rel in kg.relations_between(x, y)
    with pytest.raises(UsageError):
        merge_rank(kg, [("concept/zz",)], [], 3, similarity={})


def test_chain_invariant():
    with pytest.raises(UsageError):
        EvidenceChain(("a", "b"), (), 0.5)


def test_dictionary_extractor_and_jsonl(tmp_path):
    ex = DictionaryExtractor({"alcohol": "concept", "ester": "concept", "esterification": "method"},
                             [("esterification", "produces", "ester")])
    rec = ex("note", "Esterification of an alcohol gives an ester. Esters smell nice.")
    assert {e[0] for e in rec.entities} == {"alcohol", "ester", "esterification"}
    assert rec.relations == (("esterification", "ester", "produces"),)
    path = tmp_path / "records.jsonl"
    write_records(path, [rec, esterification_record()])
    assert read_records(path) == [rec, esterification_record()]


def test_snapshot_roundtrip(tmp_path):
    kg = toy_kg()
    kg.save(tmp_path / "kg.json")
    again = KnowledgeGraph.load(tmp_path / "kg.json")
    assert again.to_dict() == kg.to_dict()
