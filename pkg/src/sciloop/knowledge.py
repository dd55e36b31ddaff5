"""Typed knowledge graph with path search, dense retrieval and merged evidence chains."""

from __future__ import annotations

import json
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from sciloop.core import UsageError
from sciloop.similarity import DenseVector, HashingEncoder, cosine, topk


class KgKind(str, Enum):
    DOCUMENT = "document"
    CONCEPT = "concept"
    METHOD = "method"
    DATASET = "dataset"
    EMPIRICAL_SETTING = "empirical_setting"
    PROBLEM_STATEMENT = "problem_statement"


def node_key(label: str, kind: KgKind | str) -> str:
    return f"{KgKind(kind).value}/{label}"


@dataclass
class KgNode:
    id: str
    kind: KgKind
    label: str
    text: str
    embedding: DenseVector

    def to_dict(self) -> dict:
        return {"id": self.id, "kind": self.kind.value, "label": self.label, "text": self.text}


@dataclass(frozen=True)
class KgEdge:
    src: str
    dst: str
    relation: str
    provenance: str

    def to_dict(self) -> dict:
        return {"from": self.src, "to": self.dst, "relation": self.relation,
                "provenance": self.provenance}


@dataclass(frozen=True)
class ExtractionRecord:
    """Output of an upstream extractor: entities plus relations between their labels."""

    source_id: str
    entities: tuple[tuple[str, str, str], ...]
    relations: tuple[tuple[str, str, str], ...] = ()

    def __post_init__(self):
        ents = tuple((str(l), KgKind(k).value, str(t)) for l, k, t in self.entities)
        rels = tuple((str(a), str(b), str(r)) for a, b, r in self.relations)
        object.__setattr__(self, "entities", ents)
        object.__setattr__(self, "relations", rels)
        if not self.source_id:
            raise UsageError("record needs a source id")
        kinds: dict[str, set[str]] = {}
        for label, kind, _ in ents:
            if not label.strip():
                raise UsageError(f"record {self.source_id}: empty entity label")
            kinds.setdefault(label, set()).add(kind)
        for a, b, rel in rels:
            for end in (a, b):
                if end not in kinds:
                    raise UsageError(f"record {self.source_id}: relation names unknown entity {end!r}")
                if len(kinds[end]) > 1:
                    raise UsageError(f"record {self.source_id}: label {end!r} is ambiguous across kinds")
            if not rel:
                raise UsageError(f"record {self.source_id}: empty relation tag")

    def to_dict(self) -> dict:
        return {"source_id": self.source_id,
                "entities": [list(e) for e in self.entities],
                "relations": [list(r) for r in self.relations]}

    @classmethod
    def from_dict(cls, d: dict) -> ExtractionRecord:
        return cls(d["source_id"], tuple(tuple(e) for e in d["entities"]),
                   tuple(tuple(r) for r in d.get("relations", ())))


def read_records(path: str | Path) -> list[ExtractionRecord]:
    """Load an extraction JSONL file: one ``{source_id, entities, relations}`` object per line."""
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            out.append(ExtractionRecord.from_dict(json.loads(line)))
    return out


def write_records(path: str | Path, records: Iterable[ExtractionRecord]) -> None:
    Path(path).write_text("".join(json.dumps(r.to_dict()) + "\n" for r in records))


@dataclass(frozen=True)
class EvidenceChain:
    path: tuple[str, ...]
    relations: tuple[str, ...]
    score: float

    def __post_init__(self):
        if len(self.relations) != len(self.path) - 1:
            raise UsageError("an evidence chain has one relation per hop")

    @property
    def hops(self) -> int:
        return len(self.path) - 1

    def to_dict(self) -> dict:
        return {"path": list(self.path), "relations": list(self.relations), "score": self.score}


class KnowledgeGraph:
    def __init__(self, encoder: HashingEncoder | None = None):
        self.encoder = encoder or HashingEncoder()
        self.nodes: dict[str, KgNode] = {}
        self.edges: dict[tuple[str, str, str], KgEdge] = {}
        self._adj: dict[str, set[str]] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def _embed(self, label: str, text: str) -> DenseVector:
        return self.encoder.encode(text or label)

    def upsert(self, label: str, kind: KgKind | str, text: str = "") -> tuple[str, bool]:
        kind = KgKind(kind)
        if not label.strip():
            raise UsageError("node label must be non-empty")
        nid = node_key(label, kind)
        existing = self.nodes.get(nid)
        if existing is None:
            self.nodes[nid] = KgNode(nid, kind, label, text, self._embed(label, text))
            self._adj[nid] = set()
            return nid, True
        if text and text != existing.text:
            existing.text = text
            existing.embedding = self._embed(label, text)
        return nid, False

    def add_edge(self, src: str, dst: str, relation: str, provenance: str) -> bool:
        if src not in self.nodes or dst not in self.nodes:
            raise UsageError(f"edge endpoints must exist: {src!r} -> {dst!r}")
        key = (src, dst, relation)
        if key in self.edges:
            return False
        self.edges[key] = KgEdge(src, dst, relation, provenance)
        self._adj[src].add(dst)
        self._adj[dst].add(src)
        return True

    def neighbors(self, node_id: str) -> list[str]:
        return sorted(self._adj.get(node_id, ()))

    def relations_between(self, a: str, b: str) -> list[str]:
        """Relation tags on edges joining ``a`` and ``b`` in either direction, sorted."""
        return sorted({r for (s, d, r) in self.edges if {s, d} == {a, b}})

    def find_label(self, label: str) -> list[str]:
        want = label.casefold()
        return [nid for nid, n in self.nodes.items() if n.label.casefold() == want]

    def similarities(self, query: str) -> dict[str, float]:
        q = self.encoder.encode(query)
        return {nid: cosine(q, n.embedding) for nid, n in self.nodes.items()}

    def is_walk(self, path: Sequence[str]) -> bool:
        return all(p in self.nodes for p in path) and all(
            b in self._adj[a] for a, b in zip(path, path[1:]))

    def to_dict(self) -> dict:
        return {"nodes": [n.to_dict() for n in self.nodes.values()],
                "edges": [e.to_dict() for e in self.edges.values()]}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def from_dict(cls, data: dict, encoder: HashingEncoder | None = None) -> KnowledgeGraph:
        kg = cls(encoder)
        for nd in data["nodes"]:
            nid, _ = kg.upsert(nd["label"], nd["kind"], nd["text"])
            if nid != nd["id"]:
                raise UsageError(f"node id {nd['id']!r} does not match its label and kind")
        for ed in data["edges"]:
            kg.add_edge(ed["from"], ed["to"], ed["relation"], ed["provenance"])
        return kg

    @classmethod
    def load(cls, path: str | Path, encoder: HashingEncoder | None = None) -> KnowledgeGraph:
        return cls.from_dict(json.loads(Path(path).read_text()), encoder)


def ingest(kg: KnowledgeGraph, record: ExtractionRecord) -> tuple[int, int]:
    """Upsert the record's entities and add its relations; returns (new nodes, new edges)."""
    ids = {label: node_key(label, kind) for label, kind, _ in record.entities}
    new_nodes = 0
    for label, kind, text in record.entities:
        _, created = kg.upsert(label, kind, text)
        new_nodes += created
    new_edges = 0
    for a, b, rel in record.relations:
        new_edges += kg.add_edge(ids[a], ids[b], rel, record.source_id)
    return new_nodes, new_edges


class DictionaryExtractor:
    """Deterministic extractor matching a fixed vocabulary of ``label -> kind``.

    Relations come from ``patterns``: ``(label_a, relation, label_b)`` triples
    emitted when both labels occur in the same sentence.
    """

    def __init__(self, vocabulary: Mapping[str, KgKind | str],
                 patterns: Sequence[tuple[str, str, str]] = ()):
        self.vocabulary = {k: KgKind(v).value for k, v in vocabulary.items()}
        self.patterns = list(patterns)

    def __call__(self, source_id: str, text: str) -> ExtractionRecord:
        sentences = [s.strip() for s in text.replace("\n", " ").split(".") if s.strip()]
        found: dict[str, str] = {}
        rels: list[tuple[str, str, str]] = []
        for sent in sentences:
            low = sent.casefold()
            here = [lab for lab in self.vocabulary if lab.casefold() in low]
            for lab in here:
                found.setdefault(lab, sent)
            for a, rel, b in self.patterns:
                if a in here and b in here and (a, b, rel) not in rels:
                    rels.append((a, b, rel))
        entities = tuple((lab, self.vocabulary[lab], found[lab]) for lab in self.vocabulary if lab in found)
        return ExtractionRecord(source_id, entities, tuple(rels))


def graph_search(kg: KnowledgeGraph, seed_labels: Sequence[str], max_hops: int) -> list[tuple[str, ...]]:
    """All simple paths of at most ``max_hops`` edges from any seed, edges taken undirected."""
    if max_hops < 1:
        raise UsageError("max_hops must be >= 1")
    seeds = sorted({nid for lab in seed_labels for nid in kg.find_label(lab)})
    found: set[tuple[str, ...]] = set()
    frontier = [(s,) for s in seeds]
    found.update(frontier)
    for _ in range(max_hops):
        nxt = []
        for path in frontier:
            for nb in kg.neighbors(path[-1]):
                if nb not in path:
                    nxt.append(path + (nb,))
        found.update(nxt)
        frontier = nxt
    return sorted(found)


def dense_retrieve(kg: KnowledgeGraph, query: str, k: int) -> list[tuple[KgNode, float]]:
    if k < 1:
        raise UsageError("k must be >= 1")
    if not kg.nodes:
        return []
    q = kg.encoder.encode(query)
    return topk(q, list(kg.nodes.values()), k, lambda a, n: cosine(a, n.embedding))


def chain_score(path: Sequence[str], similarity: Mapping[str, float], hop_penalty: float = 0.9,
                aggregate: Callable[[Sequence[float]], float] = np.mean) -> float:
    return float(aggregate([similarity[n] for n in path])) * hop_penalty ** (len(path) - 1)


def merge_rank(kg: KnowledgeGraph, paths: Iterable[Sequence[str]],
               dense_hits: Iterable[tuple[KgNode | str, float]], k: int, *,
               similarity: Mapping[str, float], hop_penalty: float = 0.9,
               aggregate: Callable[[Sequence[float]], float] = np.mean) -> list[EvidenceChain]:
    """Score graph paths and dense hits on one scale, drop duplicate node sets, keep the top ``k``.

    ``similarity`` maps node id to its similarity with the query. A hop's
    relation tag is the smallest tag joining the two nodes.
    """
    if k < 1:
        raise UsageError("k must be >= 1")
    cands: list[EvidenceChain] = []
    for path in paths:
        path = tuple(path)
        if not kg.is_walk(path):
            raise UsageError(f"path {path} is not a walk in the graph")
        rels = tuple(kg.relations_between(a, b)[0] for a, b in zip(path, path[1:]))
        cands.append(EvidenceChain(path, rels, chain_score(path, similarity, hop_penalty, aggregate)))
    for node, sim in dense_hits:
        nid = node if isinstance(node, str) else node.id
        cands.append(EvidenceChain((nid,), (), float(sim)))
    cands.sort(key=lambda c: (-c.score, c.hops, c.path))
    out, seen = [], set()
    for c in cands:
        key = frozenset(c.path)
        if key in seen:
            continue
        seen.add(key)
        out.append(c)
        if len(out) == k:
            break
    return out


def retrieve_evidence(kg: KnowledgeGraph, query: str, seed_labels: Sequence[str], *,
                      max_hops: int = 2, k: int = 5, hop_penalty: float = 0.9) -> list[EvidenceChain]:
    sims = kg.similarities(query)
    paths = graph_search(kg, seed_labels, max_hops)
    hits = dense_retrieve(kg, query, k)
    return merge_rank(kg, paths, hits, k, similarity=sims, hop_penalty=hop_penalty)


ESTERIFICATION_TEXT = {
    "alcohol": "organic compound carrying a hydroxyl group",
    "carboxylic acid": "organic acid with a carboxyl group",
    "ester": "compound formed when an acid and an alcohol condense",
    "water": "small molecule released by condensation reactions",
    "esterification": "condensation reaction of an alcohol with a carboxylic acid giving an ester",
    "hydrolysis": "reaction splitting an ester back into its alcohol and acid",
    "fat": "lipid that is an ester of glycerol",
    "triacylglycerol": "fat built from glycerol and three fatty acids",
    "glycerol": "triol alcohol, propane 1,2,3 triol",
    "fatty acid": "alkanoic acid with a long carbon chain",
}


def esterification_record() -> ExtractionRecord:
    """Small chemistry fixture: reactants, products and the fats built on the same reaction."""
    kinds = {"esterification": "method", "hydrolysis": "method"}
    entities = tuple((lab, kinds.get(lab, "concept"), text) for lab, text in ESTERIFICATION_TEXT.items())
    relations = (
        ("alcohol", "esterification", "reactant_of"),
        ("carboxylic acid", "esterification", "reactant_of"),
        ("esterification", "ester", "produces"),
        ("esterification", "water", "by_product"),
        ("fat", "ester", "is_a"),
        ("hydrolysis", "fat", "acts_on"),
        ("hydrolysis", "alcohol", "produces"),
        ("hydrolysis", "carboxylic acid", "produces"),
        ("glycerol", "triacylglycerol", "forms"),
        ("fatty acid", "triacylglycerol", "forms"),
        ("triacylglycerol", "fat", "is_a"),
        ("glycerol", "alcohol", "is_a"),
        ("fatty acid", "carboxylic acid", "is_a"),
    )
    return ExtractionRecord("esterification-note", entities, relations)
