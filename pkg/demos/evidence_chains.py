"""Retrieve ranked evidence chains from a small chemistry knowledge graph.

Run: python3 demos/evidence_chains.py ["query text"]
"""

import sys

from sciloop.knowledge import KnowledgeGraph, esterification_record, ingest, retrieve_evidence


def main(query: str = "which alcohol builds fats") -> None:
    kg = KnowledgeGraph()
    nodes, edges = ingest(kg, esterification_record())
    print(f"graph: {nodes} nodes, {edges} edges; query: {query!r}")
    for chain in retrieve_evidence(kg, query, ["glycerol", "alcohol"], max_hops=2, k=6):
        hops = " ".join(f"{a} -[{r}]->" for a, r in zip(chain.path, chain.relations))
        print(f"  {chain.score:.3f}  {hops} {chain.path[-1]}")


if __name__ == "__main__":
    main(*sys.argv[1:2])
