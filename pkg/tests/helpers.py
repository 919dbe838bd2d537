"""Shared test fixtures: random graph generation and independent oracles.

The path-count oracle enumerates concrete node sequences one by one over
plain edge lists, so it shares no code with the sparse matrix-product
implementation it checks.
"""
from __future__ import annotations

import numpy as np

from hinevent.hin import Hin, NodeRef, NodeType, RelationType
from hinevent.metapath import MetaPath


def random_hin(rng: np.random.Generator, max_nodes: int = 12, density: float = 1.5) -> Hin:
    """Random typed graph with `density` expected edges per destination node."""
    hin = Hin()
    counts = {}
    for kind in NodeType:
        counts[kind] = int(rng.integers(1, max_nodes + 1))
        for i in range(counts[kind]):
            hin.add_node(kind, f"{kind.value}_{i}")
    for rel in RelationType:
        src, dst = rel.endpoints
        n_edges = int(rng.poisson(density * max(counts[src], counts[dst])))
        for _ in range(n_edges):
            u = NodeRef(src, int(rng.integers(0, counts[src])))
            v = NodeRef(dst, int(rng.integers(0, counts[dst])))
            hin.add_edge(rel, u, v)
    for i in range(counts[NodeType.EVENT_INSTANCE]):
        hin.set_time(NodeRef(NodeType.EVENT_INSTANCE, i), float(rng.integers(1, 10**6)))
    return hin.freeze()


def _edge_lists(hin: Hin):
    """Forward/backward adjacency lists straight from the edge sets."""
    forward: dict = {}
    backward: dict = {}
    for rel in RelationType:
        fwd: dict[int, list[int]] = {}
        bwd: dict[int, list[int]] = {}
        for a, b in hin._edges[rel]:
            fwd.setdefault(a, []).append(b)
            bwd.setdefault(b, []).append(a)
            if rel.is_same_type and a != b:
                fwd.setdefault(b, []).append(a)
                bwd.setdefault(a, []).append(b)
        forward[rel] = fwd
        backward[rel] = bwd
    return forward, backward


def brute_force_counts(hin: Hin, path: MetaPath) -> np.ndarray:
    """Count matrix by exhaustive enumeration of matching node sequences."""
    forward, backward = _edge_lists(hin)
    n = hin.node_count(path.anchor)
    out = np.zeros((n, n), dtype=np.int64)

    def step_neighbors(k: int, node: int) -> list[int]:
        rel = path.relations[k]
        src, dst = rel.endpoints
        if rel.is_same_type:
            return forward[rel].get(node, [])
        if path.node_types[k] is src:
            return forward[rel].get(node, [])
        return backward[rel].get(node, [])

    def walk(k: int, node: int, start: int):
        if k == path.length:
            out[start, node] += 1
            return
        for nxt in step_neighbors(k, node):
            walk(k + 1, nxt, start)

    for start in range(n):
        walk(0, start, start)
    return out


def toy_two_instance_hin() -> Hin:
    """Two messages with keywords {a, b} and {b, c}."""
    hin = Hin()
    e1 = hin.add_node(NodeType.EVENT_INSTANCE, "e1")
    e2 = hin.add_node(NodeType.EVENT_INSTANCE, "e2")
    for kw in "abc":
        hin.add_node(NodeType.KEYWORD, kw)
    for inst, kws in ((e1, "ab"), (e2, "bc")):
        for kw in kws:
            hin.add_edge(RelationType.CONTAINS_KEYWORD, inst,
                         NodeRef(NodeType.KEYWORD, "abc".index(kw)))
    hin.set_time(e1, 100.0)
    hin.set_time(e2, 200.0)
    return hin.freeze()


def instance_keyword_path() -> MetaPath:
    return MetaPath(
        (NodeType.EVENT_INSTANCE, NodeType.KEYWORD, NodeType.EVENT_INSTANCE),
        (RelationType.CONTAINS_KEYWORD, RelationType.CONTAINS_KEYWORD),
    )


def synonym_bridge_path() -> MetaPath:
    return MetaPath(
        (NodeType.EVENT_INSTANCE, NodeType.KEYWORD, NodeType.KEYWORD, NodeType.EVENT_INSTANCE),
        (RelationType.CONTAINS_KEYWORD, RelationType.SYNONYM_OF, RelationType.CONTAINS_KEYWORD),
    )
