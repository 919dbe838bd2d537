"""Typed heterogeneous graph storage with schema validation.

Nodes live in per-type registries with dense indices; edges live in one
sparse adjacency matrix per relation type. The graph is built by a single
writer and frozen before any similarity computation runs on it.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class NodeType(enum.Enum):
    EVENT_INSTANCE = "EventInstance"
    EVENT = "Event"
    KEYWORD = "Keyword"
    ENTITY = "Entity"
    TOPIC = "Topic"
    USER = "User"
    TIME_SLOT = "TimeSlot"


class RelationType(enum.Enum):
    CONTAINS_KEYWORD = "contains_keyword"
    CONTAINS_ENTITY = "contains_entity"
    CONTAINS_TOPIC = "contains_topic"
    CONTAINS_USER = "contains_user"
    CONTAINS_TIME_SLOT = "contains_time_slot"
    SYNONYM_OF = "synonym_of"
    TOPIC_AFFILIATION = "topic_affiliation"
    TOPIC_HIERARCHY = "topic_hierarchy"
    ENTITY_RELATION = "entity_relation"
    ENTITY_KEYWORD = "entity_keyword"
    FRIEND_OF = "friend_of"
    SHARED_COMMUNITY = "shared_community"
    TEMPORAL_ADJACENT = "temporal_adjacent"
    CONSISTS_OF = "consists_of"

    @property
    def endpoints(self) -> tuple[NodeType, NodeType]:
        return _ENDPOINTS[self]

    @property
    def is_same_type(self) -> bool:
        a, b = _ENDPOINTS[self]
        return a is b


_ENDPOINTS: dict[RelationType, tuple[NodeType, NodeType]] = {
    RelationType.CONTAINS_KEYWORD: (NodeType.EVENT_INSTANCE, NodeType.KEYWORD),
    RelationType.CONTAINS_ENTITY: (NodeType.EVENT_INSTANCE, NodeType.ENTITY),
    RelationType.CONTAINS_TOPIC: (NodeType.EVENT_INSTANCE, NodeType.TOPIC),
    RelationType.CONTAINS_USER: (NodeType.EVENT_INSTANCE, NodeType.USER),
    RelationType.CONTAINS_TIME_SLOT: (NodeType.EVENT_INSTANCE, NodeType.TIME_SLOT),
    RelationType.SYNONYM_OF: (NodeType.KEYWORD, NodeType.KEYWORD),
    RelationType.TOPIC_AFFILIATION: (NodeType.KEYWORD, NodeType.TOPIC),
    RelationType.TOPIC_HIERARCHY: (NodeType.TOPIC, NodeType.TOPIC),
    RelationType.ENTITY_RELATION: (NodeType.ENTITY, NodeType.ENTITY),
    RelationType.ENTITY_KEYWORD: (NodeType.ENTITY, NodeType.KEYWORD),
    RelationType.FRIEND_OF: (NodeType.USER, NodeType.USER),
    RelationType.SHARED_COMMUNITY: (NodeType.USER, NodeType.USER),
    RelationType.TEMPORAL_ADJACENT: (NodeType.TIME_SLOT, NodeType.TIME_SLOT),
    RelationType.CONSISTS_OF: (NodeType.EVENT, NodeType.EVENT_INSTANCE),
}

# Node types that carry a timestamp.
_TIMED_TYPES = (NodeType.EVENT_INSTANCE, NodeType.EVENT)


class SchemaError(ValueError):
    """An edge whose endpoint types do not match its relation type."""


class FrozenGraphError(RuntimeError):
    """Mutation attempted after freeze()."""


@dataclass(frozen=True)
class NodeRef:
    """A node handle carrying its type; indices are dense per type."""

    kind: NodeType
    index: int


class Hin:
    """Heterogeneous information network with per-relation sparse adjacency.

    Same-type relations are stored symmetrically: adding (u, v) makes
    (v, u) queryable and the adjacency matrix equals its transpose.
    Cross-type relations are stored source-to-destination; the reverse
    direction is the transpose of the stored matrix.
    """

    def __init__(self):
        self._keys: dict[NodeType, list[str]] = {t: [] for t in NodeType}
        self._index: dict[NodeType, dict[str, int]] = {t: {} for t in NodeType}
        self._edges: dict[RelationType, set[tuple[int, int]]] = {r: set() for r in RelationType}
        self._times: dict[tuple[NodeType, int], float] = {}
        self._frozen = False
        self._adj_cache: dict[RelationType, sp.csr_matrix] = {}

    # -- construction -------------------------------------------------

    def add_node(self, kind: NodeType, key: str) -> NodeRef:
        """Register (or look up) a node; idempotent per (kind, key)."""
        if not key:
            raise ValueError("node key must be non-empty")
        idx = self._index[kind].get(key)
        if idx is None:
            self._check_mutable()
            idx = len(self._keys[kind])
            self._keys[kind].append(key)
            self._index[kind][key] = idx
        return NodeRef(kind, idx)

    def add_edge(self, rel: RelationType, u: NodeRef, v: NodeRef) -> None:
        self._check_mutable()
        src, dst = rel.endpoints
        if (u.kind, v.kind) == (src, dst):
            a, b = u.index, v.index
        elif (u.kind, v.kind) == (dst, src):
            a, b = v.index, u.index
        else:
            raise SchemaError(
                f"{rel.value} expects ({src.value}, {dst.value}), got ({u.kind.value}, {v.kind.value})"
            )
        if a >= self.node_count(src) or b >= self.node_count(dst) or a < 0 or b < 0:
            raise SchemaError(f"unregistered node index on {rel.value}")
        if rel.is_same_type and a != b:
            self._edges[rel].add((min(a, b), max(a, b)))
        else:
            self._edges[rel].add((a, b))
        self._adj_cache.pop(rel, None)

    def set_time(self, ref: NodeRef, when: float) -> None:
        if ref.kind not in _TIMED_TYPES:
            raise SchemaError(f"{ref.kind.value} nodes carry no timestamp")
        self._check_mutable()
        self._times[(ref.kind, ref.index)] = float(when)

    def freeze(self) -> "Hin":
        """Make the graph immutable; safe for concurrent readers afterwards."""
        for rel in RelationType:
            self.adjacency(rel)
        self._frozen = True
        return self

    def _check_mutable(self):
        if self._frozen:
            raise FrozenGraphError("graph is frozen")

    def copy_unfrozen(self) -> "Hin":
        """Deep copy with the frozen flag cleared (used to extend a frozen graph)."""
        out = Hin()
        out._keys = {t: list(ks) for t, ks in self._keys.items()}
        out._index = {t: dict(ix) for t, ix in self._index.items()}
        out._edges = {r: set(es) for r, es in self._edges.items()}
        out._times = dict(self._times)
        return out

    # -- queries --------------------------------------------------------

    @property
    def frozen(self) -> bool:
        return self._frozen

    def node_count(self, kind: NodeType) -> int:
        return len(self._keys[kind])

    def key_of(self, kind: NodeType, index: int) -> str:
        return self._keys[kind][index]

    def index_of(self, kind: NodeType, key: str):
        return self._index[kind].get(key)

    def time_of(self, kind: NodeType, index: int) -> float:
        return self._times[(kind, index)]

    def has_edge(self, rel: RelationType, u: NodeRef, v: NodeRef) -> bool:
        return bool(self.adjacency(rel)[_orient(rel, u, v)])

    def edge_count(self, rel: RelationType) -> int:
        return len(self._edges[rel])

    def adjacency(self, rel: RelationType) -> sp.csr_matrix:
        """Sparse 0/1 adjacency of `rel`, shaped (source count, destination count).

        Same-type relations come back symmetric. Treat the result as
        read-only; it is cached once the graph is frozen.
        """
        cached = self._adj_cache.get(rel)
        if cached is not None:
            return cached
        src, dst = rel.endpoints
        shape = (self.node_count(src), self.node_count(dst))
        pairs = self._edges[rel]
        if not pairs:
            mat = sp.csr_matrix(shape, dtype=np.int64)
        else:
            rows, cols = zip(*pairs)
            rows, cols = list(rows), list(cols)
            if rel.is_same_type:
                mirror_r = [c for r, c in zip(rows, cols) if r != c]
                mirror_c = [r for r, c in zip(rows, cols) if r != c]
                rows += mirror_r
                cols += mirror_c
            data = np.ones(len(rows), dtype=np.int64)
            mat = sp.csr_matrix((data, (rows, cols)), shape=shape)
            mat.data[:] = 1  # duplicates collapse to multiplicity 1
        self._adj_cache[rel] = mat
        return mat

    def neighbors(self, rel: RelationType, ref: NodeRef) -> list[int]:
        """Indices adjacent to `ref` under `rel`, in the opposite endpoint's space."""
        src, dst = rel.endpoints
        mat = self.adjacency(rel)
        if ref.kind is src:
            return list(mat.indices[mat.indptr[ref.index]:mat.indptr[ref.index + 1]])
        if ref.kind is dst:
            csc = mat.tocsc()
            return list(csc.indices[csc.indptr[ref.index]:csc.indptr[ref.index + 1]])
        raise SchemaError(f"{ref.kind.value} is not an endpoint of {rel.value}")


def _orient(rel: RelationType, u: NodeRef, v: NodeRef) -> tuple[int, int]:
    src, dst = rel.endpoints
    if (u.kind, v.kind) == (src, dst):
        return (u.index, v.index) if not rel.is_same_type else _canon(u.index, v.index)
    if (u.kind, v.kind) == (dst, src):
        return (v.index, u.index) if not rel.is_same_type else _canon(u.index, v.index)
    raise SchemaError(f"({u.kind.value}, {v.kind.value}) does not match {rel.value}")


def _canon(a: int, b: int) -> tuple[int, int]:
    # same-type matrices are symmetric, either orientation works
    return (a, b)


def save_hin(hin: Hin, path) -> None:
    """Serialize to a flat .npz container (keys, edges, timestamps)."""
    import json

    payload = {}
    meta = {
        "keys": {t.value: hin._keys[t] for t in NodeType},
        "frozen": hin.frozen,
    }
    payload["meta"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    for rel in RelationType:
        pairs = sorted(hin._edges[rel])
        arr = np.array(pairs, dtype=np.int64).reshape(-1, 2)
        payload[f"edges_{rel.value}"] = arr
    times = sorted((k.value, i, t) for (k, i), t in hin._times.items())
    payload["time_kinds"] = np.frombuffer(
        json.dumps([k for k, _, _ in times]).encode("utf-8"), dtype=np.uint8
    )
    payload["time_index"] = np.array([i for _, i, _ in times], dtype=np.int64)
    payload["time_value"] = np.array([t for _, _, t in times], dtype=np.float64)
    np.savez_compressed(path, **payload)


def load_hin(path) -> Hin:
    import json

    data = np.load(path, allow_pickle=False)
    meta = json.loads(bytes(data["meta"]).decode("utf-8"))
    hin = Hin()
    for tname, keys in meta["keys"].items():
        kind = NodeType(tname)
        for key in keys:
            hin.add_node(kind, key)
    for rel in RelationType:
        src, dst = rel.endpoints
        for a, b in data[f"edges_{rel.value}"]:
            hin.add_edge(rel, NodeRef(src, int(a)), NodeRef(dst, int(b)))
    kinds = json.loads(bytes(data["time_kinds"]).decode("utf-8"))
    for kname, idx, t in zip(kinds, data["time_index"], data["time_value"]):
        hin.set_time(NodeRef(NodeType(kname), int(idx)), float(t))
    if meta["frozen"]:
        hin.freeze()
    return hin
