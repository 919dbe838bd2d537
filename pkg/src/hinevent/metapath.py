"""Symmetric meta-path enumeration, instance counting and weighted similarity.

A meta-path is a schema-level walk of alternating node and relation types.
The instance count between two anchor nodes is the entry of a chained
product of per-relation adjacency matrices; the weighted similarity between
anchors i and j combines, over a path set, the normalized term
``2 * count(i, j) / (count(i, i) + count(j, j))`` with one weight per path.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .hin import Hin, NodeType, RelationType, SchemaError


@dataclass(frozen=True)
class MetaPath:
    node_types: tuple[NodeType, ...]
    relations: tuple[RelationType, ...]

    def __post_init__(self):
        if len(self.node_types) != len(self.relations) + 1 or not self.relations:
            raise SchemaError("need L relations and L+1 node types")
        for k, rel in enumerate(self.relations):
            a, b = self.node_types[k], self.node_types[k + 1]
            if {a, b} != set(rel.endpoints) and not (rel.is_same_type and a is b is rel.endpoints[0]):
                raise SchemaError(f"step {k}: {rel.value} cannot join {a.value} and {b.value}")

    @property
    def anchor(self) -> NodeType:
        return self.node_types[0]

    @property
    def length(self) -> int:
        return len(self.relations)

    def is_symmetric(self) -> bool:
        return self.node_types == self.node_types[::-1] and self.relations == self.relations[::-1]

    def label(self) -> str:
        parts = [self.node_types[0].value]
        for rel, nt in zip(self.relations, self.node_types[1:]):
            parts.append(rel.value)
            parts.append(nt.value)
        return " ".join(parts)

    @classmethod
    def from_label(cls, text: str) -> "MetaPath":
        tokens = text.split()
        if len(tokens) < 3 or len(tokens) % 2 == 0:
            raise ValueError(f"malformed meta-path line: {text!r}")
        node_types = tuple(NodeType(t) for t in tokens[0::2])
        relations = tuple(RelationType(t) for t in tokens[1::2])
        return cls(node_types, relations)


@dataclass
class MetaPathSet:
    """Symmetric paths sharing one anchor type."""

    paths: list[MetaPath] = field(default_factory=list)

    def __post_init__(self):
        if not self.paths:
            raise ValueError("empty meta-path set")
        anchor = self.paths[0].anchor
        for p in self.paths:
            if not p.is_symmetric():
                raise SchemaError(f"asymmetric path: {p.label()}")
            if p.anchor is not anchor or p.node_types[-1] is not anchor:
                raise SchemaError("all paths must share the anchor type")

    @property
    def anchor(self) -> NodeType:
        return self.paths[0].anchor

    def __len__(self):
        return len(self.paths)

    def __iter__(self):
        return iter(self.paths)


def uniform_weights(m: int) -> np.ndarray:
    return np.full(m, 1.0 / m)


def normalize_weights(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be a finite nonnegative vector")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights must not all be zero")
    return w / total


# -- enumeration ------------------------------------------------------------

def enumerate_symmetric_metapaths(
    anchor: NodeType,
    max_len: int,
    relations=None,
    exclude_types: tuple[NodeType, ...] = (),
) -> list[MetaPath]:
    """All symmetric anchor-to-anchor meta-paths of length <= max_len.

    The schema defaults to every declared relation type; pass a subset of
    `RelationType` to restrict it. A symmetric path mirrors a half-walk:
    same-type relations appear only as the single middle edge of an
    odd-length path, and interior node types never revisit the anchor.
    Output order is canonical (length, then label).
    """
    if max_len < 2:
        raise ValueError("max_len must be at least 2")
    rels = list(RelationType) if relations is None else list(relations)
    cross = [r for r in rels if not r.is_same_type]
    loops: dict[NodeType, list[RelationType]] = {}
    for r in rels:
        if r.is_same_type:
            loops.setdefault(r.endpoints[0], []).append(r)
    banned = set(exclude_types) | {anchor}

    out: list[MetaPath] = []

    def extend(types: tuple[NodeType, ...], steps: tuple[RelationType, ...]):
        k = len(steps)
        if k >= 1:
            mirror_t = types + types[-2::-1]
            mirror_r = steps + steps[::-1]
            if 2 * k <= max_len:
                out.append(MetaPath(mirror_t, mirror_r))
            if 2 * k + 1 <= max_len:
                for loop in loops.get(types[-1], ()):
                    mid_t = types + types[::-1]
                    mid_r = steps + (loop,) + steps[::-1]
                    out.append(MetaPath(mid_t, mid_r))
        if 2 * (k + 1) > max_len:
            return
        here = types[-1]
        for rel in cross:
            a, b = rel.endpoints
            nxt = b if here is a else a if here is b else None
            if nxt is None or nxt in banned:
                continue
            extend(types + (nxt,), steps + (rel,))

    extend((anchor,), ())
    out.sort(key=lambda p: (p.length, p.label()))
    return out


_DETECTION_EXCLUDE = (NodeType.EVENT,)


def default_detection_pathset(max_len: int = 4, include_time: bool = False) -> MetaPathSet:
    """Instance-anchored paths; same-time-slot paths are off by default."""
    exclude = _DETECTION_EXCLUDE if include_time else _DETECTION_EXCLUDE + (NodeType.TIME_SLOT,)
    paths = enumerate_symmetric_metapaths(NodeType.EVENT_INSTANCE, max_len, exclude_types=exclude)
    return MetaPathSet(paths)


def default_evolution_pathset(max_len: int = 6, include_time: bool = True) -> MetaPathSet:
    exclude = () if include_time else (NodeType.TIME_SLOT,)
    paths = enumerate_symmetric_metapaths(NodeType.EVENT, max_len, exclude_types=exclude)
    return MetaPathSet(paths)


# -- counting ---------------------------------------------------------------

def _oriented(hin: Hin, rel: RelationType, src: NodeType, dst: NodeType) -> sp.csr_matrix:
    mat = hin.adjacency(rel)
    a, b = rel.endpoints
    if (src, dst) == (a, b):
        return mat
    if (src, dst) == (b, a):
        return mat.T.tocsr()
    raise SchemaError(f"{rel.value} does not join {src.value}->{dst.value}")


def count_matrix(hin: Hin, path: MetaPath, anchors=None) -> np.ndarray:
    """Meta-path instance counts between anchor nodes.

    Entry [i, j] is the number of node sequences following `path` from
    anchor i to anchor j. Computed as a left-to-right chain of sparse
    adjacency products, densified only at the anchor-by-anchor result.
    Pass `anchors` to restrict rows and columns to that index list.
    """
    first = _oriented(hin, path.relations[0], path.node_types[0], path.node_types[1])
    acc = first if anchors is None else first[np.asarray(anchors, dtype=np.intp)]
    acc = sp.csr_matrix(acc, dtype=np.int64)
    for k in range(1, path.length):
        step = _oriented(hin, path.relations[k], path.node_types[k], path.node_types[k + 1])
        acc = acc @ step
    if anchors is not None:
        acc = acc[:, np.asarray(anchors, dtype=np.intp)]
    return np.asarray(acc.todense(), dtype=np.int64)


def per_path_similarity_matrices(hin: Hin, pathset: MetaPathSet, anchors=None) -> list[np.ndarray]:
    """One normalized similarity matrix per path: 2*C[i,j]/(C[i,i]+C[j,j]).

    Terms with a zero denominator are defined as 0. For even-length paths
    the ratio is at most 1 (the chain splits into a half-walk times its
    transpose, so the off-diagonal is an inner product of half-walk count
    vectors); an odd-length path routes through a same-type middle edge
    whose adjacency is not positive semidefinite, where the raw ratio can
    exceed 1, so terms are capped at 1 to keep ``1 - similarity`` a valid
    distance downstream.
    """
    out = []
    for path in pathset:
        counts = count_matrix(hin, path, anchors=anchors)
        diag = np.diagonal(counts).astype(np.float64)
        denom = diag[:, None] + diag[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(denom > 0, 2.0 * counts / np.where(denom > 0, denom, 1.0), 0.0)
        out.append(np.minimum(s, 1.0))
    return out


def combine_similarities(matrices, weights) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    if len(matrices) != weights.shape[0]:
        raise ValueError("one weight per path required")
    acc = np.zeros_like(matrices[0], dtype=np.float64)
    for w, s in zip(weights, matrices):
        acc += w * s
    return acc


def similarity(hin: Hin, pathset: MetaPathSet, weights, i: int, j: int) -> float:
    """Weighted path-normalized similarity between two anchor nodes."""
    weights = np.asarray(weights, dtype=np.float64)
    total = 0.0
    for w, path in zip(weights, pathset):
        c = count_matrix(hin, path, anchors=[i, j] if i != j else [i])
        if i == j:
            cii = cij = cjj = float(c[0, 0])
        else:
            cij = float(c[0, 1])
            cii = float(c[0, 0])
            cjj = float(c[1, 1])
        denom = cii + cjj
        if denom > 0:
            total += w * min(2.0 * cij / denom, 1.0)
    return total


def similarity_matrix(hin: Hin, pathset: MetaPathSet, weights, anchors=None) -> np.ndarray:
    mats = per_path_similarity_matrices(hin, pathset, anchors=anchors)
    return combine_similarities(mats, weights)


# -- text formats -----------------------------------------------------------

def save_pathset(pathset: MetaPathSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pathset:
            fh.write(p.label() + "\n")


def load_pathset(path) -> MetaPathSet:
    with open(path, encoding="utf-8") as fh:
        paths = [MetaPath.from_label(line.strip()) for line in fh if line.strip()]
    return MetaPathSet(paths)


def save_weights(weights, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for w in np.asarray(weights, dtype=np.float64):
            fh.write(repr(float(w)) + "\n")


def load_weights(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        vals = [float(line.strip()) for line in fh if line.strip()]
    return np.asarray(vals, dtype=np.float64)
