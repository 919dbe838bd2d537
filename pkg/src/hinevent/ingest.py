"""Parse annotated message records and build the event graph.

Records arrive pre-annotated (keywords, entities, topics already
extracted); upstream NLP is out of scope. A small dictionary-based
annotator is included for demo corpora only.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

from .hin import Hin, NodeRef, NodeType, RelationType

DEFAULT_SLOT_SECONDS = 1800  # half-hour time slots


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class MessageRecord:
    id: str
    text: str
    time: int
    user: str
    keywords: tuple[str, ...] = ()
    entities: tuple[str, ...] = ()
    topics: tuple[str, ...] = ()

    def elements(self) -> set[tuple[str, str]]:
        """Typed element set used for overlap scoring (time slot excluded)."""
        out = {("keyword", k) for k in self.keywords}
        out |= {("entity", e) for e in self.entities}
        out |= {("topic", t) for t in self.topics}
        out.add(("user", self.user))
        return out


@dataclass
class EnrichmentTables:
    synonyms: list[tuple[str, str]] = field(default_factory=list)
    entity_relations: list[tuple[str, str]] = field(default_factory=list)
    entity_keywords: list[tuple[str, str]] = field(default_factory=list)
    user_friends: list[tuple[str, str]] = field(default_factory=list)
    user_communities: list[tuple[str, str]] = field(default_factory=list)
    topic_hierarchy: list[tuple[str, str]] = field(default_factory=list)
    keyword_topics: list[tuple[str, str]] = field(default_factory=list)


_ENRICHMENT_RELATIONS = {
    "synonyms": (RelationType.SYNONYM_OF, NodeType.KEYWORD, NodeType.KEYWORD),
    "entity_relations": (RelationType.ENTITY_RELATION, NodeType.ENTITY, NodeType.ENTITY),
    "entity_keywords": (RelationType.ENTITY_KEYWORD, NodeType.ENTITY, NodeType.KEYWORD),
    "user_friends": (RelationType.FRIEND_OF, NodeType.USER, NodeType.USER),
    "user_communities": (RelationType.SHARED_COMMUNITY, NodeType.USER, NodeType.USER),
    "topic_hierarchy": (RelationType.TOPIC_HIERARCHY, NodeType.TOPIC, NodeType.TOPIC),
    "keyword_topics": (RelationType.TOPIC_AFFILIATION, NodeType.KEYWORD, NodeType.TOPIC),
}


def _dedup(values) -> tuple[str, ...]:
    seen = []
    for v in values:
        if v not in seen:
            seen.append(v)
    return tuple(seen)


def parse_record(obj: dict) -> MessageRecord:
    rid = str(obj["id"])
    t = int(obj["time"])
    if not rid:
        raise ValueError("empty id")
    if t <= 0:
        raise ValueError("time must be positive")
    return MessageRecord(
        id=rid,
        text=str(obj.get("text", "")),
        time=t,
        user=str(obj["user"]),
        keywords=_dedup(str(k) for k in obj.get("keywords", [])),
        entities=_dedup(str(e) for e in obj.get("entities", [])),
        topics=_dedup(str(t) for t in obj.get("topics", [])),
    )


def parse_corpus(source) -> tuple[list[MessageRecord], list[str]]:
    """Parse one JSON record per line from a path or an iterable of lines.

    Returns (records, diagnostics); order preserved. Raises CorpusError when
    no valid records exist at all.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, encoding="utf-8") as fh:
            lines = fh.readlines()
    else:
        lines = list(source)
    records: list[MessageRecord] = []
    errors: list[str] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = parse_record(json.loads(line))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            errors.append(f"line {lineno}: {exc}")
            continue
        if rec.id in seen_ids:
            errors.append(f"line {lineno}: duplicate id {rec.id!r}")
            continue
        seen_ids.add(rec.id)
        records.append(rec)
    if not records:
        raise CorpusError(f"no records ({len(errors)} malformed lines)")
    return records, errors


def write_corpus(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({
                "id": rec.id, "text": rec.text, "time": rec.time, "user": rec.user,
                "keywords": list(rec.keywords), "entities": list(rec.entities),
                "topics": list(rec.topics),
            }, sort_keys=True) + "\n")
    return None


def load_enrichment_dir(path) -> EnrichmentTables:
    """Read one JSONL file per relation kind ({"src": ..., "dst": ...} lines)."""
    import os

    tables = EnrichmentTables()
    for f in fields(EnrichmentTables):
        file_path = os.path.join(path, f.name + ".jsonl")
        if not os.path.exists(file_path):
            continue
        pairs = []
        with open(file_path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    pairs.append((str(obj["src"]), str(obj["dst"])))
        setattr(tables, f.name, pairs)
    return tables


def slot_key(time: int, slot_width: int) -> str:
    return str(int(time) // int(slot_width))


def build_hin(
    records,
    tables: EnrichmentTables | None = None,
    slot_width: int = DEFAULT_SLOT_SECONDS,
    preregister: dict[NodeType, list[str]] | None = None,
) -> Hin:
    """Build and freeze the event graph for a record batch.

    One instance node per record, linked to its keyword, entity, topic,
    user and time-slot nodes; enrichment pairs are added unconditionally;
    numerically consecutive time slots are linked. `preregister` seeds
    node registries so indices stay aligned with an external vocabulary.
    """
    hin = Hin()
    if preregister:
        for kind, keys in preregister.items():
            for key in keys:
                hin.add_node(kind, key)
    slot_ids: set[int] = set()
    for rec in records:
        inst = hin.add_node(NodeType.EVENT_INSTANCE, rec.id)
        hin.set_time(inst, rec.time)
        for kw in rec.keywords:
            hin.add_edge(RelationType.CONTAINS_KEYWORD, inst, hin.add_node(NodeType.KEYWORD, kw))
        for ent in rec.entities:
            hin.add_edge(RelationType.CONTAINS_ENTITY, inst, hin.add_node(NodeType.ENTITY, ent))
        for top in rec.topics:
            hin.add_edge(RelationType.CONTAINS_TOPIC, inst, hin.add_node(NodeType.TOPIC, top))
        hin.add_edge(RelationType.CONTAINS_USER, inst, hin.add_node(NodeType.USER, rec.user))
        sid = int(rec.time) // int(slot_width)
        slot = hin.add_node(NodeType.TIME_SLOT, str(sid))
        hin.add_edge(RelationType.CONTAINS_TIME_SLOT, inst, slot)
        slot_ids.add(sid)
    for sid in sorted(slot_ids):
        if sid + 1 in slot_ids:
            a = hin.add_node(NodeType.TIME_SLOT, str(sid))
            b = hin.add_node(NodeType.TIME_SLOT, str(sid + 1))
            hin.add_edge(RelationType.TEMPORAL_ADJACENT, a, b)
    if tables is not None:
        for name, (rel, src_kind, dst_kind) in _ENRICHMENT_RELATIONS.items():
            for a, b in getattr(tables, name):
                u = hin.add_node(src_kind, a)
                v = hin.add_node(dst_kind, b)
                hin.add_edge(rel, u, v)
    return hin.freeze()


def build_event_layer(hin: Hin, assignments: dict[int, object]) -> Hin:
    """Extend a frozen graph with event nodes over an instance partition.

    `assignments` maps instance index -> event id. Each distinct event id
    becomes one event node composed of its member instances; the event
    timestamp is the minimum member timestamp.
    """
    n_inst = hin.node_count(NodeType.EVENT_INSTANCE)
    for idx in assignments:
        if not 0 <= int(idx) < n_inst:
            raise ValueError(f"assignment references unknown instance {idx}")
    out = hin.copy_unfrozen()
    order: list[object] = []
    members: dict[object, list[int]] = {}
    for idx in sorted(assignments, key=int):
        eid = assignments[idx]
        if eid not in members:
            members[eid] = []
            order.append(eid)
        members[eid].append(int(idx))
    for eid in order:
        ev = out.add_node(NodeType.EVENT, str(eid))
        times = []
        for idx in members[eid]:
            out.add_edge(RelationType.CONSISTS_OF, ev, NodeRef(NodeType.EVENT_INSTANCE, idx))
            times.append(hin.time_of(NodeType.EVENT_INSTANCE, idx))
        out.set_time(ev, min(times))
    return out.freeze()


_CONTAINS = {
    NodeType.KEYWORD: RelationType.CONTAINS_KEYWORD,
    NodeType.ENTITY: RelationType.CONTAINS_ENTITY,
    NodeType.TOPIC: RelationType.CONTAINS_TOPIC,
    NodeType.USER: RelationType.CONTAINS_USER,
    NodeType.TIME_SLOT: RelationType.CONTAINS_TIME_SLOT,
}


def instance_elements(hin: Hin, index: int, include_time: bool = False) -> dict[NodeType, set[str]]:
    """Read back the element keys attached to one instance node."""
    ref = NodeRef(NodeType.EVENT_INSTANCE, index)
    out: dict[NodeType, set[str]] = {}
    for kind, rel in _CONTAINS.items():
        if kind is NodeType.TIME_SLOT and not include_time:
            continue
        out[kind] = {hin.key_of(kind, j) for j in hin.neighbors(rel, ref)}
    return out


def naive_annotate(text: str, entity_lexicon=(), topic_lexicon=()) -> tuple:
    """Whitespace keyword split plus dictionary entity/topic lookup (demo only)."""
    tokens = [t.strip(".,;:!?()[]\"'").lower() for t in text.split()]
    tokens = [t for t in tokens if t]
    entities = _dedup(t for t in tokens if t in set(entity_lexicon))
    topics = _dedup(t for t in tokens if t in set(topic_lexicon))
    keywords = _dedup(t for t in tokens if t not in entities and t not in topics)
    return keywords, entities, topics
