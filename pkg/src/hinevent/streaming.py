"""Time-sliced pipeline: retrieve related history, cluster each slice,
and merge events and evolution chains across slices.

Each slice builds a provisional graph over its new messages plus the
historical messages that share at least one element within the instance
lookback window; clusters that touch a historical member inherit that
member's event id (lowest id wins on multi-way merges). Detected events
are then clustered again at the event level into evolution chains using
the longer event lookback window.
"""
from __future__ import annotations

import time as _time
from bisect import bisect_left, insort
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import clustering
from .ingest import DEFAULT_SLOT_SECONDS, EnrichmentTables, MessageRecord, build_event_layer, build_hin
from .hin import NodeType
from .metapath import (
    MetaPathSet,
    combine_similarities,
    default_detection_pathset,
    default_evolution_pathset,
    per_path_similarity_matrices,
    uniform_weights,
)


@dataclass
class RetrievalConfig:
    t1: float = 86400.0          # instance lookback
    t2: float = 7 * 86400.0      # event lookback
    top_k: int = 50

    def __post_init__(self):
        if not 0 < self.t1 < self.t2:
            raise ValueError("lookbacks must satisfy 0 < t1 < t2")
        if self.top_k < 0:
            raise ValueError("top_k must be >= 0")


@dataclass
class EventRecord:
    event_id: int
    member_instances: list[str]
    time_span: tuple[float, float]
    element_summary: dict[str, Counter] = field(default_factory=dict)

    @property
    def time(self) -> float:
        return self.time_span[0]

    def element_keys(self) -> set[tuple[str, str]]:
        return {(kind, key) for kind, counter in self.element_summary.items() for key in counter}


@dataclass
class EvolutionChain:
    chain_id: int
    member_events: list[int]


@dataclass
class SliceReport:
    t: int
    n_new: int
    n_retrieved: int
    n_events: int
    n_chains: int
    ms_build: float
    ms_similarity: float
    ms_cluster: float
    labels_path: str = ""

    def as_dict(self) -> dict:
        return {
            "t": self.t, "n_new": self.n_new, "n_retrieved": self.n_retrieved,
            "n_events": self.n_events, "n_chains": self.n_chains,
            "ms_build": self.ms_build, "ms_similarity": self.ms_similarity,
            "ms_cluster": self.ms_cluster, "labels_path": self.labels_path,
        }


@dataclass
class StreamConfig:
    slice_width: int = DEFAULT_SLOT_SECONDS
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    detect_epsilon: float = clustering.DETECTION_EPSILON
    evolve_epsilon: float = clustering.EVOLUTION_EPSILON
    min_pts: int = 1
    threads: int = 1
    seed: int = 0
    retention: float | None = None  # defaults to max(t2, one week)
    slice_retrieval_cap: int = 2000
    detect_weights: np.ndarray | None = None
    evolve_weights: np.ndarray | None = None
    detection_paths: MetaPathSet = field(default_factory=default_detection_pathset)
    evolution_paths: MetaPathSet = field(default_factory=default_evolution_pathset)
    enrichment: EnrichmentTables | None = None

    def __post_init__(self):
        if self.retention is None:
            self.retention = max(self.retrieval.t2, 7 * 86400.0)
        if self.retention < max(self.retrieval.t1, self.retrieval.t2):
            raise ValueError("retention must cover both lookback windows")
        if self.slice_width <= 0:
            raise ValueError("slice width must be positive")
        if self.detect_weights is None:
            self.detect_weights = uniform_weights(len(self.detection_paths))
        if self.evolve_weights is None:
            self.evolve_weights = uniform_weights(len(self.evolution_paths))


class HistoryStore:
    """Inverted element index over retained messages plus the event registry."""

    def __init__(self):
        self.records: dict[str, MessageRecord] = {}
        self.postings: dict[tuple[str, str], list[tuple[float, str]]] = {}
        self.record_event: dict[str, int] = {}
        self.events: dict[int, EventRecord] = {}
        self.event_postings: dict[tuple[str, str], set[int]] = {}
        self.chains: dict[int, EvolutionChain] = {}
        self.event_chain: dict[int, int] = {}

    def add_record(self, rec: MessageRecord) -> None:
        self.records[rec.id] = rec
        for element in rec.elements():
            # sorted insertion keeps window queries valid for any feed order
            insort(self.postings.setdefault(element, []), (rec.time, rec.id))

    def prune(self, cutoff: float) -> None:
        """Drop postings and records older than `cutoff` (posting lists stay sorted)."""
        stale = [rid for rid, rec in self.records.items() if rec.time < cutoff]
        if not stale:
            return
        for rid in stale:
            del self.records[rid]
        for element in list(self.postings):
            lst = self.postings[element]
            keep = bisect_left(lst, cutoff, key=lambda p: p[0])
            if keep:
                lst = lst[keep:]
                if lst:
                    self.postings[element] = lst
                else:
                    del self.postings[element]

    def index_event_elements(self, event: EventRecord) -> None:
        for element in event.element_keys():
            self.event_postings.setdefault(element, set()).add(event.event_id)

    def forget_event(self, event_id: int) -> None:
        for eids in self.event_postings.values():
            eids.discard(event_id)


def _record_overlap(store: HistoryStore, elements, query_time: float, window: float) -> Counter:
    scores: Counter = Counter()
    for element in elements:
        lst = store.postings.get(element)
        if not lst:
            continue
        start = bisect_left(lst, query_time - window, key=lambda p: p[0])
        for when, rid in lst[start:]:
            if 0 <= query_time - when < window:
                scores[rid] += 1
    return scores


def retrieve_related_instances(store: HistoryStore, rec: MessageRecord,
                               cfg: RetrievalConfig) -> list[str]:
    """Historical record ids sharing an element within the instance window,
    ranked by overlap count then recency, truncated to top_k."""
    scores = _record_overlap(store, rec.elements(), rec.time, cfg.t1)
    scores.pop(rec.id, None)
    ranked = sorted(scores, key=lambda rid: (-scores[rid], -store.records[rid].time, rid))
    return ranked[: cfg.top_k]


def retrieve_related_events(store: HistoryStore, event: EventRecord,
                            cfg: RetrievalConfig) -> list[int]:
    """Historical event ids sharing an element within the event window,
    overlap counted on the union of member elements."""
    scores: Counter = Counter()
    for element in event.element_keys():
        for eid in store.event_postings.get(element, ()):
            scores[eid] += 1
    scores.pop(event.event_id, None)
    qualified = {
        eid: s for eid, s in scores.items()
        if eid in store.events and event.time - store.events[eid].time < cfg.t2
    }
    ranked = sorted(qualified, key=lambda eid: (-qualified[eid], -store.events[eid].time, eid))
    return ranked[: cfg.top_k]


def _summarize(records) -> dict[str, Counter]:
    out: dict[str, Counter] = {}
    for rec in records:
        for kind, key in rec.elements():
            out.setdefault(kind, Counter())[key] += 1
    return out


class StreamSession:
    """Stateful slice-by-slice processor; feed slices in time order."""

    def __init__(self, config: StreamConfig):
        self.config = config
        self.store = HistoryStore()
        self.next_event_id = 0
        self.next_chain_id = 0
        self.diagnostics: list[str] = []
        self._last_slice_start: float | None = None

    # -- detection ------------------------------------------------------

    def _assemble_working_set(self, new_records):
        cfg = self.config
        new_ids = {rec.id for rec in new_records}
        best: dict[str, int] = {}
        for rec in new_records:
            for rid in retrieve_related_instances(self.store, rec, cfg.retrieval):
                if rid in new_ids:
                    continue
                score = len(rec.elements() & self.store.records[rid].elements())
                if score > best.get(rid, 0):
                    best[rid] = score
        ranked = sorted(best, key=lambda rid: (-best[rid], -self.store.records[rid].time, rid))
        retrieved = ranked[: cfg.slice_retrieval_cap]
        working = sorted(new_records, key=lambda r: (r.time, r.id))
        working += [self.store.records[rid] for rid in sorted(retrieved)]
        return working, retrieved

    def detect_slice(self, new_records) -> tuple[dict[str, int], list[int], dict]:
        """Cluster the slice working set; returns (record -> event id,
        touched event ids, phase timings in ms)."""
        cfg = self.config
        timings = {"build": 0.0, "similarity": 0.0, "cluster": 0.0}
        if not new_records:
            return {}, [], timings
        t0 = _time.perf_counter()
        working, retrieved = self._assemble_working_set(new_records)
        hin = build_hin(working, cfg.enrichment, cfg.slice_width)
        t1 = _time.perf_counter()
        timings["build"] = (t1 - t0) * 1000.0
        mats = per_path_similarity_matrices(hin, cfg.detection_paths)
        sim = combine_similarities(mats, cfg.detect_weights)
        t2 = _time.perf_counter()
        timings["similarity"] = (t2 - t1) * 1000.0
        dm = clustering.from_similarity(sim, threads=cfg.threads)
        labels = clustering.dbscan(dm, cfg.detect_epsilon, cfg.min_pts, cfg.threads)
        timings["cluster"] = (_time.perf_counter() - t2) * 1000.0

        assignment: dict[str, int] = {}
        touched: list[int] = []
        for cluster in range(int(labels.max()) + 1 if labels.size else 0):
            rids = [working[i].id for i in np.flatnonzero(labels == cluster)]
            existing = sorted({self.store.record_event[rid] for rid in rids
                               if rid in self.store.record_event})
            if existing:
                target = existing[0]
                for absorbed in existing[1:]:
                    self._merge_event(target, absorbed)
            else:
                target = self.next_event_id
                self.next_event_id += 1
                self.store.events[target] = EventRecord(target, [], (np.inf, -np.inf))
            self._extend_event(target, [rid for rid in rids
                                        if self.store.record_event.get(rid) != target])
            touched.append(target)
            for rid in rids:
                assignment[rid] = target
        self._retrieved_count = len(retrieved)
        return assignment, sorted(set(touched)), timings

    def _extend_event(self, event_id: int, rids) -> None:
        event = self.store.events[event_id]
        recs = []
        for rid in rids:
            if rid in event.member_instances:
                continue
            event.member_instances.append(rid)
            self.store.record_event[rid] = event_id
            recs.append(self._record_by_id(rid))
        if recs:
            lo = min(r.time for r in recs)
            hi = max(r.time for r in recs)
            event.time_span = (min(event.time_span[0], lo), max(event.time_span[1], hi))
            for kind, counter in _summarize(recs).items():
                event.element_summary.setdefault(kind, Counter()).update(counter)
            self.store.index_event_elements(event)

    def _record_by_id(self, rid: str) -> MessageRecord:
        if rid in self.store.records:
            return self.store.records[rid]
        return self._pending[rid]

    def _merge_event(self, target: int, absorbed: int) -> None:
        src = self.store.events.pop(absorbed)
        dst = self.store.events[target]
        for rid in src.member_instances:
            if rid not in dst.member_instances:
                dst.member_instances.append(rid)
            self.store.record_event[rid] = target
        dst.time_span = (min(dst.time_span[0], src.time_span[0]),
                         max(dst.time_span[1], src.time_span[1]))
        for kind, counter in src.element_summary.items():
            dst.element_summary.setdefault(kind, Counter()).update(counter)
        self.store.forget_event(absorbed)
        self.store.index_event_elements(dst)
        old_chain = self.store.event_chain.pop(absorbed, None)
        if old_chain is not None:
            chain = self.store.chains[old_chain]
            chain.member_events = [e for e in chain.member_events if e != absorbed]
            if not chain.member_events:
                del self.store.chains[old_chain]

    # -- evolution --------------------------------------------------------

    def evolve_slice(self, touched_events) -> tuple[dict[int, int], dict]:
        """Chain the touched events against retrieved history; returns
        (event id -> chain id for the working set, phase timings in ms)."""
        cfg = self.config
        timings = {"build": 0.0, "similarity": 0.0, "cluster": 0.0}
        touched = [eid for eid in touched_events if eid in self.store.events]
        if not touched:
            return {}, timings
        t0 = _time.perf_counter()
        candidates: set[int] = set(touched)
        for eid in touched:
            for other in retrieve_related_events(self.store, self.store.events[eid],
                                                 cfg.retrieval):
                candidates.add(other)
        ce = sorted(candidates)
        member_recs: dict[str, MessageRecord] = {}
        assignment_by_rid: dict[str, int] = {}
        for eid in ce:
            for rid in self.store.events[eid].member_instances:
                member_recs[rid] = self._record_by_id(rid)
                assignment_by_rid[rid] = eid
        records = sorted(member_recs.values(), key=lambda r: (r.time, r.id))
        hin = build_hin(records, cfg.enrichment, cfg.slice_width)
        assignments = {
            hin.index_of(NodeType.EVENT_INSTANCE, rid): eid
            for rid, eid in assignment_by_rid.items()
        }
        layered = build_event_layer(hin, assignments)
        t1 = _time.perf_counter()
        timings["build"] = (t1 - t0) * 1000.0
        anchors = [layered.index_of(NodeType.EVENT, str(eid)) for eid in ce]
        mats = per_path_similarity_matrices(layered, cfg.evolution_paths, anchors=anchors)
        sim = combine_similarities(mats, cfg.evolve_weights)
        t2 = _time.perf_counter()
        timings["similarity"] = (t2 - t1) * 1000.0
        dm = clustering.from_similarity(sim, threads=cfg.threads)
        labels = clustering.dbscan(dm, cfg.evolve_epsilon, cfg.min_pts, cfg.threads)
        timings["cluster"] = (_time.perf_counter() - t2) * 1000.0

        chain_of: dict[int, int] = {}
        for cluster in range(int(labels.max()) + 1 if labels.size else 0):
            eids = [ce[i] for i in np.flatnonzero(labels == cluster)]
            existing = sorted({self.store.event_chain[eid] for eid in eids
                               if eid in self.store.event_chain})
            if existing:
                target = existing[0]
                chain = self.store.chains[target]
                merged = set(chain.member_events)
                for absorbed in existing[1:]:
                    merged |= set(self.store.chains.pop(absorbed).member_events)
                merged |= set(eids)
                chain.member_events = self._time_ordered(merged)
            else:
                target = self.next_chain_id
                self.next_chain_id += 1
                self.store.chains[target] = EvolutionChain(target, self._time_ordered(eids))
            for eid in self.store.chains[target].member_events:
                self.store.event_chain[eid] = target
            for eid in eids:
                chain_of[eid] = target
        return chain_of, timings

    def _time_ordered(self, event_ids) -> list[int]:
        return sorted(event_ids, key=lambda eid: (self.store.events[eid].time, eid))

    # -- slice driver ------------------------------------------------------

    def process_slice(self, slice_index: int, new_records) -> tuple[SliceReport, dict[str, int]]:
        cfg = self.config
        slice_start = slice_index * cfg.slice_width
        self._last_slice_start = slice_start
        usable = []
        for rec in sorted(new_records, key=lambda r: (r.time, r.id)):
            if rec.time < slice_start - cfg.retention:
                self.diagnostics.append(
                    f"slice {slice_index}: dropped {rec.id} older than retention")
                continue
            usable.append(rec)
        self._pending = {rec.id: rec for rec in usable}
        self._retrieved_count = 0
        assignment, touched, detect_ms = self.detect_slice(usable)
        chain_of, evolve_ms = self.evolve_slice(touched)
        for rec in usable:
            self.store.add_record(rec)
        self.store.prune(slice_start + cfg.slice_width - cfg.retention)
        self._pending = {}
        report = SliceReport(
            t=slice_index,
            n_new=len(usable),
            n_retrieved=self._retrieved_count,
            n_events=len(set(assignment.values())),
            n_chains=len(set(chain_of.values())),
            ms_build=detect_ms["build"] + evolve_ms["build"],
            ms_similarity=detect_ms["similarity"] + evolve_ms["similarity"],
            ms_cluster=detect_ms["cluster"] + evolve_ms["cluster"],
        )
        return report, assignment


def run_stream(records, config: StreamConfig, on_slice=None):
    """Replay a corpus slice by slice; returns (reports, session).

    Records are sorted by time first; every slice index between the first
    and last message produces a report, empty slices included. `on_slice`
    is called with (report, assignment) after each slice.
    """
    ordered = sorted(records, key=lambda r: (r.time, r.id))
    reports: list[SliceReport] = []
    session = StreamSession(config)
    if not ordered:
        return reports, session
    width = config.slice_width
    first = int(ordered[0].time) // width
    last = int(ordered[-1].time) // width
    cursor = 0
    for t in range(first, last + 1):
        end = (t + 1) * width
        batch = []
        while cursor < len(ordered) and ordered[cursor].time < end:
            batch.append(ordered[cursor])
            cursor += 1
        report, assignment = session.process_slice(t, batch)
        if on_slice is not None:
            on_slice(report, assignment)
        reports.append(report)
    return reports, session
