import numpy as np
import pytest

from hinevent.hin import NodeType, RelationType
from hinevent.ingest import MessageRecord
from hinevent.metapath import MetaPath, MetaPathSet
from hinevent.streaming import (
    EventRecord,
    HistoryStore,
    RetrievalConfig,
    StreamConfig,
    StreamSession,
    retrieve_related_events,
    retrieve_related_instances,
    run_stream,
)

I, K, N, E = (NodeType.EVENT_INSTANCE, NodeType.KEYWORD, NodeType.ENTITY, NodeType.EVENT)
CK, CN, CO = (RelationType.CONTAINS_KEYWORD, RelationType.CONTAINS_ENTITY,
              RelationType.CONSISTS_OF)

KEYWORD_PATHS = MetaPathSet([MetaPath((I, K, I), (CK, CK))])
EVENT_ENTITY_PATHS = MetaPathSet([MetaPath((E, I, N, I, E), (CO, CN, CN, CO))])


def record(rid, time, keywords=(), entities=(), user="u"):
    return MessageRecord(id=rid, text="", time=time, user=user,
                         keywords=tuple(keywords), entities=tuple(entities))


def simple_config(**kw):
    defaults = dict(
        slice_width=1800,
        retrieval=RetrievalConfig(t1=6 * 3600.0, t2=48 * 3600.0, top_k=10),
        detect_epsilon=0.5,
        evolve_epsilon=0.8,
        retention=4 * 86400.0,
        detection_paths=KEYWORD_PATHS,
        evolution_paths=EVENT_ENTITY_PATHS,
    )
    defaults.update(kw)
    return StreamConfig(**defaults)


def store_with(records):
    store = HistoryStore()
    for rec in records:
        store.add_record(rec)
    return store


# -- retrieval -----------------------------------------------------------------

def test_retrieval_config_validation():
    with pytest.raises(ValueError):
        RetrievalConfig(t1=10.0, t2=5.0)
    with pytest.raises(ValueError):
        RetrievalConfig(top_k=-1)


def test_retrieve_empty_without_shared_elements():
    store = store_with([record("old", 1000, ["x"], user="u1")])
    query = record("new", 2000, ["y"], user="u2")
    assert retrieve_related_instances(store, query, RetrievalConfig()) == []


def test_retrieve_excludes_outside_window():
    cfg = RetrievalConfig(t1=1000.0, t2=2000.0)
    store = store_with([record("far", 500, ["k"]), record("near", 4600, ["k"])])
    query = record("q", 5000, ["k"])
    assert retrieve_related_instances(store, query, cfg) == ["near"]


def test_retrieve_rank_overlap_then_recency():
    cfg = RetrievalConfig(t1=10000.0, t2=20000.0, top_k=2)
    store = store_with([
        record("triple", 9000, ["k1", "k2", "k3"]),
        record("late_single", 9500, ["k1"]),
        record("early_single", 8000, ["k1"]),
    ])
    query = record("q", 10000, ["k1", "k2", "k3"])
    assert retrieve_related_instances(store, query, cfg) == ["triple", "late_single"]


def test_retrieve_soundness_and_completeness_vs_brute_force():
    rng = np.random.default_rng(3)
    cfg = RetrievalConfig(t1=5000.0, t2=10000.0, top_k=7)
    vocab = [f"k{i}" for i in range(12)]
    records = [
        record(f"h{i:03d}", int(rng.integers(1000, 30000)),
               rng.choice(vocab, size=3, replace=False))
        for i in range(120)
    ]
    store = store_with(records)
    for probe in range(10):
        query = record(f"q{probe}", int(rng.integers(5000, 35000)),
                       rng.choice(vocab, size=4, replace=False))
        expected = []
        for cand in records:
            dt = query.time - cand.time
            overlap = len(query.elements() & cand.elements())
            if 0 <= dt < cfg.t1 and overlap > 0:
                expected.append((-overlap, -cand.time, cand.id))
        expected.sort()
        assert retrieve_related_instances(store, query, cfg) == [e[2] for e in expected][:cfg.top_k]


def event_record(eid, times, elements):
    ev = EventRecord(eid, [f"e{eid}_m{k}" for k in range(len(times))],
                     (min(times), max(times)))
    for kind, keys in elements.items():
        from collections import Counter

        ev.element_summary[kind] = Counter(keys)
    return ev


def test_event_retrieval_strict_window_boundary():
    cfg = RetrievalConfig(t1=100.0, t2=1000.0)
    store = HistoryStore()
    old = event_record(1, [2000.0], {"keyword": ["shared"]})
    store.events[1] = old
    store.index_event_elements(old)
    at_boundary = event_record(2, [3000.0], {"keyword": ["shared"]})
    inside = event_record(3, [2500.0], {"keyword": ["shared"]})
    store.events[3] = inside
    store.index_event_elements(inside)
    assert retrieve_related_events(store, at_boundary, cfg) == [3]
    # exactly t2 apart is excluded
    query = event_record(4, [2000.0 + cfg.t2], {"keyword": ["shared"]})
    hits = retrieve_related_events(store, query, cfg)
    assert 1 not in hits


def test_event_overlap_counts_union_of_member_elements():
    cfg = RetrievalConfig(t1=100.0, t2=10000.0)
    store = HistoryStore()
    historical = event_record(1, [1000.0], {"entity": ["cathedral"], "keyword": ["fire"]})
    store.events[1] = historical
    store.index_event_elements(historical)
    query = event_record(2, [1500.0], {"entity": ["cathedral"], "keyword": ["rebuild"]})
    assert retrieve_related_events(store, query, cfg) == [1]


# -- slice detection -------------------------------------------------------------

def test_single_instance_empty_history_singleton_event():
    session = StreamSession(simple_config())
    report, assignment = session.process_slice(0, [record("only", 100, ["k"])])
    assert assignment == {"only": 0}
    assert report.n_new == 1
    assert report.n_events == 1
    assert session.store.events[0].member_instances == ["only"]


def test_new_instance_joins_historical_event():
    session = StreamSession(simple_config())
    session.process_slice(0, [record("a", 100, ["fire", "paris"]),
                              record("b", 200, ["fire", "paris"])])
    assert session.store.record_event["a"] == session.store.record_event["b"] == 0
    report, assignment = session.process_slice(1, [record("c", 1900, ["fire", "paris"])])
    assert assignment["c"] == 0
    assert report.n_retrieved == 2
    assert session.store.events[0].time_span == (100.0, 1900.0)
    assert sorted(session.store.events[0].member_instances) == ["a", "b", "c"]


def test_unrelated_instances_get_fresh_ids():
    session = StreamSession(simple_config())
    _, first = session.process_slice(0, [record("a", 100, ["x"])])
    _, second = session.process_slice(1, [record("b", 1900, ["y"])])
    assert first["a"] == 0
    assert second["b"] == 1


def test_multi_way_merge_takes_lowest_id():
    config = simple_config(detect_epsilon=0.6)
    session = StreamSession(config)
    session.process_slice(0, [record("a", 100, ["alpha"]), record("b", 200, ["beta"])])
    assert session.store.record_event["a"] != session.store.record_event["b"]
    # bridge shares enough keywords with both to cluster them together
    _, assignment = session.process_slice(
        1, [record("bridge", 1900, ["alpha", "beta"])])
    assert assignment["bridge"] == 0
    assert session.store.record_event["a"] == 0
    assert session.store.record_event["b"] == 0
    assert 1 not in session.store.events


def test_empty_slice_reports_zeroes():
    session = StreamSession(simple_config())
    report, assignment = session.process_slice(5, [])
    assert assignment == {}
    assert report.n_new == 0 and report.n_events == 0 and report.n_chains == 0


# -- evolution ---------------------------------------------------------------------

def test_singleton_event_forms_singleton_chain():
    session = StreamSession(simple_config())
    session.process_slice(0, [record("a", 100, ["k"], ["anchor"])])
    assert session.store.chains[0].member_events == [0]


def test_three_phase_evolution_chain_in_time_order():
    config = simple_config()
    session = StreamSession(config)
    phases = [
        ("fire", 0, ["fire", "blaze"]),
        ("out", 4, ["extinguished", "relief"]),
        ("rebuild", 8, ["reconstruction", "donations"]),
    ]
    for name, slice_idx, keywords in phases:
        recs = [record(f"{name}{k}", slice_idx * 1800 + 100 + k, keywords, ["cathedral"])
                for k in range(2)]
        session.process_slice(slice_idx, recs)
    assert len(session.store.chains) == 1
    chain = session.store.chains[0]
    events = [session.store.events[eid] for eid in chain.member_events]
    times = [ev.time for ev in events]
    assert times == sorted(times)
    assert len(chain.member_events) == 3


def test_unrelated_events_stay_separate_chains():
    session = StreamSession(simple_config())
    session.process_slice(0, [record("a", 100, ["x"], ["site_a"])])
    session.process_slice(1, [record("b", 1900, ["y"], ["site_b"])])
    assert len(session.store.chains) == 2


# -- replay ---------------------------------------------------------------------

def test_run_stream_empty_corpus():
    reports, session = run_stream([], simple_config())
    assert reports == []
    assert session.next_event_id == 0


def test_run_stream_slice_range_includes_gaps():
    records = [record("a", 100, ["x"]), record("b", 100 + 3 * 1800, ["x"])]
    reports, _ = run_stream(records, simple_config())
    assert [r.t for r in reports] == [0, 1, 2, 3]
    assert [r.n_new for r in reports] == [1, 0, 0, 1]


def test_run_stream_deterministic_reports():
    rng = np.random.default_rng(8)
    vocab = [f"k{i}" for i in range(10)]
    records = [
        record(f"m{i:03d}", int(rng.integers(1, 6 * 1800)),
               rng.choice(vocab, size=2, replace=False))
        for i in range(60)
    ]
    out = []
    for _ in range(2):
        reports, session = run_stream(records, simple_config())
        stripped = [{k: v for k, v in r.as_dict().items() if not k.startswith("ms_")}
                    for r in reports]
        labels = dict(session.store.record_event)
        chains = {c.chain_id: list(c.member_events) for c in session.store.chains.values()}
        out.append((stripped, labels, chains))
    assert out[0] == out[1]


def test_straddling_event_merges_to_one_id():
    records = [
        record("first", 1700, ["storm", "coast"]),
        record("second", 1900, ["storm", "coast"]),   # next slice, same content
    ]
    _, session = run_stream(records, simple_config())
    assert session.store.record_event["first"] == session.store.record_event["second"]
    assert len(session.store.events) == 1


def test_retention_drop_diagnostic():
    config = simple_config(retention=2 * 86400.0)
    session = StreamSession(config)
    report, assignment = session.process_slice(200, [record("stale", 100, ["k"])])
    assert assignment == {}
    assert report.n_new == 0
    assert any("stale" in note for note in session.diagnostics)


def test_history_pruned_beyond_retention():
    config = simple_config(retention=2 * 86400.0)
    records = [record("old", 100, ["k"]),
               record("new", 3 * 86400, ["k"])]
    _, session = run_stream(records, config)
    assert "old" not in session.store.records
    assert "new" in session.store.records


def test_retrieval_cap_limits_working_set():
    config = simple_config(slice_retrieval_cap=3)
    session = StreamSession(config)
    session.process_slice(0, [record(f"h{i}", 100 + i, ["k"]) for i in range(8)])
    report, _ = session.process_slice(1, [record("q", 1900, ["k"])])
    assert report.n_retrieved == 3
