"""Clustering metrics, the similarity-threshold sweep and a seeded
synthetic corpus generator with planted events and evolution chains.

The generator stands in for a labeled production corpus: each event owns a
private element pool, chain members additionally share a persistent anchor
entity, and every instance mixes private, shared and throwaway elements at
configurable rates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import MessageRecord


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(pred, truth) -> float:
    """Normalized mutual information, normalized by the mean of the two
    entropies. Two all-constant partitions score 1.0 by convention.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("label vectors must have equal length")
    n = pred.shape[0]
    if n == 0:
        raise ValueError("empty label vectors")
    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(truth, return_inverse=True)
    k_p, k_t = pi.max() + 1, ti.max() + 1
    table = np.zeros((k_p, k_t))
    np.add.at(table, (pi, ti), 1.0)
    h_p = _entropy(table.sum(axis=1))
    h_t = _entropy(table.sum(axis=0))
    if h_p == 0.0 and h_t == 0.0:
        return 1.0
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))
    nz = table > 0
    mi = float((table[nz] / n * np.log(n * table[nz] / outer[nz])).sum())
    return max(0.0, mi / ((h_p + h_t) / 2.0))


def accuracy_and_macro_f1(pred, truth) -> tuple[float, float]:
    """Plain accuracy and macro F1 averaged over classes present in truth."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("label vectors must have equal length")
    accuracy = float((pred == truth).mean())
    f1s = []
    for cls in np.unique(truth):
        tp = float(((pred == cls) & (truth == cls)).sum())
        fp = float(((pred == cls) & (truth != cls)).sum())
        fn = float(((pred != cls) & (truth == cls)).sum())
        f1s.append(2 * tp / (2 * tp + fp + fn) if tp > 0 else 0.0)
    return accuracy, float(np.mean(f1s))


@dataclass
class SweepResult:
    best_threshold: float
    best_epsilon: float
    thresholds: np.ndarray
    accuracies: np.ndarray


def threshold_sweep(similarity, pairs, step: float = 0.01) -> SweepResult:
    """Scan same/different decision thresholds over a similarity matrix.

    `pairs` is a list of (i, j, same) labels. Each grid threshold predicts
    same-class when similarity >= threshold; the lowest threshold reaching
    the best accuracy wins, and 1 - threshold is the clustering epsilon.
    """
    if not pairs:
        raise ValueError("empty pair set")
    sim = np.asarray(similarity, dtype=np.float64)
    values = np.array([sim[i, j] for i, j, _ in pairs])
    labels = np.array([bool(same) for _, _, same in pairs])
    n_steps = int(round(1.0 / step))
    thresholds = np.array([k * step for k in range(n_steps + 1)])
    accuracies = np.array([
        float(((values >= th) == labels).mean()) for th in thresholds
    ])
    best = int(np.argmax(accuracies))  # argmax takes the lowest index on ties
    theta = float(thresholds[best])
    return SweepResult(theta, 1.0 - theta, thresholds, accuracies)


@dataclass
class SyntheticSpec:
    n_events: int = 50
    instances_per_event: tuple[int, int] = (10, 10)
    keywords_per_instance: int = 6
    entities_per_instance: int = 3
    topics_per_instance: int = 1
    event_keyword_pool: int = 8
    event_entity_pool: int = 4
    event_topic_pool: int = 2
    shared_keywords: int = 30
    shared_entities: int = 15
    shared_topics: int = 5
    n_users: int = 100
    intra_rate: float = 0.8
    inter_rate: float = 0.05
    n_chains: int = 8
    events_per_chain: tuple[int, int] = (2, 4)
    start_time: int = 1_500_000_000
    horizon: int = 3 * 86400
    event_duration: int = 3600
    chain_gap: int = 6 * 3600
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.intra_rate <= 1 or self.inter_rate < 0:
            raise ValueError("rates must satisfy 0 < intra <= 1 and inter >= 0")
        if self.intra_rate <= self.inter_rate:
            raise ValueError("intra rate must exceed inter rate")
        if self.intra_rate + self.inter_rate > 1:
            raise ValueError("intra + inter rates must not exceed 1")
        counts = (self.n_events, self.instances_per_event[0], self.keywords_per_instance,
                  self.n_users, self.event_keyword_pool, self.shared_keywords)
        if min(counts) < 1:
            raise ValueError("spec counts must be positive")
        if self.events_per_chain[1] * self.n_chains > self.n_events:
            raise ValueError("chains request more events than exist")
        for pool, shared in ((self.event_entity_pool, self.shared_entities),
                             (self.event_topic_pool, self.shared_topics)):
            if pool < 1 or shared < 1:
                raise ValueError("element pools must be non-empty")


def _pick(rng, spec, private_pool, shared_pool, prefix, counter):
    roll = rng.random()
    if roll < spec.intra_rate:
        return str(rng.choice(private_pool))
    if roll < spec.intra_rate + spec.inter_rate:
        return str(rng.choice(shared_pool))
    counter[0] += 1
    return f"{prefix}_noise_{counter[0]}"


def generate_synthetic(spec: SyntheticSpec):
    """Seeded corpus with planted events and chains.

    Returns (records, truth_events, truth_chains): truth_events maps record
    id -> event index; truth_chains maps event index -> chain index, with
    unchained events as singleton chains. Records come back time-sorted.
    """
    rng = np.random.default_rng(spec.seed)
    kw_pools = [[f"kw_e{e}_{k}" for k in range(spec.event_keyword_pool)]
                for e in range(spec.n_events)]
    ent_pools = [[f"ent_e{e}_{k}" for k in range(spec.event_entity_pool)]
                 for e in range(spec.n_events)]
    top_pools = [[f"top_e{e}_{k}" for k in range(spec.event_topic_pool)]
                 for e in range(spec.n_events)]
    shared_kw = [f"kw_shared_{k}" for k in range(spec.shared_keywords)]
    shared_ent = [f"ent_shared_{k}" for k in range(spec.shared_entities)]
    shared_top = [f"top_shared_{k}" for k in range(spec.shared_topics)]
    users = [f"user_{u}" for u in range(spec.n_users)]

    # chains claim leading events; each chain shares one anchor entity
    chain_of: dict[int, int] = {}
    anchor_entity: dict[int, str] = {}
    event_start: dict[int, int] = {}
    next_event = 0
    for chain in range(spec.n_chains):
        length = int(rng.integers(spec.events_per_chain[0], spec.events_per_chain[1] + 1))
        first = int(rng.integers(0, max(1, spec.horizon - length * spec.chain_gap)))
        for step in range(length):
            chain_of[next_event] = chain
            anchor_entity[next_event] = f"ent_anchor_{chain}"
            event_start[next_event] = spec.start_time + first + step * spec.chain_gap
            next_event += 1
    n_chained = next_event
    for event in range(n_chained, spec.n_events):
        chain_of[event] = spec.n_chains + (event - n_chained)
        event_start[event] = spec.start_time + int(rng.integers(0, spec.horizon))

    records: list[MessageRecord] = []
    truth_events: dict[str, int] = {}
    counter = [0]
    lo, hi = spec.instances_per_event
    for event in range(spec.n_events):
        n_inst = int(rng.integers(lo, hi + 1))
        for inst in range(n_inst):
            when = event_start[event] + int(rng.integers(0, spec.event_duration))
            keywords = [_pick(rng, spec, kw_pools[event], shared_kw, "kw", counter)
                        for _ in range(spec.keywords_per_instance)]
            entities = [_pick(rng, spec, ent_pools[event], shared_ent, "ent", counter)
                        for _ in range(spec.entities_per_instance)]
            if event in anchor_entity:
                entities.append(anchor_entity[event])
            topics = [_pick(rng, spec, top_pools[event], shared_top, "top", counter)
                      for _ in range(spec.topics_per_instance)]
            rid = f"m{event:04d}_{inst:03d}"
            records.append(MessageRecord(
                id=rid,
                text=" ".join(keywords),
                time=when,
                user=str(rng.choice(users)),
                keywords=tuple(dict.fromkeys(keywords)),
                entities=tuple(dict.fromkeys(entities)),
                topics=tuple(dict.fromkeys(topics)),
            ))
            truth_events[rid] = event
    records.sort(key=lambda r: (r.time, r.id))
    return records, truth_events, dict(chain_of)


def sample_labeled_pairs(labels, n_per_side: int, rng: np.random.Generator):
    """Balanced (i, j, same) pairs for the threshold sweep, seeded."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    by_class: dict = {}
    for idx, cls in enumerate(labels.tolist()):
        by_class.setdefault(cls, []).append(idx)
    multi = [cls for cls, members in by_class.items() if len(members) > 1]
    if not multi or len(by_class) < 2:
        raise ValueError("need one multi-member class and two classes overall")
    pairs = []
    for _ in range(n_per_side):
        cls = multi[int(rng.integers(0, len(multi)))]
        i, j = rng.choice(by_class[cls], size=2, replace=False)
        pairs.append((int(i), int(j), True))
        a = int(rng.integers(0, n))
        b = int(rng.integers(0, n))
        while labels[a] == labels[b]:
            b = int(rng.integers(0, n))
        pairs.append((a, b, False))
    return pairs
