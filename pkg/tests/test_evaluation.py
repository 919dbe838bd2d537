import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hinevent.evaluation import (
    SyntheticSpec,
    accuracy_and_macro_f1,
    generate_synthetic,
    nmi,
    sample_labeled_pairs,
    threshold_sweep,
)


def test_nmi_identical_partitions():
    assert nmi([0, 0, 1, 1, 2], [0, 0, 1, 1, 2]) == pytest.approx(1.0)


def test_nmi_invariant_to_relabeling():
    assert nmi(["a", "a", "b", "b"], [7, 7, 3, 3]) == pytest.approx(1.0)


def test_nmi_single_cluster_convention():
    assert nmi([0, 0, 0], [5, 5, 5]) == 1.0


def test_nmi_independent_partitions():
    assert nmi([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(0.0, abs=1e-12)


def test_nmi_length_mismatch():
    with pytest.raises(ValueError):
        nmi([0, 1], [0, 1, 2])


def test_nmi_matches_sklearn():
    from sklearn.metrics import normalized_mutual_info_score

    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(2, 60))
        a = rng.integers(0, 5, size=n)
        b = rng.integers(0, 4, size=n)
        assert nmi(a, b) == pytest.approx(
            normalized_mutual_info_score(a, b, average_method="arithmetic"), abs=1e-9)


@given(st.lists(st.integers(0, 4), min_size=2, max_size=40))
@settings(max_examples=60, deadline=None)
def test_nmi_symmetric_and_bounded(labels):
    rng = np.random.default_rng(len(labels))
    other = rng.integers(0, 3, size=len(labels))
    forward = nmi(labels, other)
    assert forward == pytest.approx(nmi(other, labels))
    assert -1e-12 <= forward <= 1.0 + 1e-12


def test_accuracy_f1_perfect():
    assert accuracy_and_macro_f1([1, 2, 3], [1, 2, 3]) == (1.0, 1.0)


def test_accuracy_f1_all_wrong_balanced():
    acc, f1 = accuracy_and_macro_f1([1, 1, 0, 0], [0, 0, 1, 1])
    assert acc == 0.0
    assert f1 == 0.0


def test_accuracy_f1_hand_checked_three_class():
    truth = list("AABBC")
    pred = list("AABBB")
    acc, f1 = accuracy_and_macro_f1(pred, truth)
    assert acc == pytest.approx(0.8)
    # A: F1=1; B: precision 2/3, recall 1 -> 0.8; C: 0
    assert f1 == pytest.approx((1.0 + 0.8 + 0.0) / 3)


def test_sweep_separable_pairs_tie_rule():
    sim = np.array([
        [1.0, 0.9, 0.1, 0.1],
        [0.9, 1.0, 0.1, 0.1],
        [0.1, 0.1, 1.0, 0.9],
        [0.1, 0.1, 0.9, 1.0],
    ])
    pairs = [(0, 1, True), (2, 3, True), (0, 2, False), (1, 3, False)]
    result = threshold_sweep(sim, pairs)
    assert result.best_threshold == pytest.approx(0.11)
    assert result.best_epsilon == pytest.approx(0.89)
    assert result.accuracies.max() == 1.0


def test_sweep_endpoints_match_base_rates():
    sim = np.array([[1.0, 0.4, 0.6], [0.4, 1.0, 0.5], [0.6, 0.5, 1.0]])
    pairs = [(0, 1, True), (0, 2, True), (1, 2, False)]
    result = threshold_sweep(sim, pairs)
    assert result.accuracies[0] == pytest.approx(2 / 3)   # everything predicted same
    assert result.accuracies[-1] == pytest.approx(1 / 3)  # threshold 1.0 keeps sims >= 1 only


def test_sweep_empty_pairs():
    with pytest.raises(ValueError):
        threshold_sweep(np.eye(2), [])


def test_sweep_grid_inclusive_comparison():
    sim = np.array([[1.0, 0.1], [0.1, 1.0]])
    result = threshold_sweep(sim, [(0, 1, True)])
    # at threshold 0.10 the 0.1-similarity pair must count as "same"
    idx = int(np.argwhere(np.isclose(result.thresholds, 0.10))[0, 0])
    assert result.accuracies[idx] == 1.0


def test_generate_single_event_single_instance():
    spec = SyntheticSpec(n_events=1, instances_per_event=(1, 1), n_chains=0,
                         events_per_chain=(0, 0), seed=1)
    records, truth_events, truth_chains = generate_synthetic(spec)
    assert len(records) == 1
    assert truth_events[records[0].id] == 0
    assert truth_chains == {0: 0}


def test_generate_deterministic_under_seed():
    spec = SyntheticSpec(n_events=6, instances_per_event=(2, 4), n_chains=2,
                         events_per_chain=(2, 2), seed=42)
    first = generate_synthetic(spec)
    second = generate_synthetic(spec)
    assert first[0] == second[0]
    assert first[1] == second[1]
    assert first[2] == second[2]


def test_generate_infeasible_spec():
    with pytest.raises(ValueError):
        SyntheticSpec(n_events=3, n_chains=2, events_per_chain=(2, 2))
    with pytest.raises(ValueError):
        SyntheticSpec(intra_rate=0.1, inter_rate=0.2)


def test_generate_chain_members_share_anchor_entity():
    spec = SyntheticSpec(n_events=8, instances_per_event=(2, 3), n_chains=2,
                         events_per_chain=(2, 3), seed=5)
    records, truth_events, truth_chains = generate_synthetic(spec)
    chained_events = [e for e, c in truth_chains.items() if c < spec.n_chains]
    for event in chained_events:
        chain = truth_chains[event]
        for rec in records:
            if truth_events[rec.id] == event:
                assert f"ent_anchor_{chain}" in rec.entities


def test_generate_time_sorted_and_positive():
    spec = SyntheticSpec(n_events=5, instances_per_event=(2, 3), n_chains=1,
                         events_per_chain=(2, 2), seed=3)
    records, _, _ = generate_synthetic(spec)
    times = [r.time for r in records]
    assert times == sorted(times)
    assert min(times) > 0


def test_generator_separability():
    spec = SyntheticSpec(n_events=10, instances_per_event=(5, 5), seed=11,
                         n_chains=2, events_per_chain=(2, 2))
    records, truth_events, _ = generate_synthetic(spec)
    labels = [truth_events[r.id] for r in records]
    same_overlap, diff_overlap = [], []
    for i in range(0, len(records), 3):
        for j in range(i + 1, len(records), 3):
            shared = len(records[i].elements() & records[j].elements())
            (same_overlap if labels[i] == labels[j] else diff_overlap).append(shared)
    assert np.mean(same_overlap) > np.mean(diff_overlap)


def test_sample_labeled_pairs_balanced_and_consistent():
    rng = np.random.default_rng(0)
    labels = [0, 0, 0, 1, 1, 2]
    pairs = sample_labeled_pairs(labels, 20, rng)
    assert len(pairs) == 40
    for i, j, same in pairs:
        assert (labels[i] == labels[j]) == same
