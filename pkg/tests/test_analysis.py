"""Per-concept F1, semantic-factor curves, and category aggregation."""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from taxoprobe.analysis import (
    AnalysisError,
    BinnedCurve,
    ConceptFactors,
    bin_by_factor,
    bootstrap_ci,
    category_f1,
    compute_factors,
    concept_f1,
    pair_distance_curve,
    read_frequencies,
)
from taxoprobe.sampler import LabeledEdgeExample
from taxoprobe.synthetic import synthetic_taxonomy
from taxoprobe.taxonomy import Synset, TaxonomyGraph


def example(x, y, label):
    return LabeledEdgeExample(x=x, y=y, label=label, split="test", x_sentence=0, y_sentence=0)


def hand_graph():
    """r -> {a, b}; a -> {c, d}; lemma "bank" shared by b and c."""
    synsets = [
        Synset("r", ("entity",), "top"),
        Synset("a", ("animal", "beast"), "a living thing"),
        Synset("b", ("bank",), "a money institution"),
        Synset("c", ("bank", "slope"), "a river side"),
        Synset("d", ("dog",), "a pet"),
    ]
    edges = [("a", "r"), ("b", "r"), ("c", "a"), ("d", "a")]
    return TaxonomyGraph(synsets, edges)


# ---------------------------------------------------------------------------
# concept_f1


def test_concept_f1_perfect_synset_scores_one():
    examples = [example("a", "r", 1), example("b", "r", 1), example("a", "b", 0)]
    scores = concept_f1([0.9, 0.8, 0.1], examples)
    assert scores["a"] == 1.0
    assert scores["r"] == 1.0
    # b participates in one TP and one TN, both correct
    assert scores["b"] == 1.0


def test_concept_f1_pure_negative_synset_scores_one():
    examples = [example("a", "b", 0)]
    scores = concept_f1([0.2], examples)
    assert scores == {"a": 1.0, "b": 1.0}


def test_concept_f1_tp_fp_case():
    # "a" sees 1 TP and 1 FP, no FN: F1 = 2TP/(2TP+FP+FN) = 2/3
    examples = [example("a", "r", 1), example("a", "b", 0)]
    scores = concept_f1([0.9, 0.7], examples)
    assert scores["a"] == pytest.approx(2.0 / 3.0)


def test_concept_f1_omits_zero_example_synsets():
    examples = [example("a", "r", 1)]
    scores = concept_f1([0.9], examples)
    assert set(scores) == {"a", "r"}


def test_concept_f1_rejects_length_mismatch():
    with pytest.raises(AnalysisError) as err:
        concept_f1([0.9, 0.1], [example("a", "r", 1)])
    assert err.value.code == "bad-predictions"


def test_concept_f1_matches_group_by_oracle():
    rng = np.random.default_rng(21)
    ids = [f"s{i}" for i in range(12)]
    examples = []
    for _ in range(400):
        x, y = rng.choice(ids, size=2, replace=False)
        examples.append(example(str(x), str(y), int(rng.random() < 0.4)))
    h = rng.random(len(examples))
    scores = concept_f1(h, examples)

    # independent group-by: confusion counts per synset, straight formula
    for sid in ids:
        rows = [(p, e.label) for p, e in zip(h, examples) if sid in (e.x, e.y)]
        if not rows:
            assert sid not in scores
            continue
        tp = sum(1 for p, l in rows if p >= 0.5 and l == 1)
        fp = sum(1 for p, l in rows if p >= 0.5 and l == 0)
        fn = sum(1 for p, l in rows if p < 0.5 and l == 1)
        want = 1.0 if fp == fn == 0 else 2.0 * tp / (2.0 * tp + fp + fn)
        assert scores[sid] == pytest.approx(want)


# ---------------------------------------------------------------------------
# factors


def test_compute_factors_hand_graph():
    graph = hand_graph()
    freqs = {"animal": 10, "beast": 5, "bank": 7, "dog": 3}
    factors = compute_factors(graph, freqs)
    assert set(factors) == {"r", "a", "b", "c", "d"}

    assert factors["r"].depth_percent == 0.0
    assert factors["c"].depth_percent == 100.0
    assert factors["b"].depth_percent == 100.0

    assert factors["r"].n_subclasses == 4
    assert factors["a"].n_subclasses == 2
    assert factors["d"].n_subclasses == 0

    assert factors["a"].frequency == 15  # animal + beast
    assert factors["c"].frequency == 7  # bank counted, slope missing from the table
    assert factors["r"].frequency == 0

    # first lemma "bank" appears in synsets b and c, in that table order
    assert factors["b"].n_senses == 2
    assert factors["c"].n_senses == 2
    assert factors["b"].sense_rank == 1
    assert factors["c"].sense_rank == 2
    assert factors["a"].n_senses == 1
    assert factors["a"].sense_rank == 1

    assert factors["a"].n_siblings == 1  # b
    assert factors["c"].n_siblings == 1  # d
    assert factors["r"].n_siblings == 0

    assert factors["a"].n_synonyms == 2
    assert factors["b"].n_synonyms == 1

    assert factors["a"].graph_distance_of_pair is None


def test_compute_factors_invariants_on_random_graph():
    graph = synthetic_taxonomy(40, seed=9)
    factors = compute_factors(graph, None)
    for sid, row in factors.items():
        assert row.synset == sid
        assert 0.0 <= row.depth_percent <= 100.0
        for field in ("n_subclasses", "frequency", "n_senses", "sense_rank", "n_siblings", "n_synonyms"):
            assert getattr(row, field) >= 0
        assert row.sense_rank >= 1
        assert row.n_senses >= row.sense_rank


def test_read_frequencies_round_trip(tmp_path):
    path = tmp_path / "frequencies.tsv"
    path.write_text("dog\t100\nbank\t7\n", encoding="utf-8")
    assert read_frequencies(str(path)) == {"dog": 100, "bank": 7}


def test_read_frequencies_rejects_bad_count(tmp_path):
    path = tmp_path / "frequencies.tsv"
    path.write_text("dog\tmany\n", encoding="utf-8")
    with pytest.raises(AnalysisError) as err:
        read_frequencies(str(path))
    assert err.value.code == "bad-frequency"


# ---------------------------------------------------------------------------
# bin_by_factor


def flat_inputs(n, f1=0.8, seed=22):
    rng = np.random.default_rng(seed)
    f1_map = {}
    factors = {}
    for i in range(n):
        sid = f"s{i}"
        f1_map[sid] = f1
        factors[sid] = ConceptFactors(
            synset=sid,
            depth_percent=float(rng.uniform(0, 100)),
            n_subclasses=int(rng.integers(0, 50)),
            frequency=int(rng.integers(0, 1000)),
            n_senses=1,
            sense_rank=1,
            n_siblings=0,
            n_synonyms=1,
        )
    return f1_map, factors


def test_bin_by_factor_constant_input_is_flat():
    f1_map, factors = flat_inputs(1000)
    curve = bin_by_factor(f1_map, factors, "depth_percent", seed=1)
    assert isinstance(curve, BinnedCurve)
    assert curve.factor == "depth_percent"
    assert len(curve.bins) > 0
    for stats in curve.bins:
        assert stats.mean == pytest.approx(0.8)
        assert stats.ci_lo == pytest.approx(0.8)
        assert stats.ci_hi == pytest.approx(0.8)


def test_bin_by_factor_rejects_unknown_factor():
    f1_map, factors = flat_inputs(200)
    with pytest.raises(AnalysisError) as err:
        bin_by_factor(f1_map, factors, "charisma")
    assert err.value.code == "unknown-factor"


def test_bin_by_factor_excludes_small_bins():
    f1_map, factors = flat_inputs(249)
    # explicit edges splitting depth into [0, 50) with ~half the mass each;
    # force exact counts by overwriting depth values
    sids = sorted(f1_map)
    for i, sid in enumerate(sids):
        depth = 10.0 if i < 99 else 80.0
        factors[sid] = ConceptFactors(
            synset=sid, depth_percent=depth, n_subclasses=0, frequency=0,
            n_senses=1, sense_rank=1, n_siblings=0, n_synonyms=1,
        )
    curve = bin_by_factor(f1_map, factors, "depth_percent", bins=[0.0, 50.0, 100.0], seed=1)
    assert len(curve.bins) == 1
    assert curve.bins[0].count == 150
    assert len(curve.excluded) == 1
    assert curve.excluded[0].count == 99
    assert curve.total == 249


def test_bin_by_factor_counts_sum_to_total():
    f1_map, factors = flat_inputs(995, seed=23)
    curve = bin_by_factor(f1_map, factors, "frequency", seed=2)
    total = sum(s.count for s in curve.bins) + sum(s.count for s in curve.excluded)
    assert total == curve.total == 995


def test_bin_by_factor_ci_brackets_mean():
    rng = np.random.default_rng(24)
    f1_map, factors = flat_inputs(1200, seed=25)
    for sid in f1_map:
        f1_map[sid] = float(rng.random())
    curve = bin_by_factor(f1_map, factors, "depth_percent", seed=3)
    assert len(curve.bins) >= 5
    for stats in curve.bins:
        assert stats.ci_lo <= stats.mean <= stats.ci_hi
        assert stats.ci_hi - stats.ci_lo > 0.0


def test_bin_by_factor_planted_depth_signal_decreases():
    rng = np.random.default_rng(26)
    f1_map = {}
    factors = {}
    for i in range(1500):
        sid = f"s{i}"
        depth = float(rng.uniform(0, 100))
        noise = float(rng.normal(0, 0.03))
        f1_map[sid] = float(np.clip(1.0 - 0.006 * depth + noise, 0.0, 1.0))
        factors[sid] = ConceptFactors(
            synset=sid, depth_percent=depth, n_subclasses=0, frequency=0,
            n_senses=1, sense_rank=1, n_siblings=0, n_synonyms=1,
        )
    curve = bin_by_factor(f1_map, factors, "depth_percent", seed=4)
    means = [s.mean for s in curve.bins]
    assert len(means) >= 8
    assert all(b < a + 0.02 for a, b in zip(means, means[1:]))
    assert means[-1] < means[0] - 0.3


def test_bin_by_factor_is_deterministic():
    f1_map, factors = flat_inputs(600, seed=27)
    rng = np.random.default_rng(28)
    for sid in f1_map:
        f1_map[sid] = float(rng.random())
    a = bin_by_factor(f1_map, factors, "n_subclasses", seed=5)
    b = bin_by_factor(f1_map, factors, "n_subclasses", seed=5)
    assert a == b


def test_bootstrap_ci_coverage_on_bernoulli():
    rng = np.random.default_rng(29)
    p = 0.7
    hits = 0
    sims = 1000
    for i in range(sims):
        values = (rng.random(200) < p).astype(np.float64)
        lo, hi = bootstrap_ci(values, seed=i, resamples=1000, level=0.9)
        hits += lo <= p <= hi
    assert 0.86 <= hits / sims <= 0.94


# ---------------------------------------------------------------------------
# pair distance curve


def test_pair_distance_curve_decreases_with_distance():
    graph = hand_graph()  # c is two hops from r
    examples = []
    h = []
    rng = np.random.default_rng(30)
    for _ in range(150):  # distance 1, predicted well
        examples.append(example("a", "r", 1))
        h.append(0.9)
        examples.append(example("d", "a", 1))
        h.append(0.8)
    for _ in range(150):  # distance 2, predicted badly
        examples.append(example("c", "r", 1))
        h.append(float(rng.random() < 0.3))
    curve = pair_distance_curve(h, examples, graph, seed=6)
    assert curve.factor == "graph_distance_of_pair"
    assert [s.lo for s in curve.bins] == [1, 2]
    assert curve.bins[0].mean == 1.0
    assert curve.bins[1].mean < 0.6
    assert curve.bins[0].count == 300
    assert curve.bins[1].count == 150


def test_pair_distance_curve_excludes_small_bins():
    graph = hand_graph()
    examples = [example("a", "r", 1)] * 99 + [example("c", "r", 1)] * 100
    h = [0.9] * 199
    curve = pair_distance_curve(h, examples, graph, seed=7)
    assert [s.lo for s in curve.bins] == [2]
    assert curve.excluded[0].count == 99


# ---------------------------------------------------------------------------
# category_f1


def test_category_f1_single_concept():
    graph = hand_graph()
    stats = category_f1({"d": 0.75}, graph, ["d"])
    assert len(stats) == 1
    assert stats[0].root == "d"
    assert stats[0].mean == 0.75
    assert stats[0].std == 0.0
    assert stats[0].count == 1


def test_category_f1_includes_root_and_descendants():
    graph = hand_graph()
    f1_map = {"a": 1.0, "c": 0.5, "d": 0.3, "b": 0.9}
    stats = category_f1(f1_map, graph, ["a"])
    members = np.array([1.0, 0.5, 0.3])
    assert stats[0].mean == pytest.approx(members.mean())
    assert stats[0].std == pytest.approx(members.std())
    assert stats[0].count == 3


def test_category_f1_nested_categories():
    graph = hand_graph()
    f1_map = {"r": 0.2, "a": 1.0, "b": 0.9, "c": 0.5, "d": 0.3}
    stats = {s.root: s for s in category_f1(f1_map, graph, ["r", "a"])}
    assert stats["r"].count == 5  # parent category includes child-category members
    assert stats["a"].count == 3
    assert stats["r"].mean == pytest.approx(np.mean([0.2, 1.0, 0.9, 0.5, 0.3]))


def test_category_f1_hand_recomputation():
    graph = synthetic_taxonomy(5, seed=31)
    f1_map = {"s000": 0.1, "s001": 0.3, "s002": 0.5, "s003": 0.7, "s004": 0.9}
    stats = category_f1(f1_map, graph, ["s000"])
    values = np.array([0.1, 0.3, 0.5, 0.7, 0.9])
    assert stats[0].mean == pytest.approx(values.mean())
    assert stats[0].std == pytest.approx(values.std())


def test_category_f1_empty_category():
    graph = hand_graph()
    with pytest.raises(AnalysisError) as err:
        category_f1({"b": 0.5}, graph, ["a"])  # no member of a's subtree has an F1
    assert err.value.code == "empty-category"


def test_category_f1_unknown_root():
    graph = hand_graph()
    with pytest.raises(AnalysisError) as err:
        category_f1({"a": 0.5}, graph, ["nope"])
    assert err.value.code == "unknown-category"


def test_category_f1_order_invariant():
    graph = hand_graph()
    forward = {"a": 1.0, "c": 0.5, "d": 0.3}
    backward = dict(reversed(list(forward.items())))
    a = category_f1(forward, graph, ["a"])[0]
    b = category_f1(backward, graph, ["a"])[0]
    assert a.mean == b.mean and a.std == b.std
