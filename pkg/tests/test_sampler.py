"""Split construction and triplet sampling, audited with the reachability oracle."""

from __future__ import annotations

import itertools
import json

import numpy as np
import pytest

from taxoprobe.sampler import (
    GlossOccurrence,
    SamplerError,
    SplitAssignment,
    SPLIT_NAMES,
    expand_triplet,
    group_occurrences,
    make_splits,
    read_examples,
    read_glosses,
    sample_triplets,
    write_examples,
    write_glosses,
)
from taxoprobe.synthetic import chain_taxonomy, synthetic_glosses, synthetic_taxonomy
from taxoprobe.taxonomy import Synset, TaxonomyGraph

from oracles import oracle_reachable, parents_table

TOY_SEED = 3  # frozen: synthetic_taxonomy(100, TOY_SEED) has a leaf fraction where +-3% is attainable


def toy_graph():
    return synthetic_taxonomy(100, TOY_SEED, shared_lemma_rate=0.08)


def all_in_one_split(graph, split="train"):
    return SplitAssignment(
        by_synset={sid: split for sid in graph.nodes()},
        lemma_index={lemma: split for s in graph.synsets.values() for lemma in s.lemmas},
    )


# ---------------------------------------------------------------------------
# splits


def test_split_fractions_and_lemma_disjointness():
    g = toy_graph()
    splits = make_splits(g, seed=7)
    counts = {name: 0 for name in SPLIT_NAMES}
    for sid in g.nodes():
        counts[splits.of(sid)] += 1
    n = len(g.nodes())
    assert abs(counts["train"] / n - 0.70) <= 0.02
    assert abs(counts["valid"] / n - 0.15) <= 0.02
    assert abs(counts["test"] / n - 0.15) <= 0.02

    lemma_splits = {}
    for sid in g.nodes():
        for lemma in g.synsets[sid].lemmas:
            lemma_splits.setdefault(lemma, set()).add(splits.of(sid))
    for lemma, seen in lemma_splits.items():
        assert len(seen) == 1, f"lemma {lemma} crosses splits {seen}"
    for a, b in itertools.combinations(SPLIT_NAMES, 2):
        in_a = {l for l, s in splits.lemma_index.items() if s == a}
        in_b = {l for l, s in splits.lemma_index.items() if s == b}
        assert not (in_a & in_b)


def test_split_leaf_ratio_close_to_global():
    g = toy_graph()
    splits = make_splits(g, seed=7)
    leaves = set(g.leaves())
    global_frac = len(leaves) / len(g.nodes())
    for name in SPLIT_NAMES:
        members = splits.members(name)
        frac = sum(1 for sid in members if sid in leaves) / len(members)
        assert abs(frac - global_frac) <= 0.03 + 1e-9, (name, frac, global_frac)


def test_split_determinism_and_seed_sensitivity():
    g = toy_graph()
    a = make_splits(g, seed=7)
    b = make_splits(g, seed=7)
    c = make_splits(g, seed=8)
    assert a.by_synset == b.by_synset
    assert a.lemma_index == b.lemma_index
    assert a.by_synset != c.by_synset


def test_shared_lemma_forces_same_split():
    # water spans two synsets; both must land together, transitively with a third.
    synsets = [Synset("r", ("top",), "")]
    edges = []
    for i in range(24):
        sid = f"n{i:02d}"
        synsets.append(Synset(sid, (f"w{i:02d}",), ""))
        edges.append((sid, "r"))
    synsets[1] = Synset("n00", ("w00", "water"), "")
    synsets[2] = Synset("n01", ("water", "aqua"), "")
    synsets[3] = Synset("n02", ("aqua",), "")
    g = TaxonomyGraph(synsets, edges)
    for seed in range(5):
        splits = make_splits(g, seed=seed)
        assert splits.of("n00") == splits.of("n01") == splits.of("n02")


def test_split_rejects_tiny_graph():
    g = synthetic_taxonomy(10, 1)
    with pytest.raises(SamplerError) as err:
        make_splits(g, seed=1)
    assert err.value.code == "too-small"


def test_split_rejects_unsatisfiable_lemma_sharing():
    # every synset shares the lemma "blob": one atom, impossible to split
    synsets = [Synset("r", ("blob", "r"), "")] + [Synset(f"n{i}", ("blob", f"l{i}"), "") for i in range(30)]
    edges = [(f"n{i}", "r") for i in range(30)]
    g = TaxonomyGraph(synsets, edges)
    with pytest.raises(SamplerError) as err:
        make_splits(g, seed=0)
    assert err.value.code == "unsatisfiable-split"


def test_every_synset_assigned_exactly_once():
    g = toy_graph()
    splits = make_splits(g, seed=7)
    assert sorted(splits.by_synset) == sorted(g.nodes())
    total = sum(len(splits.members(name)) for name in SPLIT_NAMES)
    assert total == len(g.nodes())


# ---------------------------------------------------------------------------
# glosses


def test_gloss_round_trip_and_indexing(tmp_path):
    g = synthetic_taxonomy(12, 5)
    occs = synthetic_glosses(g, per_synset=3, seed=5)
    path = str(tmp_path / "glosses.jsonl")
    write_glosses(path, occs)
    loaded = read_glosses(path)
    grouped = group_occurrences(occs)
    assert loaded == grouped
    for sid, rows in loaded.items():
        assert len(rows) == 3
        for occ in rows:
            start, end = occ.span
            assert occ.sentence[start:end] == g.synsets[sid].lemmas[0]


def test_gloss_span_out_of_bounds_rejected(tmp_path):
    path = tmp_path / "glosses.jsonl"
    path.write_text(json.dumps({"synset_id": "a", "sentence": "tiny", "span": [2, 99]}) + "\n", encoding="utf-8")
    with pytest.raises(SamplerError) as err:
        read_glosses(str(path))
    assert err.value.code == "bad-gloss"


def test_gloss_malformed_json_rejected(tmp_path):
    path = tmp_path / "glosses.jsonl"
    path.write_text("{not json}\n", encoding="utf-8")
    with pytest.raises(SamplerError) as err:
        read_glosses(str(path))
    assert err.value.code == "bad-gloss"


# ---------------------------------------------------------------------------
# triplets


def test_triplet_invariants_audited_by_oracle():
    g = toy_graph()
    splits = make_splits(g, seed=7)
    occs = synthetic_glosses(g, per_synset=2, seed=11)
    sample = sample_triplets(g, splits, occs, seed=11, rounds=2)
    assert len(sample.triplets) >= 60
    parents = parents_table(g)
    for t in sample.triplets:
        assert oracle_reachable(parents, t.a, t.b), t
        assert not oracle_reachable(parents, t.a, t.c), t
        assert not oracle_reachable(parents, t.c, t.a), t
        assert not oracle_reachable(parents, t.b, t.c), t
        assert not oracle_reachable(parents, t.c, t.b), t
        assert splits.of(t.a) == splits.of(t.b) == splits.of(t.c) == t.split


def test_triplet_determinism():
    g = toy_graph()
    splits = make_splits(g, seed=7)
    occs = synthetic_glosses(g, per_synset=2, seed=11)
    s1 = sample_triplets(g, splits, occs, seed=11)
    s2 = sample_triplets(g, splits, occs, seed=11)
    s3 = sample_triplets(g, splits, occs, seed=12)
    assert s1.triplets == s2.triplets
    assert s1.skipped == s2.skipped
    assert s1.triplets != s3.triplets


def test_unglossed_synset_reported_and_skipped():
    g = toy_graph()
    splits = make_splits(g, seed=7)
    occs = [o for o in synthetic_glosses(g, per_synset=1, seed=2) if o.synset_id != "s042"]
    sample = sample_triplets(g, splits, occs, seed=2)
    assert all("s042" not in (t.a, t.b, t.c) for t in sample.triplets)
    assert ("s042", "no-gloss") in sample.skipped


def test_each_synset_used_as_a_or_skipped():
    g = toy_graph()
    splits = make_splits(g, seed=7)
    occs = synthetic_glosses(g, per_synset=1, seed=3)
    sample = sample_triplets(g, splits, occs, seed=3)
    used_as_a = {t.a for t in sample.triplets}
    skipped_ids = {sid for sid, _ in sample.skipped}
    for sid in g.nodes():
        assert sid in used_as_a or sid in skipped_ids, sid


def test_max_triplets_cap():
    g = toy_graph()
    splits = make_splits(g, seed=7)
    occs = synthetic_glosses(g, per_synset=1, seed=3)
    sample = sample_triplets(g, splits, occs, seed=3, rounds=4, max_triplets=17)
    assert len(sample.triplets) == 17


def test_hypernym_role_balance_on_chains():
    # two 15-deep chains under a root; every node glossed, one split, so the
    # balance behavior is exercised without split noise
    g = chain_taxonomy((15, 15))
    splits = all_in_one_split(g)
    occs = synthetic_glosses(g, per_synset=1, seed=4)
    sample = sample_triplets(g, splits, occs, seed=4, rounds=6)
    hyper = {}
    hypo = {}
    for t in sample.triplets:
        hypo[t.a] = hypo.get(t.a, 0) + 1
        hyper[t.b] = hyper.get(t.b, 0) + 1
    # both roles are reachable for interior chain nodes below the first link
    # and above the leaf: depth indices 1..13
    for c in (0, 1):
        for d in range(1, 14):
            sid = f"chain{c}_{d:02d}"
            h_as_hyper = hyper.get(sid, 0)
            h_as_hypo = hypo.get(sid, 0)
            total = h_as_hyper + h_as_hypo
            assert total > 0, sid
            frac = h_as_hyper / total
            assert 0.4 <= frac <= 0.6, (sid, h_as_hyper, h_as_hypo)


def test_chain_dog_animal_entity_rock():
    synsets = [
        Synset("entity", ("entity",), "root"),
        Synset("animal", ("animal",), "creature"),
        Synset("dog", ("dog",), "canine"),
        Synset("rock", ("rock",), "stone"),
    ]
    edges = [("animal", "entity"), ("dog", "animal"), ("rock", "entity")]
    g = TaxonomyGraph(synsets, edges)
    splits = all_in_one_split(g)
    occs = [GlossOccurrence(s.id, f"the {s.id} here", (4, 4 + len(s.id))) for s in synsets]
    sample = sample_triplets(g, splits, occs, seed=1)
    dog_triplets = [t for t in sample.triplets if t.a == "dog"]
    assert dog_triplets == [type(dog_triplets[0])("dog", "animal", "rock", "train")]


# ---------------------------------------------------------------------------
# expansion


def test_expand_labels_and_order():
    from taxoprobe.sampler import Triplet

    t = Triplet("dog", "animal", "rock", "train")
    examples = expand_triplet(t)
    assert [(e.x, e.y, e.label) for e in examples] == [
        ("dog", "animal", 1),
        ("dog", "rock", 0),
        ("animal", "rock", 0),
        ("animal", "dog", 0),
        ("rock", "dog", 0),
        ("rock", "animal", 0),
    ]
    assert sum(e.label for e in examples) == 1
    assert len(examples) == 6
    assert all(e.split == "train" for e in examples)
    assert all(e.x != e.y for e in examples)


def test_expand_labels_agree_with_reachability_oracle():
    g = toy_graph()
    splits = make_splits(g, seed=7)
    occs = synthetic_glosses(g, per_synset=2, seed=11)
    sample = sample_triplets(g, splits, occs, seed=11, rounds=3)
    parents = parents_table(g)
    checked = 0
    for t in sample.triplets:
        for e in expand_triplet(t):
            assert e.label == int(oracle_reachable(parents, e.x, e.y)), e
            checked += 1
    assert checked >= 1000


def test_expand_sentence_picker_wiring():
    from taxoprobe.sampler import Triplet

    t = Triplet("a", "b", "c", "test")
    picks = {"a": 4, "b": 0, "c": 9}
    examples = expand_triplet(t, pick_sentence=lambda sid: picks[sid])
    for e in examples:
        assert e.x_sentence == picks[e.x]
        assert e.y_sentence == picks[e.y]


# ---------------------------------------------------------------------------
# example files


def test_examples_tsv_round_trip(tmp_path):
    g = toy_graph()
    splits = make_splits(g, seed=7)
    occs = synthetic_glosses(g, per_synset=3, seed=11)
    from taxoprobe.sampler import generate_examples

    examples, sample = generate_examples(g, splits, occs, seed=11)
    assert len(examples) == 6 * len(sample.triplets)
    path = str(tmp_path / "examples.tsv")
    write_examples(path, examples)
    assert read_examples(path) == examples
    # sentence indices must stay within each synset's occurrence list
    grouped = group_occurrences(occs)
    for e in examples:
        assert 0 <= e.x_sentence < len(grouped[e.x])
        assert 0 <= e.y_sentence < len(grouped[e.y])


def test_generate_examples_deterministic():
    g = toy_graph()
    splits = make_splits(g, seed=7)
    occs = synthetic_glosses(g, per_synset=3, seed=11)
    from taxoprobe.sampler import generate_examples

    e1, _ = generate_examples(g, splits, occs, seed=11)
    e2, _ = generate_examples(g, splits, occs, seed=11)
    assert e1 == e2
