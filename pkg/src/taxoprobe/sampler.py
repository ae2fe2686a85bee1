"""Leak-free splits and labeled triplet edge examples.

The protocol: pick a glossed synset A, one of its (direct or transitive)
hypernyms B, and a synset C unrelated to both. Each triplet expands into six
labeled pairs, one positive ⟨A,B⟩ against five negatives, so the class ratio
is exactly 1:5. Splits are assigned by synset with no lemma crossing splits,
so evaluation synsets are genuinely unseen words.

File formats:
  glosses.jsonl  one object per line: {"synset_id": str, "sentence": str, "span": [start, end]}
  examples.tsv   x_id <TAB> y_id <TAB> label <TAB> split <TAB> x_sentence_idx <TAB> y_sentence_idx
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .ioutil import atomic_write_text, read_tsv_rows
from .taxonomy import TaxonomyGraph

SPLIT_NAMES = ("train", "valid", "test")
SPLIT_FRACTIONS = (0.70, 0.15, 0.15)


class SamplerError(ValueError):
    """Sampling problem; code is one of "too-small", "unsatisfiable-split", "bad-gloss", "bad-row"."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass(frozen=True)
class GlossOccurrence:
    synset_id: str
    sentence: str
    span: tuple[int, int]


@dataclass(frozen=True)
class Triplet:
    a: str  # hyponym
    b: str  # hypernym of a, direct or transitive
    c: str  # unrelated to both
    split: str


@dataclass(frozen=True)
class LabeledEdgeExample:
    x: str
    y: str
    label: int  # 1 iff y is a direct or transitive hypernym of x
    split: str
    x_sentence: int  # index into x's gloss occurrence list
    y_sentence: int


@dataclass(frozen=True)
class SplitAssignment:
    by_synset: dict
    lemma_index: dict

    def of(self, synset_id: str) -> str:
        return self.by_synset[synset_id]

    def members(self, split: str) -> tuple:
        return tuple(sid for sid, name in self.by_synset.items() if name == split)


@dataclass(frozen=True)
class TripletSample:
    triplets: list
    skipped: list  # (synset_id, reason) pairs, one per synset that could not act as A


# ---------------------------------------------------------------------------
# splits


def _lemma_atoms(graph: TaxonomyGraph) -> list[list[str]]:
    """Groups of synsets welded together by shared lemmas (union-find)."""
    parent: dict[str, str] = {sid: sid for sid in graph.nodes()}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    by_lemma: dict[str, str] = {}
    for sid in graph.nodes():
        for lemma in graph.synsets[sid].lemmas:
            if lemma in by_lemma:
                ra, rb = find(by_lemma[lemma]), find(sid)
                if ra != rb:
                    parent[rb] = ra
            else:
                by_lemma[lemma] = sid
    groups: dict[str, list[str]] = {}
    for sid in graph.nodes():
        groups.setdefault(find(sid), []).append(sid)
    return [sorted(g) for g in sorted(groups.values())]


def _repair(atom_stats, assign, totals, leaf_counts, violation):
    """Hill-climb single-atom moves until the tolerance violation stops improving.

    The greedy packer can land one atom off on small graphs, where a single
    synset is a whole tolerance step; moving the right atom fixes that.
    """
    score = violation(totals, leaf_counts)
    improved = True
    while score > 0.0 and improved:
        improved = False
        for atom, size, n_leaf in sorted(atom_stats, key=lambda t: (t[1], t[0])):
            current = SPLIT_NAMES.index(assign[atom[0]])
            for k in range(3):
                if k == current:
                    continue
                totals[current] -= size
                leaf_counts[current] -= n_leaf
                totals[k] += size
                leaf_counts[k] += n_leaf
                candidate = violation(totals, leaf_counts)
                if candidate < score - 1e-12:
                    score = candidate
                    for sid in atom:
                        assign[sid] = SPLIT_NAMES[k]
                    improved = True
                    current = k
                else:
                    totals[k] -= size
                    leaf_counts[k] -= n_leaf
                    totals[current] += size
                    leaf_counts[current] += n_leaf
            if score <= 0.0:
                return score
    return score


def make_splits(
    graph: TaxonomyGraph,
    seed: int,
    fractions: tuple = SPLIT_FRACTIONS,
    tolerance: float = 0.02,
    leaf_tolerance: float = 0.03,
) -> SplitAssignment:
    """Assign every synset to train/valid/test, deterministically under seed.

    Lemma-sharing synsets move as one unit. A greedy two-dimensional packer
    balances both total counts (target fractions, +-tolerance absolute) and
    the leaf fraction per split (+-leaf_tolerance of the global fraction, with
    half a synset of slack since atoms are indivisible). Several shuffles are
    tried and the best assignment kept, so the outcome is seed-stable.
    """
    ids = graph.nodes()
    n = len(ids)
    if n < 20:
        raise SamplerError("too-small", f"need at least 20 synsets to split, got {n}")
    leaves = set(graph.leaves())
    atoms = _lemma_atoms(graph)
    atom_stats = [(atom, len(atom), sum(1 for sid in atom if sid in leaves)) for atom in atoms]
    total_leaves = len(leaves)
    global_leaf_frac = total_leaves / n
    rng = np.random.default_rng(seed)

    def violation(totals, leaf_counts):
        worst = 0.0
        for k in range(3):
            worst = max(worst, abs(totals[k] / n - fractions[k]) - tolerance)
            if totals[k]:
                slack = leaf_tolerance + 0.5 / totals[k]
                worst = max(worst, abs(leaf_counts[k] / totals[k] - global_leaf_frac) - slack)
            else:
                worst = max(worst, 1.0)
        return worst

    best = None
    for _ in range(32):
        order = list(rng.permutation(len(atom_stats)))
        order.sort(key=lambda i: -atom_stats[i][1])
        totals = [0, 0, 0]
        leaf_counts = [0, 0, 0]
        assign: dict[str, str] = {}
        for i in order:
            atom, size, n_leaf = atom_stats[i]
            fills = []
            for k in range(3):
                count_fill = (totals[k] + size) / (fractions[k] * n)
                leaf_fill = (leaf_counts[k] + n_leaf) / max(fractions[k] * total_leaves, 1e-9)
                fills.append((max(count_fill, leaf_fill), k))
            k = min(fills)[1]
            for sid in atom:
                assign[sid] = SPLIT_NAMES[k]
            totals[k] += size
            leaf_counts[k] += n_leaf
        score = _repair(atom_stats, assign, totals, leaf_counts, violation)
        if best is None or score < best[0]:
            best = (score, assign)
        if score <= 0.0:
            break

    score, assign = best
    if score > 0.0:
        raise SamplerError(
            "unsatisfiable-split",
            f"no assignment within tolerances (best deviation {score:.3f}); "
            "lemma sharing may force overly large groups",
        )
    lemma_index = {}
    for sid in ids:
        for lemma in graph.synsets[sid].lemmas:
            lemma_index[lemma] = assign[sid]
    return SplitAssignment(by_synset={sid: assign[sid] for sid in ids}, lemma_index=lemma_index)


# ---------------------------------------------------------------------------
# glosses


def group_occurrences(occurrences) -> dict[str, list[GlossOccurrence]]:
    """Occurrences grouped by synset id, preserving order; the position in the
    per-synset list is the sentence index used everywhere else."""
    grouped: dict[str, list[GlossOccurrence]] = {}
    for occ in occurrences:
        grouped.setdefault(occ.synset_id, []).append(occ)
    return grouped


def read_glosses(path: str) -> dict[str, list[GlossOccurrence]]:
    occurrences = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                sid = obj["synset_id"]
                sentence = obj["sentence"]
                start, end = obj["span"]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as err:
                raise SamplerError("bad-gloss", f"{path}:{lineno}: {err}") from err
            if not (isinstance(start, int) and isinstance(end, int) and 0 <= start < end <= len(sentence)):
                raise SamplerError("bad-gloss", f"{path}:{lineno}: span {obj['span']} outside sentence bounds")
            occurrences.append(GlossOccurrence(sid, sentence, (start, end)))
    return group_occurrences(occurrences)


def write_glosses(path: str, occurrences) -> None:
    lines = [
        json.dumps({"synset_id": o.synset_id, "sentence": o.sentence, "span": list(o.span)}, ensure_ascii=False)
        for o in occurrences
    ]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


# ---------------------------------------------------------------------------
# triplets


def _related(graph: TaxonomyGraph, u: str, v: str) -> bool:
    return graph.is_ancestor(u, v) or graph.is_ancestor(v, u)


def sample_triplets(
    graph: TaxonomyGraph,
    splits: SplitAssignment,
    glosses,
    seed: int,
    rounds: int = 1,
    max_triplets: int | None = None,
) -> TripletSample:
    """Draw ⟨A,B,C⟩ triplets per split, saturating every glossed synset as A once
    per round where its structure allows.

    B is picked among A's in-split glossed ancestors, favoring the candidate
    that has acted as hypernym least relative to its hyponym appearances, so
    each synset's two roles stay near balance where degree permits; remaining
    ties break uniformly at random. C is uniform over in-split glossed synsets
    unrelated to both A and B. Synsets that cannot form a triplet are reported
    in .skipped with a reason.
    """
    occ = group_occurrences(glosses) if not isinstance(glosses, dict) else glosses
    glossed = {sid for sid, rows in occ.items() if rows and sid in graph.synsets}
    rng = np.random.default_rng(seed)
    members = {name: sorted(splits.members(name)) for name in SPLIT_NAMES}
    hyper_count: dict[str, int] = {}
    hypo_count: dict[str, int] = {}
    triplets: list[Triplet] = []
    skipped: dict[str, str] = {}

    def note_skip(sid, reason):
        if sid not in skipped:
            skipped[sid] = reason

    full = False
    for _ in range(rounds):
        if full:
            break
        for split in SPLIT_NAMES:
            if full:
                break
            order = list(members[split])
            rng.shuffle(order)
            for a in order:
                if max_triplets is not None and len(triplets) >= max_triplets:
                    full = True
                    break
                if a not in glossed:
                    note_skip(a, "no-gloss")
                    continue
                b_candidates = [
                    b for b in sorted(graph.ancestors(a)) if splits.of(b) == split and b in glossed
                ]
                if not b_candidates:
                    note_skip(a, "no-eligible-hypernym")
                    continue
                # Neediest candidate first: largest hyponym-over-hypernym deficit,
                # then the deepest (whose hypernym appearances only deeper synsets
                # can supply), then a seeded coin.
                ranked = sorted(
                    b_candidates,
                    key=lambda b: (
                        -(hypo_count.get(b, 0) - hyper_count.get(b, 0)),
                        -len(graph.ancestors(b)),
                        rng.random(),
                    ),
                )
                chosen = None
                for b in ranked:
                    c_candidates = [
                        c
                        for c in members[split]
                        if c not in (a, b)
                        and c in glossed
                        and not _related(graph, a, c)
                        and not _related(graph, b, c)
                    ]
                    if c_candidates:
                        c = c_candidates[int(rng.integers(0, len(c_candidates)))]
                        chosen = (b, c)
                        break
                if chosen is None:
                    note_skip(a, "no-unrelated-c")
                    continue
                b, c = chosen
                triplets.append(Triplet(a, b, c, split))
                hypo_count[a] = hypo_count.get(a, 0) + 1
                hyper_count[b] = hyper_count.get(b, 0) + 1

    return TripletSample(triplets=triplets, skipped=sorted(skipped.items()))


def expand_triplet(t: Triplet, pick_sentence=None) -> list[LabeledEdgeExample]:
    """The six labeled pairs of a triplet: positive ⟨A,B⟩, then negatives
    ⟨A,C⟩, ⟨B,C⟩, ⟨B,A⟩, ⟨C,A⟩, ⟨C,B⟩. pick_sentence(synset_id) supplies the
    gloss occurrence index per mention (default: first occurrence)."""
    pick = pick_sentence if pick_sentence is not None else (lambda sid: 0)
    pairs = (
        (t.a, t.b, 1),
        (t.a, t.c, 0),
        (t.b, t.c, 0),
        (t.b, t.a, 0),
        (t.c, t.a, 0),
        (t.c, t.b, 0),
    )
    return [LabeledEdgeExample(x, y, label, t.split, pick(x), pick(y)) for x, y, label in pairs]


def generate_examples(
    graph: TaxonomyGraph,
    splits: SplitAssignment,
    glosses,
    seed: int,
    rounds: int = 1,
    max_triplets: int | None = None,
) -> tuple[list[LabeledEdgeExample], TripletSample]:
    """Sample triplets and expand them to labeled examples with sentence picks."""
    occ = group_occurrences(glosses) if not isinstance(glosses, dict) else glosses
    sample = sample_triplets(graph, splits, occ, seed, rounds=rounds, max_triplets=max_triplets)
    sentence_rng = np.random.default_rng([seed, 1])

    def pick(sid: str) -> int:
        count = len(occ[sid])
        return 0 if count == 1 else int(sentence_rng.integers(0, count))

    examples = [ex for t in sample.triplets for ex in expand_triplet(t, pick)]
    return examples, sample


# ---------------------------------------------------------------------------
# example files


def write_examples(path: str, examples) -> None:
    lines = [
        f"{e.x}\t{e.y}\t{e.label}\t{e.split}\t{e.x_sentence}\t{e.y_sentence}" for e in examples
    ]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_examples(path: str) -> list[LabeledEdgeExample]:
    out = []
    try:
        for lineno, fields in read_tsv_rows(path, 6):
            x, y, label, split, xs, ys = fields
            if label not in ("0", "1") or split not in SPLIT_NAMES:
                raise SamplerError("bad-row", f"{path}:{lineno}: bad label or split")
            out.append(LabeledEdgeExample(x, y, int(label), split, int(xs), int(ys)))
    except ValueError as err:
        if isinstance(err, SamplerError):
            raise
        raise SamplerError("bad-row", str(err)) from err
    return out
