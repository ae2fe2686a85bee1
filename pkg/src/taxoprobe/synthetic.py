"""Synthetic taxonomies, glosses, and frequency tables for tests and pipeline dry runs.

Everything here is seed-deterministic: the same arguments and seed produce
byte-identical tables, which the end-to-end command relies on.
"""

from __future__ import annotations

import numpy as np

from .sampler import GlossOccurrence
from .taxonomy import Synset, TaxonomyGraph

_TEMPLATES = (
    "a {lemma} is one kind of {parent}",
    "the {lemma} often appears where a {parent} would",
    "few texts describe the {lemma} without naming a {parent}",
)


def synthetic_taxonomy(n_synsets: int, seed: int, shared_lemma_rate: float = 0.0) -> TaxonomyGraph:
    """Random single-rooted tree with n_synsets nodes.

    Node i attaches below a uniformly chosen earlier node, giving depth around
    2*ln(n). shared_lemma_rate adds, per synset, that chance of also carrying
    a lemma copied from an earlier synset (polysemy for split tests).
    """
    if n_synsets < 1:
        raise ValueError("need at least one synset")
    rng = np.random.default_rng(seed)
    ids = [f"s{i:03d}" for i in range(n_synsets)]
    edges = []
    parent_of = {}
    for i in range(1, n_synsets):
        parent = ids[int(rng.integers(0, i))]
        parent_of[ids[i]] = parent
        edges.append((ids[i], parent))
    synsets = []
    for i, sid in enumerate(ids):
        lemmas = [f"lemma{i:03d}"]
        if i > 0 and rng.random() < shared_lemma_rate:
            donor = int(rng.integers(0, i))
            lemmas.append(f"lemma{donor:03d}")
        parent = parent_of.get(sid)
        parent_word = f"lemma{ids.index(parent):03d}" if parent else "thing"
        synsets.append(Synset(sid, tuple(lemmas), f"a {lemmas[0]} related to {parent_word}"))
    return TaxonomyGraph(synsets, edges)


def chain_taxonomy(chain_lengths: tuple[int, ...], root_id: str = "root") -> TaxonomyGraph:
    """Chains hanging under a shared root: root -> k0 -> k1 -> ... per chain."""
    synsets = [Synset(root_id, (root_id,), "shared top")]
    edges = []
    for c, length in enumerate(chain_lengths):
        prev = root_id
        for d in range(length):
            sid = f"chain{c}_{d:02d}"
            synsets.append(Synset(sid, (f"word_{sid}",), f"a {sid}"))
            edges.append((sid, prev))
            prev = sid
    return TaxonomyGraph(synsets, edges)


def synthetic_glosses(graph: TaxonomyGraph, per_synset: int, seed: int) -> list[GlossOccurrence]:
    """per_synset annotated sentences for every synset, spans covering the first lemma."""
    rng = np.random.default_rng(seed)
    out = []
    for sid in graph.nodes():
        syn = graph.synsets[sid]
        lemma = syn.lemmas[0]
        parents = graph.parents(sid)
        parent_word = graph.synsets[parents[0]].lemmas[0] if parents else "thing"
        for k in range(per_synset):
            template = _TEMPLATES[int(rng.integers(0, len(_TEMPLATES)))]
            sentence = template.format(lemma=lemma, parent=parent_word) + f" (note {k})"
            start = sentence.index(lemma)
            out.append(GlossOccurrence(sid, sentence, (start, start + len(lemma))))
    return out


def synthetic_frequencies(graph: TaxonomyGraph, seed: int) -> dict[str, int]:
    """Zipf-flavored corpus counts per lemma, keyed by lemma string."""
    rng = np.random.default_rng(seed)
    lemmas = sorted({lemma for syn in graph.synsets.values() for lemma in syn.lemmas})
    order = rng.permutation(len(lemmas))
    counts = {}
    for rank, idx in enumerate(order, start=1):
        counts[lemmas[idx]] = max(1, int(50000 / rank + rng.integers(0, 10)))
    return counts
