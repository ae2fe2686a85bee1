"""Per-concept F1, semantic-factor curves, and per-category aggregation.

Concept-level factors (depth, subclasses, frequency, senses, siblings,
synonyms) are computed once per taxonomy; probe predictions are folded into
per-synset F1 scores and then binned along a factor with bootstrap confidence
intervals. Pair distance is a per-example factor and gets its own curve
builder. Bins carrying fewer than 100 samples are reported but excluded from
the curve proper.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ioutil import read_tsv_rows

MIN_BIN_COUNT = 100
BOOTSTRAP_RESAMPLES = 1000
CI_LEVEL = 0.9

FACTOR_NAMES = (
    "depth_percent",
    "n_subclasses",
    "frequency",
    "n_senses",
    "sense_rank",
    "n_siblings",
    "n_synonyms",
)


class AnalysisError(ValueError):
    """Analysis problem; code is one of "bad-predictions", "bad-frequency",
    "unknown-factor", "bad-bins", "empty-category", "unknown-category"."""

    def __init__(self, code: str, message: str, details=None):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.details = details


@dataclass(frozen=True)
class ConceptFactors:
    synset: str
    depth_percent: float
    n_subclasses: int
    frequency: int
    n_senses: int
    sense_rank: int
    n_siblings: int
    n_synonyms: int
    graph_distance_of_pair: int | None = None  # per-example factor, unset on concept rows


@dataclass(frozen=True)
class BinStats:
    lo: float
    hi: float
    count: int
    mean: float | None
    ci_lo: float | None
    ci_hi: float | None

    def as_dict(self) -> dict:
        return {
            "lo": self.lo,
            "hi": self.hi,
            "count": self.count,
            "mean": self.mean,
            "ci_lo": self.ci_lo,
            "ci_hi": self.ci_hi,
        }


@dataclass(frozen=True)
class BinnedCurve:
    factor: str
    bins: tuple
    excluded: tuple
    total: int
    out_of_range: int = 0
    min_count: int = MIN_BIN_COUNT

    def as_dict(self) -> dict:
        return {
            "factor": self.factor,
            "bins": [s.as_dict() for s in self.bins],
            "excluded": [s.as_dict() for s in self.excluded],
            "total": self.total,
            "out_of_range": self.out_of_range,
            "min_bin_count": self.min_count,
            "ci_level": CI_LEVEL,
        }


@dataclass(frozen=True)
class CategoryStat:
    root: str
    mean: float
    std: float
    count: int

    def as_dict(self) -> dict:
        return {"root": self.root, "mean": self.mean, "std": self.std, "count": self.count}


# ---------------------------------------------------------------------------
# inputs


def read_frequencies(path: str) -> dict:
    """lemma -> corpus count from a two-column TSV."""
    out = {}
    for lineno, (lemma, raw) in read_tsv_rows(path, 2):
        try:
            count = int(raw)
        except ValueError:
            raise AnalysisError("bad-frequency", f"{path}:{lineno}: count {raw!r} is not an integer")
        if count < 0:
            raise AnalysisError("bad-frequency", f"{path}:{lineno}: negative count {count}")
        out[lemma] = count
    return out


def compute_factors(graph, frequencies: dict | None = None) -> dict:
    """ConceptFactors per synset id.

    Senses of a concept are the synsets sharing its first lemma, ranked in
    the synset table's declared order; frequency sums the external counts
    over all of the concept's lemmas (absent lemmas count zero).
    """
    freqs = frequencies or {}
    depth = graph.depth_scores()
    ids = graph.nodes()
    by_lemma: dict = {}
    for sid in ids:
        for lemma in graph.synsets[sid].lemmas:
            by_lemma.setdefault(lemma, []).append(sid)
    out = {}
    for sid in ids:
        syn = graph.synsets[sid]
        senses = by_lemma[syn.lemmas[0]]
        siblings = set()
        for parent in graph.parents(sid):
            siblings.update(graph.children(parent))
        siblings.discard(sid)
        out[sid] = ConceptFactors(
            synset=sid,
            depth_percent=float(depth[sid]),
            n_subclasses=len(graph.descendants(sid)),
            frequency=int(sum(freqs.get(lemma, 0) for lemma in syn.lemmas)),
            n_senses=len(senses),
            sense_rank=senses.index(sid) + 1,
            n_siblings=len(siblings),
            n_synonyms=len(syn.lemmas),
        )
    return out


# ---------------------------------------------------------------------------
# per-concept F1


def concept_f1(predictions, examples, threshold: float = 0.5) -> dict:
    """Per-synset F1 over every example the synset participates in.

    predictions are probabilities (or 0/1 values) aligned with examples.
    A synset whose examples are all classified correctly scores 1.0 even
    without positives; synsets with no examples are omitted.
    """
    preds = np.asarray(list(predictions), dtype=np.float64)
    examples = list(examples)
    if preds.shape != (len(examples),):
        raise AnalysisError(
            "bad-predictions",
            f"{preds.shape[0] if preds.ndim else 0} predictions for {len(examples)} examples",
        )
    counts: dict = {}
    for p, e in zip(preds >= threshold, examples):
        for sid in {e.x, e.y}:
            tp, fp, fn = counts.get(sid, (0, 0, 0))
            if p and e.label == 1:
                tp += 1
            elif p and e.label == 0:
                fp += 1
            elif not p and e.label == 1:
                fn += 1
            counts[sid] = (tp, fp, fn)
    out = {}
    for sid, (tp, fp, fn) in counts.items():
        out[sid] = 1.0 if fp == 0 and fn == 0 else 2.0 * tp / (2.0 * tp + fp + fn)
    return out


# ---------------------------------------------------------------------------
# binning


def bootstrap_ci(values, seed: int, resamples: int = BOOTSTRAP_RESAMPLES, level: float = CI_LEVEL):
    """Percentile bootstrap interval for the mean, widened to include it."""
    values = np.asarray(values, dtype=np.float64)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, values.size, size=(resamples, values.size))
    means = values[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha])
    mean = float(values.mean())
    return min(float(lo), mean), max(float(hi), mean)


def _bin_edges(values: np.ndarray, bins) -> np.ndarray:
    if isinstance(bins, int):
        if bins < 1:
            raise AnalysisError("bad-bins", f"need at least one bin, got {bins}")
        edges = np.unique(np.quantile(values, np.linspace(0.0, 1.0, bins + 1)))
        if edges.size == 1:
            edges = np.array([edges[0], edges[0]])
        return edges
    edges = np.asarray(list(bins), dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or not np.all(np.diff(edges) > 0):
        raise AnalysisError("bad-bins", "explicit edges must be increasing and have length >= 2")
    return edges


def bin_by_factor(f1_map: dict, factors: dict, factor_name: str, bins=10,
                  min_count: int = MIN_BIN_COUNT, seed: int = 0) -> BinnedCurve:
    """Mean F1 with bootstrap CI per factor bin.

    bins is an equal-population bin count (default deciles) or explicit
    increasing edges; the final bin includes its right edge. Bins smaller
    than min_count move to .excluded with no statistics.
    """
    if factor_name not in FACTOR_NAMES:
        raise AnalysisError(
            "unknown-factor", f"{factor_name!r} is not one of {FACTOR_NAMES}", details=factor_name
        )
    sids = sorted(sid for sid in f1_map if sid in factors)
    values = np.array([getattr(factors[sid], factor_name) for sid in sids], dtype=np.float64)
    f1s = np.array([f1_map[sid] for sid in sids], dtype=np.float64)
    if values.size == 0:
        raise AnalysisError("bad-bins", "no concepts carry both an F1 and this factor")
    edges = _bin_edges(values, bins)
    in_range = (values >= edges[0]) & (values <= edges[-1])
    assignment = np.searchsorted(edges[1:-1], values[in_range], side="right")
    kept_f1 = f1s[in_range]

    included, excluded = [], []
    for b in range(edges.size - 1):
        mask = assignment == b
        count = int(mask.sum())
        lo, hi = float(edges[b]), float(edges[b + 1])
        if count >= min_count:
            member_f1 = kept_f1[mask]
            ci_lo, ci_hi = bootstrap_ci(member_f1, seed=[seed, b])
            included.append(BinStats(lo, hi, count, float(member_f1.mean()), ci_lo, ci_hi))
        else:
            excluded.append(BinStats(lo, hi, count, None, None, None))
    return BinnedCurve(
        factor=factor_name,
        bins=tuple(included),
        excluded=tuple(excluded),
        total=int(in_range.sum()),
        out_of_range=int((~in_range).sum()),
        min_count=min_count,
    )


def _binary_f1_with_ci(pred: np.ndarray, labels: np.ndarray, seed) -> tuple:
    tp = int((pred & labels).sum())
    fp = int((pred & ~labels).sum())
    fn = int((~pred & labels).sum())
    f1 = 1.0 if fp == 0 and fn == 0 else 2.0 * tp / (2.0 * tp + fp + fn)
    rng = np.random.default_rng(seed)
    n = pred.size
    idx = rng.integers(0, n, size=(BOOTSTRAP_RESAMPLES, n))
    pm, lm = pred[idx], labels[idx]
    tps = (pm & lm).sum(axis=1).astype(np.float64)
    fps = (pm & ~lm).sum(axis=1).astype(np.float64)
    fns = (~pm & lm).sum(axis=1).astype(np.float64)
    clean = (fps == 0) & (fns == 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        f1s = np.where(clean, 1.0, 2.0 * tps / (2.0 * tps + fps + fns))
    alpha = (1.0 - CI_LEVEL) / 2.0
    lo, hi = np.quantile(f1s, [alpha, 1.0 - alpha])
    return f1, min(float(lo), f1), max(float(hi), f1)


def pair_distance_curve(predictions, examples, graph, min_count: int = MIN_BIN_COUNT,
                        threshold: float = 0.5, seed: int = 0) -> BinnedCurve:
    """F1 per taxonomy-hop distance between the two concepts of each example.

    The factor is per-example, so each bin's F1 comes from that bin's
    confusion counts (one bin per distinct hop count), with a bootstrap CI
    over examples.
    """
    preds = np.asarray(list(predictions), dtype=np.float64)
    examples = list(examples)
    if preds.shape != (len(examples),):
        raise AnalysisError(
            "bad-predictions",
            f"{preds.shape[0] if preds.ndim else 0} predictions for {len(examples)} examples",
        )
    pred = preds >= threshold
    labels = np.array([e.label == 1 for e in examples])
    distances = np.array([graph.wordnet_distance(e.x, e.y) for e in examples])

    included, excluded = [], []
    for d in sorted(set(distances.tolist())):
        mask = distances == d
        count = int(mask.sum())
        if count >= min_count:
            f1, ci_lo, ci_hi = _binary_f1_with_ci(pred[mask], labels[mask], seed=[seed, int(d)])
            included.append(BinStats(int(d), int(d), count, f1, ci_lo, ci_hi))
        else:
            excluded.append(BinStats(int(d), int(d), count, None, None, None))
    return BinnedCurve(
        factor="graph_distance_of_pair",
        bins=tuple(included),
        excluded=tuple(excluded),
        total=len(examples),
        min_count=min_count,
    )


# ---------------------------------------------------------------------------
# categories


def category_f1(f1_map: dict, graph, category_roots) -> list:
    """Mean and std of per-concept F1 over each category root's subtree.

    A category covers the root and every descendant; members without an F1
    (no examples) are skipped, and a category with no scored members errors.
    """
    out = []
    for root in category_roots:
        root = str(root)
        if root not in graph.synsets:
            raise AnalysisError("unknown-category", f"no synset {root!r}", details=[root])
        members = sorted({root} | set(graph.descendants(root)))
        scores = np.array([f1_map[sid] for sid in members if sid in f1_map], dtype=np.float64)
        if scores.size == 0:
            raise AnalysisError("empty-category", f"no scored concepts under {root!r}", details=[root])
        out.append(
            CategoryStat(
                root=root,
                mean=float(scores.mean()),
                std=float(scores.std()),
                count=int(scores.size),
            )
        )
    return out
