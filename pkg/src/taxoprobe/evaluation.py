"""Tree comparison: canonical forms, edit distance, reconstruction reports.

Taxonomy trees are unordered, but exact unordered edit distance is
intractable, so trees are first canonicalized (children sorted by label,
recursively) and compared with the ordered Zhang-Shasha algorithm under unit
costs. On sibling-distinct labels (always true for synset ids) the ordered
distance on canonical forms equals the unordered distance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

CANONICAL_SCHEME = "sorted-children"


class EvaluationError(ValueError):
    """Tree problem; code is one of "empty-tree", "cycle", "multiple-roots",
    "duplicate-child", "bad-node-set"."""

    def __init__(self, code: str, message: str, details=None):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.details = details


@dataclass(frozen=True)
class LabeledTree:
    """Canonical rooted tree: every node maps to its sorted child tuple."""

    root: str
    children: dict

    def nodes(self) -> list:
        out = []
        stack = [self.root]
        while stack:
            v = stack.pop()
            out.append(v)
            stack.extend(reversed(self.children[v]))
        return out

    def __eq__(self, other):
        return (
            isinstance(other, LabeledTree)
            and self.root == other.root
            and self.children == other.children
        )

    def __hash__(self):
        return hash((self.root, tuple(sorted((k, v) for k, v in self.children.items()))))


@dataclass(frozen=True)
class TedResult:
    distance: int
    insert_cost: int = 1
    delete_cost: int = 1
    relabel_cost: int = 1
    canonicalization: str = CANONICAL_SCHEME


def canonicalize(tree, nodes: Iterable | None = None) -> LabeledTree:
    """LabeledTree with recursively sorted children, from edges or a tree.

    tree is an iterable of (parent, child) pairs, or an existing LabeledTree
    (returned re-sorted, so the function is idempotent). nodes adds isolated
    labels, which lets a single-node tree come from an empty edge list.
    """
    if isinstance(tree, LabeledTree):
        edges = [(p, c) for p, kids in tree.children.items() for c in kids]
        nodes = list(tree.children)
        return canonicalize(edges, nodes=nodes)
    edges = [(str(p), str(c)) for p, c in tree]
    labels = {v for edge in edges for v in edge}
    if nodes is not None:
        labels.update(str(v) for v in nodes)
    if not labels:
        raise EvaluationError("empty-tree", "no nodes and no edges")
    parent: dict = {}
    children: dict = {v: [] for v in labels}
    for p, c in edges:
        if p == c:
            raise EvaluationError("cycle", f"self edge on {c!r}", details=[c])
        if c in parent:
            raise EvaluationError("duplicate-child", f"{c!r} has two parents", details=[c])
        parent[c] = p
        children[p].append(c)
    roots = sorted(v for v in labels if v not in parent)
    if not roots:
        raise EvaluationError("cycle", "every node has a parent", details=sorted(labels))
    if len(roots) > 1:
        raise EvaluationError("multiple-roots", f"roots {roots}", details=roots)
    reached = set(LabeledTree(roots[0], {v: tuple(children[v]) for v in labels}).nodes())
    if len(reached) != len(labels):
        unreached = sorted(labels - reached)
        raise EvaluationError("cycle", f"unreachable from root: {unreached}", details=unreached)
    return LabeledTree(roots[0], {v: tuple(sorted(children[v])) for v in labels})


# ---------------------------------------------------------------------------
# Zhang-Shasha ordered tree edit distance, unit costs


def _postorder(tree: LabeledTree):
    """Postorder labels plus l[i] = postorder index of i's leftmost leaf."""
    labels: list = []
    leftmost: list = []

    def walk(v) -> int:
        kids = tree.children[v]
        child_indices = [walk(c) for c in kids]
        idx = len(labels)
        labels.append(v)
        leftmost.append(leftmost[child_indices[0]] if child_indices else idx)
        return idx

    walk(tree.root)
    return labels, leftmost


def _keyroots(leftmost: list) -> list:
    seen = set()
    out = []
    for i in range(len(leftmost) - 1, -1, -1):
        if leftmost[i] not in seen:
            seen.add(leftmost[i])
            out.append(i)
    return sorted(out)


def tree_edit_distance(a: LabeledTree, b: LabeledTree) -> TedResult:
    """Minimum unit-cost edit script (insert/delete/relabel) between trees."""
    a = canonicalize(a)
    b = canonicalize(b)
    la, ka = _postorder(a)
    lb, kb = _postorder(b)
    m, n = len(la), len(lb)
    treedist = [[0] * n for _ in range(m)]

    for x in _keyroots(ka):
        for y in _keyroots(kb):
            # forest distance over postorder windows ka[x]..x and kb[y]..y
            ioff, joff = ka[x], kb[y]
            rows, cols = x - ioff + 2, y - joff + 2
            fd = [[0] * cols for _ in range(rows)]
            for di in range(1, rows):
                fd[di][0] = fd[di - 1][0] + 1
            for dj in range(1, cols):
                fd[0][dj] = fd[0][dj - 1] + 1
            for di in range(1, rows):
                i = ioff + di - 1
                for dj in range(1, cols):
                    j = joff + dj - 1
                    if ka[i] == ioff and kb[j] == joff:
                        swap = 0 if la[i] == lb[j] else 1
                        fd[di][dj] = min(
                            fd[di - 1][dj] + 1,
                            fd[di][dj - 1] + 1,
                            fd[di - 1][dj - 1] + swap,
                        )
                        treedist[i][j] = fd[di][dj]
                    else:
                        # subtree rooted at i or j is not a prefix of this forest
                        fd[di][dj] = min(
                            fd[di - 1][dj] + 1,
                            fd[di][dj - 1] + 1,
                            fd[ka[i] - ioff][kb[j] - joff] + treedist[i][j],
                        )
    return TedResult(distance=treedist[m - 1][n - 1])


# ---------------------------------------------------------------------------
# reconstruction reports


@dataclass(frozen=True)
class ReconstructionReport:
    n_nodes: int
    pred_root: str
    truth_root: str
    ted: TedResult
    correct_parent_rate: float
    ancestor_precision: float
    ancestor_recall: float

    def as_dict(self) -> dict:
        return {
            "n_nodes": self.n_nodes,
            "pred_root": self.pred_root,
            "truth_root": self.truth_root,
            "ted": self.ted.distance,
            "insert_cost": self.ted.insert_cost,
            "delete_cost": self.ted.delete_cost,
            "relabel_cost": self.ted.relabel_cost,
            "canonicalization": self.ted.canonicalization,
            "correct_parent_rate": self.correct_parent_rate,
            "ancestor_precision": self.ancestor_precision,
            "ancestor_recall": self.ancestor_recall,
        }


def _closure(tree: LabeledTree) -> set:
    pairs = set()

    def walk(v, ancestors):
        for anc in ancestors:
            pairs.add((anc, v))
        for c in tree.children[v]:
            walk(c, ancestors + (v,))

    walk(tree.root, ())
    return pairs


def _contract_truth(graph, keep: list):
    """Parent edges of the induced tree: each kept node attaches to its
    nearest kept ancestor (identity on true subtrees)."""
    kept = set(keep)
    edges = []
    roots = []
    for v in keep:
        frontier = list(graph.parents(v))
        found: set = set()
        seen: set = set()
        while frontier and not found:
            found = {u for u in frontier if u in kept}
            seen.update(frontier)
            frontier = [w for u in frontier for w in graph.parents(u) if w not in seen]
        if len(found) > 1:
            raise EvaluationError(
                "duplicate-child",
                f"{v!r} has several nearest kept ancestors",
                details=sorted(found),
            )
        if found:
            edges.append((found.pop(), v))
        else:
            roots.append(v)
    if len(roots) != 1:
        raise EvaluationError("multiple-roots", f"roots {sorted(roots)}", details=sorted(roots))
    return roots[0], edges


def evaluate_reconstruction(pred, truth, nodes: list | None = None) -> ReconstructionReport:
    """Compare a predicted arborescence against (a subset of) a taxonomy.

    pred carries .root and .edges; truth is a TaxonomyGraph. nodes restricts
    the comparison to that subset, contracting truth edges through dropped
    nodes. The node sets must match exactly.
    """
    graph_nodes = list(truth.nodes())
    if nodes is None:
        keep = graph_nodes
    else:
        keep = [str(v) for v in nodes]
        missing = sorted(set(keep) - set(graph_nodes))
        if missing:
            raise EvaluationError(
                "bad-node-set", f"nodes not in the taxonomy: {missing}", details=missing
            )
    pred_nodes = {pred.root} | {v for edge in pred.edges for v in edge}
    if pred_nodes != set(keep):
        diff = sorted(pred_nodes ^ set(keep))
        raise EvaluationError(
            "bad-node-set", f"predicted and truth node sets differ: {diff}", details=diff
        )
    truth_root, truth_edges = _contract_truth(truth, keep)
    truth_tree = canonicalize(truth_edges, nodes=keep)
    pred_tree = canonicalize(pred.edges, nodes=pred_nodes)

    truth_parent = {c: p for p, c in truth_edges}
    pred_parent = {c: p for p, c in pred.edges}
    non_roots = [v for v in keep if v in truth_parent]
    if non_roots:
        hits = sum(1 for v in non_roots if pred_parent.get(v) == truth_parent[v])
        parent_rate = hits / len(non_roots)
    else:
        parent_rate = 1.0

    pred_pairs = _closure(pred_tree)
    truth_pairs = _closure(truth_tree)
    both = len(pred_pairs & truth_pairs)
    precision = both / len(pred_pairs) if pred_pairs else 1.0
    recall = both / len(truth_pairs) if truth_pairs else 1.0

    return ReconstructionReport(
        n_nodes=len(keep),
        pred_root=pred.root,
        truth_root=truth_root,
        ted=tree_edit_distance(truth_tree, pred_tree),
        correct_parent_rate=parent_rate,
        ancestor_precision=precision,
        ancestor_recall=recall,
    )
