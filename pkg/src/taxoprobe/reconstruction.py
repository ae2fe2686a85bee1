"""Taxonomy reconstruction from dense pairwise hypernymy scores.

Direction convention, used everywhere in this module and its file formats:
h[u][v] is the probability that u is a direct or transitive parent of v, so
rows are candidate parents and columns candidate children. A score matrix is
turned into edge distances (MCM: 1 - h; TIM: negated ancestor/descendant
intersection mass), edges with h <= threshold are dropped, and the remaining
digraph is solved as a minimum spanning arborescence per candidate root. The
root whose optimal tree carries the largest total score wins.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .embeddings import EmbeddingStore, matrix_for_keys
from .ioutil import atomic_write_bytes, atomic_write_text, read_tsv_rows
from .probe import ProbeModel, forward, model_fingerprint

MAGIC = b"SCM1"
METRICS = ("mcm", "tim")


class ReconstructionError(ValueError):
    """Reconstruction problem; code is one of "bad-node-set", "bad-range",
    "non-finite", "bad-threshold", "bad-metric", "missing-embedding",
    "no-feasible-root", "invalid-solution", "bad-magic", "truncated",
    "bad-row"; details lists offending ids where that helps."""

    def __init__(self, code: str, message: str, details: list | None = None):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.details = details if details is not None else []


@dataclass
class ScoreMatrix:
    """Dense pairwise scores; the diagonal is meaningless and stored as 0."""

    nodes: list
    h: np.ndarray

    def __post_init__(self):
        self.nodes = list(self.nodes)
        n = len(self.nodes)
        self.h = np.array(self.h, dtype=np.float64)
        if n < 2 or len(set(self.nodes)) != n or self.h.shape != (n, n):
            raise ReconstructionError(
                "bad-node-set", f"{n} node ids (unique {len(set(self.nodes))}) vs matrix {self.h.shape}"
            )
        np.fill_diagonal(self.h, 0.0)
        if not np.isfinite(self.h).all():
            raise ReconstructionError("non-finite", "score matrix contains nan or inf")
        if (self.h < 0.0).any() or (self.h > 1.0).any():
            raise ReconstructionError("bad-range", "scores must lie in [0, 1]")


@dataclass
class DistanceMatrix:
    """Edge distances; nan marks pairs not admitted under the threshold."""

    nodes: list
    d: np.ndarray
    metric: str
    threshold: float

    def __post_init__(self):
        self.nodes = list(self.nodes)
        n = len(self.nodes)
        self.d = np.array(self.d, dtype=np.float64)
        if n < 2 or len(set(self.nodes)) != n or self.d.shape != (n, n):
            raise ReconstructionError(
                "bad-node-set", f"{n} node ids (unique {len(set(self.nodes))}) vs matrix {self.d.shape}"
            )
        if self.metric not in METRICS:
            raise ReconstructionError("bad-metric", f"unknown metric {self.metric!r}")
        _check_threshold(self.threshold)
        if np.isinf(self.d).any():
            raise ReconstructionError("non-finite", "distance matrix contains inf")


@dataclass
class ArborescenceSolution:
    """root plus (parent, child) edges; cost sums d, score sums h over edges."""

    root: str
    edges: tuple
    objective_cost: float
    root_score: float
    meta: dict = field(default_factory=dict)


def _check_threshold(threshold: float) -> None:
    if not 0.0 <= threshold < 1.0:
        raise ReconstructionError("bad-threshold", f"threshold {threshold} outside [0, 1)")


# ---------------------------------------------------------------------------
# scoring


def score_all_pairs(
    model: ProbeModel, store: EmbeddingStore, nodes, layer: int | None = None
) -> ScoreMatrix:
    """Probe every ordered pair: h[u][v] = P(u is a parent of v).

    Each node is represented by its lowest-numbered occurrence in the store,
    which keeps scoring deterministic for stores with several occurrences.
    """
    nodes = list(nodes)
    lowest: dict = {}
    for key in store.keys:
        base, sep, idx = key.rpartition("#")
        if not sep or not idx.isdigit():
            continue
        sentence = int(idx)
        if base not in lowest or sentence < lowest[base]:
            lowest[base] = sentence
    missing = sorted(v for v in nodes if v not in lowest)
    if missing:
        raise ReconstructionError(
            "missing-embedding", f"no occurrence for {missing[:5]}", details=missing
        )
    emb = matrix_for_keys(store, [f"{v}#{lowest[v]}" for v in nodes], layer)
    n = len(nodes)
    h = np.zeros((n, n))
    for i in range(n):
        parent = np.repeat(emb[i][None, :], n, axis=0)
        h[i] = forward(model, emb, parent)
    np.fill_diagonal(h, 0.0)
    return ScoreMatrix(nodes=nodes, h=h)


# ---------------------------------------------------------------------------
# distance metrics


def mcm_distance(scores: ScoreMatrix, threshold: float = 0.5) -> DistanceMatrix:
    """Confidence-as-closeness: d = 1 - h for edges with h strictly above threshold."""
    _check_threshold(threshold)
    admitted = scores.h > threshold
    d = np.where(admitted, 1.0 - scores.h, np.nan)
    return DistanceMatrix(nodes=scores.nodes, d=d, metric="mcm", threshold=threshold)


def tim_distance(scores: ScoreMatrix, threshold: float = 0.5) -> DistanceMatrix:
    """Intersection mass between u's and v's neighbourhoods, negated.

    For an admitted pair the distance is
        d(u,v) = -(sum_j h[u,j]*h[v,j] + h[j,u]*h[j,v]) * h[u,v]
    over j outside {u, v}: shared descendants plus shared ancestors, scaled by
    the pair's own score. Raw scores feed the sums; the threshold only gates
    which edges exist. The zeroed diagonal makes the j = u and j = v terms
    vanish from the matrix products, so no masking is needed.
    """
    _check_threshold(threshold)
    h = scores.h
    intersection = h @ h.T + h.T @ h
    d = np.where(scores.h > threshold, -intersection * h, np.nan)
    return DistanceMatrix(nodes=scores.nodes, d=d, metric="tim", threshold=threshold)


# ---------------------------------------------------------------------------
# minimum spanning arborescence


class _Edge:
    __slots__ = ("tail", "head", "d", "nh", "key", "orig", "entered")

    def __init__(self, tail, head, d, nh, key, orig, entered):
        self.tail = tail
        self.head = head
        self.d = d
        self.nh = nh
        self.key = key
        self.orig = orig
        self.entered = entered


def _better(a: _Edge, b: _Edge) -> bool:
    """Orders candidate in-edges: smaller d, then larger h, then stable key."""
    return (a.d, a.nh, a.key) < (b.d, b.nh, b.key)


def _edmonds(nodes: list, edges: list, root, next_id: int):
    """Chu-Liu/Edmonds by recursive cycle contraction; returns original edge ids.

    Costs are (d, -h) pairs added componentwise and compared lexicographically,
    so the result minimizes total d and, among d-ties, maximizes total h.
    """
    best: dict = {}
    for e in edges:
        if e.head == root:
            continue
        cur = best.get(e.head)
        if cur is None or _better(e, cur):
            best[e.head] = e
    if len(best) != len(nodes) - 1:
        return None
    state = dict.fromkeys(nodes, 0)
    state[root] = 2
    cycle = None
    for start in nodes:
        if state[start]:
            continue
        path = []
        v = start
        while state[v] == 0:
            state[v] = 1
            path.append(v)
            v = best[v].tail
        if state[v] == 1:
            cycle = path[path.index(v) :]
        for u in path:
            state[u] = 2
        if cycle:
            break
    if cycle is None:
        return [e.orig for e in best.values()]

    cyc = set(cycle)
    super_id = next_id
    new_nodes = [v for v in nodes if v not in cyc] + [super_id]
    new_edges = []
    for e in edges:
        tail_in, head_in = e.tail in cyc, e.head in cyc
        if tail_in and head_in:
            continue
        if head_in:
            b = best[e.head]
            new_edges.append(_Edge(e.tail, super_id, e.d - b.d, e.nh - b.nh, e.key, e.orig, e.head))
        elif tail_in:
            new_edges.append(_Edge(super_id, e.head, e.d, e.nh, e.key, e.orig, e.entered))
        else:
            new_edges.append(e)
    sub = _edmonds(new_nodes, new_edges, root, next_id + 1)
    if sub is None:
        return None
    chosen = set(sub)
    entered = None
    for e in new_edges:
        if e.head == super_id and e.orig in chosen:
            entered = e.entered
            break
    result = list(sub)
    for v in cycle:
        if v != entered:
            result.append(best[v].orig)
    return result


def _validate_solution(nodes: list, root, edges) -> None:
    in_deg = dict.fromkeys(nodes, 0)
    children: dict = {v: [] for v in nodes}
    for parent, child in edges:
        in_deg[child] += 1
        children[parent].append(child)
    problems = [v for v in nodes if in_deg[v] != (0 if v == root else 1)]
    seen = set()
    stack = [root]
    while stack:
        v = stack.pop()
        if v in seen:
            problems.append(v)
            break
        seen.add(v)
        stack.extend(children[v])
    if len(edges) != len(nodes) - 1 or problems or len(seen) != len(nodes):
        raise ReconstructionError(
            "invalid-solution", "solver produced a non-arborescence", details=sorted(set(problems))
        )


def _solve_root(dist: DistanceMatrix, scores: ScoreMatrix, root) -> ArborescenceSolution | None:
    """Optimal arborescence rooted at root, or None when one does not exist."""
    nodes = dist.nodes
    n = len(nodes)
    r = nodes.index(root)
    admitted = ~np.isnan(dist.d)
    reach = {r}
    stack = [r]
    while stack:
        for j in np.flatnonzero(admitted[stack.pop()]):
            if j not in reach:
                reach.add(int(j))
                stack.append(int(j))
    if len(reach) != n:
        return None
    edges = []
    for i in range(n):
        for j in np.flatnonzero(admitted[i]):
            if j != r:
                k = len(edges)
                edges.append(_Edge(i, int(j), dist.d[i, j], -scores.h[i, j], k, k, int(j)))
    chosen = _edmonds(list(range(n)), edges, r, n)
    if chosen is None:
        return None
    pairs = sorted((nodes[edges[k].tail], nodes[edges[k].head]) for k in chosen)
    _validate_solution(nodes, root, pairs)
    cost = float(sum(dist.d[edges[k].tail, edges[k].head] for k in chosen))
    score = float(sum(scores.h[edges[k].tail, edges[k].head] for k in chosen))
    return ArborescenceSolution(root=root, edges=tuple(pairs), objective_cost=cost, root_score=score)


def solve_msa(dist: DistanceMatrix, scores: ScoreMatrix) -> ArborescenceSolution:
    """Best-scoring root among per-root minimum spanning arborescences.

    Every node with an admitted outgoing edge is tried as root; each root's
    tree minimizes total distance (ties prefer the larger score sum); the
    returned root maximizes the score sum, ties going to the smaller node id.
    """
    if dist.nodes != scores.nodes:
        raise ReconstructionError(
            "bad-node-set",
            f"distance nodes {dist.nodes[:3]}... do not match score nodes {scores.nodes[:3]}...",
        )
    admitted = ~np.isnan(dist.d)
    best = None
    candidates = sorted(dist.nodes[i] for i in np.flatnonzero(admitted.any(axis=1)))
    for root in candidates:
        solution = _solve_root(dist, scores, root)
        if solution is not None and (best is None or solution.root_score > best.root_score):
            best = solution
    if best is None:
        component: list = []
        for i in range(len(dist.nodes)):
            reach = {i}
            stack = [i]
            while stack:
                for j in np.flatnonzero(admitted[stack.pop()]):
                    if j not in reach:
                        reach.add(int(j))
                        stack.append(int(j))
            names = sorted(dist.nodes[j] for j in reach)
            if len(names) > len(component) or (len(names) == len(component) and names < component):
                component = names
        raise ReconstructionError(
            "no-feasible-root",
            f"no root reaches all {len(dist.nodes)} nodes at threshold {dist.threshold}; "
            f"largest reachable component holds {len(component)}",
            details=component,
        )
    return best


def reconstruct(
    model: ProbeModel,
    store: EmbeddingStore,
    nodes,
    metric: str = "tim",
    threshold: float = 0.5,
    layer: int | None = None,
) -> ArborescenceSolution:
    """Score every pair, build distances, solve the arborescence, tag provenance."""
    if metric not in METRICS:
        raise ReconstructionError("bad-metric", f"unknown metric {metric!r}, want one of {METRICS}")
    scores = score_all_pairs(model, store, nodes, layer)
    to_distance = tim_distance if metric == "tim" else mcm_distance
    solution = solve_msa(to_distance(scores, threshold), scores)
    solution.meta = {
        "metric": metric,
        "threshold": threshold,
        "layer": layer,
        "seed": model.meta.get("seed"),
        "model_fingerprint": model_fingerprint(model),
        "n_nodes": len(scores.nodes),
    }
    return solution


# ---------------------------------------------------------------------------
# score matrix file format: MAGIC, u32 n, n length-prefixed ids, f32 matrix
# (row-major, diagonal written as the -1 sentinel)


def write_scores(scores: ScoreMatrix, path: str) -> None:
    n = len(scores.nodes)
    parts = [MAGIC, struct.pack("<I", n)]
    for node in scores.nodes:
        raw = node.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ReconstructionError("bad-node-set", f"node id too long ({len(raw)} bytes)")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    matrix = scores.h.astype("<f4")
    np.fill_diagonal(matrix, -1.0)
    parts.append(np.ascontiguousarray(matrix).tobytes())
    atomic_write_bytes(path, b"".join(parts))


def read_scores(path: str) -> ScoreMatrix:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) >= 4 and blob[:4] != MAGIC:
        raise ReconstructionError("bad-magic", f"expected {MAGIC!r}, found {blob[:4]!r}")
    if len(blob) < 8:
        raise ReconstructionError("truncated", f"file is only {len(blob)} bytes")
    (n,) = struct.unpack_from("<I", blob, 4)
    offset = 8
    nodes = []
    for _ in range(n):
        if offset + 2 > len(blob):
            raise ReconstructionError("truncated", "index block ends mid-record")
        (id_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        if offset + id_len > len(blob):
            raise ReconstructionError("truncated", "node id runs past end of file")
        nodes.append(blob[offset : offset + id_len].decode("utf-8"))
        offset += id_len
    expected = n * n * 4
    if len(blob) - offset != expected:
        raise ReconstructionError(
            "truncated", f"matrix block holds {len(blob) - offset} bytes, expected {expected}"
        )
    matrix = np.frombuffer(blob, dtype="<f4", count=n * n, offset=offset)
    h = matrix.reshape(n, n).astype(np.float64)
    diagonal = np.diag(h).copy()
    np.fill_diagonal(h, 0.0)
    if not np.isfinite(h).all() or not np.isfinite(diagonal).all():
        raise ReconstructionError("non-finite", "matrix contains nan or inf")
    if (diagonal != -1.0).any():
        raise ReconstructionError("bad-range", "diagonal does not hold the -1 sentinel")
    return ScoreMatrix(nodes=nodes, h=h)


# ---------------------------------------------------------------------------
# tree files: TSV of parent<TAB>child rows, plus a DOT rendering for figures


def write_tree(solution: ArborescenceSolution, path: str) -> None:
    atomic_write_text(path, "".join(f"{p}\t{c}\n" for p, c in solution.edges))


def read_tree(path: str) -> tuple:
    try:
        return tuple((fields[0], fields[1]) for _, fields in read_tsv_rows(path, 2))
    except ValueError as exc:
        raise ReconstructionError("bad-row", str(exc)) from None


def render_dot(solution: ArborescenceSolution) -> str:
    def quoted(name: str) -> str:
        return '"' + name.replace("\\", "\\\\").replace('"', '\\"') + '"'

    lines = ["digraph taxonomy {"]
    lines += [f"  {quoted(p)} -> {quoted(c)};" for p, c in solution.edges]
    lines.append("}")
    return "\n".join(lines) + "\n"
