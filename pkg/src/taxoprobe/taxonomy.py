"""Hypernym taxonomies: loading, validation, and graph queries.

A taxonomy is a set of synsets (concept nodes carrying one or more lemmas and
a gloss) plus child->parent hypernym edges, forming a DAG. Edges point from
the specific synset to the general one, so ("dog", "canine") reads "canine is
a hypernym of dog". Graphs are validated on construction and never mutated
afterwards, which lets reachability queries memoize safely.

File formats:
  synsets.tsv   synset_id <TAB> lemma1,lemma2,... <TAB> gloss
  edges.tsv     child_id <TAB> parent_id
Both are UTF-8, no header; blank lines are skipped; the gloss column may
contain further tabs.
"""

from __future__ import annotations

import os
from collections import deque
from dataclasses import dataclass

from .ioutil import atomic_write_text, read_tsv_rows


class TaxonomyError(ValueError):
    """Structural problem in taxonomy data.

    code is a short machine-readable tag ("duplicate-id", "dangling-edge",
    "cycle", "multi-root", "bad-row", "unknown-synset", "empty");
    details lists the offending ids where that helps debugging.
    """

    def __init__(self, code: str, message: str, details: list | None = None):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.details = details if details is not None else []


@dataclass(frozen=True)
class Synset:
    id: str
    lemmas: tuple[str, ...]
    gloss: str


class TaxonomyGraph:
    """Validated single-rooted hypernym DAG with cached reachability queries.

    Multi-root input is rejected unless virtual_root names a fresh synset id,
    in which case every original root is attached beneath it and the injected
    id is recorded in self.virtual_root.
    """

    def __init__(self, synsets, edges, virtual_root: str | None = None):
        self.synsets: dict[str, Synset] = {}
        for syn in synsets:
            if syn.id in self.synsets:
                raise TaxonomyError("duplicate-id", f"synset id {syn.id!r} declared twice", [syn.id])
            self.synsets[syn.id] = syn
        if not self.synsets:
            raise TaxonomyError("empty", "taxonomy has no synsets")

        edge_set = []
        seen_edges = set()
        for child, parent in edges:
            if child not in self.synsets or parent not in self.synsets:
                missing = [e for e in (child, parent) if e not in self.synsets]
                raise TaxonomyError("dangling-edge", f"edge ({child!r}, {parent!r}) references unknown synsets", missing)
            if (child, parent) in seen_edges:
                continue
            seen_edges.add((child, parent))
            edge_set.append((child, parent))

        parent_map: dict[str, list[str]] = {sid: [] for sid in self.synsets}
        child_map: dict[str, list[str]] = {sid: [] for sid in self.synsets}
        for child, parent in edge_set:
            parent_map[child].append(parent)
            child_map[parent].append(child)

        self._check_acyclic(parent_map)

        roots = sorted(sid for sid, ps in parent_map.items() if not ps)
        self.virtual_root: str | None = None
        if len(roots) > 1:
            if virtual_root is None:
                raise TaxonomyError("multi-root", f"graph has {len(roots)} roots and no virtual root was requested", roots)
            if virtual_root in self.synsets:
                raise TaxonomyError("duplicate-id", f"virtual root id {virtual_root!r} already exists", [virtual_root])
            self.synsets[virtual_root] = Synset(virtual_root, (virtual_root,), "injected virtual root")
            parent_map[virtual_root] = []
            child_map[virtual_root] = list(roots)
            for r in roots:
                parent_map[r].append(virtual_root)
                edge_set.append((r, virtual_root))
            self.virtual_root = virtual_root
            roots = [virtual_root]

        self.root: str = roots[0]
        self.edges: tuple[tuple[str, str], ...] = tuple(edge_set)
        self._parents = {sid: tuple(sorted(ps)) for sid, ps in parent_map.items()}
        self._children = {sid: tuple(sorted(cs)) for sid, cs in child_map.items()}
        self._anc_cache: dict[str, frozenset] = {}
        self._desc_cache: dict[str, frozenset] = {}
        self._depth_cache: dict[str, float] | None = None

    @staticmethod
    def _check_acyclic(parent_map: dict[str, list[str]]) -> None:
        # Kahn's algorithm on child->parent edges; leftovers contain a cycle.
        out_deg = {sid: len(ps) for sid, ps in parent_map.items()}
        incoming: dict[str, list[str]] = {sid: [] for sid in parent_map}
        for child, ps in parent_map.items():
            for p in ps:
                incoming[p].append(child)
        queue = deque(sid for sid, d in out_deg.items() if d == 0)
        done = 0
        while queue:
            node = queue.popleft()
            done += 1
            for child in incoming[node]:
                out_deg[child] -= 1
                if out_deg[child] == 0:
                    queue.append(child)
        if done == len(parent_map):
            return
        # Walk parent links inside the leftover set until a node repeats.
        stuck = {sid for sid, d in out_deg.items() if d > 0}
        node = min(stuck)
        trail: list[str] = []
        position = {}
        while node not in position:
            position[node] = len(trail)
            trail.append(node)
            node = next(p for p in parent_map[node] if p in stuck)
        cycle = trail[position[node]:]
        raise TaxonomyError("cycle", " -> ".join(cycle + [cycle[0]]), cycle)

    # -- basic structure ----------------------------------------------------

    def nodes(self) -> list[str]:
        """Synset ids in declared (file) order; an injected virtual root comes last."""
        return list(self.synsets)

    def parents(self, v: str) -> tuple[str, ...]:
        return self._parents[v]

    def children(self, v: str) -> tuple[str, ...]:
        return self._children[v]

    def leaves(self) -> tuple[str, ...]:
        return tuple(sid for sid in self.synsets if not self._children[sid])

    def is_leaf(self, v: str) -> bool:
        return not self._children[v]

    def _require(self, v: str) -> None:
        if v not in self.synsets:
            raise TaxonomyError("unknown-synset", f"synset {v!r} is not in the graph", [v])

    # -- reachability ---------------------------------------------------------

    def ancestors(self, v: str) -> frozenset:
        """All synsets reachable from v by following child->parent edges (v excluded)."""
        self._require(v)
        cached = self._anc_cache.get(v)
        if cached is None:
            seen = set()
            queue = deque(self._parents[v])
            while queue:
                node = queue.popleft()
                if node in seen:
                    continue
                seen.add(node)
                queue.extend(self._parents[node])
            cached = self._anc_cache[v] = frozenset(seen)
        return cached

    def descendants(self, v: str) -> frozenset:
        """All synsets that have v as an ancestor."""
        self._require(v)
        cached = self._desc_cache.get(v)
        if cached is None:
            seen = set()
            queue = deque(self._children[v])
            while queue:
                node = queue.popleft()
                if node in seen:
                    continue
                seen.add(node)
                queue.extend(self._children[node])
            cached = self._desc_cache[v] = frozenset(seen)
        return cached

    def is_ancestor(self, u: str, v: str) -> bool:
        """True iff u is a direct or transitive hypernym of v. Never true for u == v."""
        self._require(u)
        return u in self.ancestors(v)

    # -- taxonomy distance ----------------------------------------------------

    def _hops_from(self, start: str, stop_at: str | None = None) -> dict[str, int]:
        """BFS hop counts from start, treating hypernym edges as undirected."""
        dist = {start: 0}
        queue = deque([start])
        while queue:
            node = queue.popleft()
            if node == stop_at:
                break
            for nxt in self._parents[node] + self._children[node]:
                if nxt not in dist:
                    dist[nxt] = dist[node] + 1
                    queue.append(nxt)
        return dist

    def wordnet_distance(self, x: str, y: str) -> int:
        """Hop distance between two synsets along hypernym edges.

        When y is an ancestor of x this is the shortest path between them.
        Otherwise it is hops(x, z) + hops(y, z) for the closest shared
        ancestor-or-self z (smallest id on ties), which keeps the measure
        symmetric for unrelated pairs and zero for identical ones.
        """
        return self._distance_and_meet(x, y)[0]

    def common_ancestor(self, x: str, y: str) -> str | None:
        """The meeting synset z used by wordnet_distance; None when y is an ancestor of x."""
        return self._distance_and_meet(x, y)[1]

    def _distance_and_meet(self, x: str, y: str) -> tuple[int, str | None]:
        self._require(x)
        self._require(y)
        if self.is_ancestor(y, x):
            return self._hops_from(x, stop_at=y)[y], None
        shared = (self.ancestors(x) | {x}) & (self.ancestors(y) | {y})
        if not shared:
            raise TaxonomyError("no-common-ancestor", f"{x!r} and {y!r} share no ancestor", [x, y])
        dx = self._hops_from(x)
        dy = self._hops_from(y)
        best_d, best_z = None, None
        for z in sorted(shared):
            cand = dx[z] + dy[z]
            if best_d is None or cand < best_d:
                best_d, best_z = cand, z
        return best_d, best_z

    # -- depth ----------------------------------------------------------------

    def topological_order(self) -> list[str]:
        """Nodes ordered so every parent precedes its children."""
        remaining = {sid: len(ps) for sid, ps in self._parents.items()}
        queue = deque(sorted(sid for sid, d in remaining.items() if d == 0))
        order = []
        while queue:
            node = queue.popleft()
            order.append(node)
            for child in self._children[node]:
                remaining[child] -= 1
                if remaining[child] == 0:
                    queue.append(child)
        return order

    def depth_scores(self) -> dict[str, float]:
        """Relative depth in percent: 0 at the root, 100 at every leaf.

        Interior nodes are placed by their longest path from the root divided
        by the longest root-to-leaf path running through them.
        """
        if self._depth_cache is None:
            order = self.topological_order()
            from_root = {sid: 0 for sid in self.synsets}
            for node in order:
                for p in self._parents[node]:
                    from_root[node] = max(from_root[node], from_root[p] + 1)
            to_leaf = {sid: 0 for sid in self.synsets}
            for node in reversed(order):
                for c in self._children[node]:
                    to_leaf[node] = max(to_leaf[node], to_leaf[c] + 1)
            scores = {}
            for sid in self.synsets:
                total = from_root[sid] + to_leaf[sid]
                scores[sid] = 0.0 if total == 0 else 100.0 * from_root[sid] / total
            self._depth_cache = scores
        return dict(self._depth_cache)


def load_taxonomy(synsets_path: str, edges_path: str, virtual_root: str | None = None) -> TaxonomyGraph:
    """Read and validate the synset and edge tables; see module docstring for formats."""
    synsets = []
    try:
        for lineno, (sid, lemma_field, gloss) in read_tsv_rows(synsets_path, 3, last_field_free=True):
            lemmas = tuple(lemma for lemma in (part.strip() for part in lemma_field.split(",")) if lemma)
            if not sid.strip() or not lemmas:
                raise TaxonomyError("bad-row", f"{synsets_path}:{lineno}: synset row needs an id and at least one lemma")
            synsets.append(Synset(sid.strip(), lemmas, gloss))
    except ValueError as err:
        if isinstance(err, TaxonomyError):
            raise
        raise TaxonomyError("bad-row", str(err)) from err

    edges = []
    try:
        for _, (child, parent) in read_tsv_rows(edges_path, 2):
            edges.append((child.strip(), parent.strip()))
    except ValueError as err:
        raise TaxonomyError("bad-row", str(err)) from err

    return TaxonomyGraph(synsets, edges, virtual_root=virtual_root)


def write_taxonomy(graph: TaxonomyGraph, out_dir: str) -> tuple[str, str]:
    """Write synsets.tsv and edges.tsv under out_dir; returns the two paths."""
    os.makedirs(out_dir, exist_ok=True)
    synsets_path = os.path.join(out_dir, "synsets.tsv")
    edges_path = os.path.join(out_dir, "edges.tsv")
    syn_lines = [f"{s.id}\t{','.join(s.lemmas)}\t{s.gloss}" for s in graph.synsets.values()]
    edge_lines = [f"{child}\t{parent}" for child, parent in sorted(graph.edges)]
    atomic_write_text(synsets_path, "".join(line + "\n" for line in syn_lines))
    atomic_write_text(edges_path, "".join(line + "\n" for line in edge_lines))
    return synsets_path, edges_path
