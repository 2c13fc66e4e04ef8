"""Simultaneous parental graph: child sets, common parental sets, moral pattern,
structural rank, and eigen/cycle diagnostics.

The directed graph has an edge j -> i whenever series j is a simultaneous
parent of series i (a non-zero coefficient in row i of the simultaneous
regression matrix). All operations here are pure functions of immutable
inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import StructuralInputError

#: relative cut below which an eigen/singular value counts as zero
_RANK_RTOL = 1e-10


@dataclass(frozen=True)
class GraphStructure:
    """Directed simultaneous parental graph on q series.

    ``sp[j]`` is the ordered tuple of parents of series j; the diagonal is
    structurally zero (no series parents itself).
    """

    q: int
    sp: tuple[tuple[int, ...], ...]
    labels: tuple[str, ...]
    ch: tuple[tuple[int, ...], ...] = field(init=False)

    def __post_init__(self):
        children: list[list[int]] = [[] for _ in range(self.q)]
        for i, parents in enumerate(self.sp):
            for j in parents:
                children[j].append(i)
        object.__setattr__(self, "ch", tuple(tuple(c) for c in children))

    def index_of(self, label: str) -> int:
        return self.labels.index(label)

    def pattern(self) -> np.ndarray:
        """Boolean q x q pattern of allowed non-zeros (entry (i, j): j in sp(i))."""
        pat = np.zeros((self.q, self.q), dtype=bool)
        for i, parents in enumerate(self.sp):
            pat[i, list(parents)] = True
        return pat


def build_graph(q: int, parental_lists, labels=None) -> GraphStructure:
    """Validate per-series parent lists and build the graph.

    Rejects self-parents (the zero-diagonal condition), out-of-range indices,
    and duplicate parents.
    """
    if q < 1:
        raise StructuralInputError(f"series count must be >= 1, got {q}")
    if len(parental_lists) != q:
        raise StructuralInputError(f"expected {q} parental lists, got {len(parental_lists)}")
    sp = []
    for i, parents in enumerate(parental_lists):
        seen = set()
        clean = []
        for j in parents:
            j = int(j)
            if j == i:
                raise StructuralInputError(f"series {i} lists itself as a parent")
            if not 0 <= j < q:
                raise StructuralInputError(f"series {i} has out-of-range parent {j}")
            if j in seen:
                raise StructuralInputError(f"series {i} lists parent {j} twice")
            seen.add(j)
            clean.append(j)
        sp.append(tuple(clean))
    if labels is None:
        labels = tuple(f"y{i}" for i in range(q))
    else:
        labels = tuple(str(x) for x in labels)
        if len(labels) != q or len(set(labels)) != q:
            raise StructuralInputError("labels must be unique and match the series count")
    return GraphStructure(q=q, sp=tuple(sp), labels=labels)


def graph_from_dict(doc: dict) -> GraphStructure:
    """Build a graph from a ``{"labels": [...], "parents": {label: [labels]}}`` document."""
    labels = [str(x) for x in doc["labels"]]
    index = {lab: i for i, lab in enumerate(labels)}
    parents_doc = doc.get("parents", {})
    unknown = set(parents_doc) - set(index)
    if unknown:
        raise StructuralInputError(f"parents listed for unknown series: {sorted(unknown)}")
    lists = [[] for _ in labels]
    for lab, plist in parents_doc.items():
        try:
            lists[index[lab]] = [index[str(p)] for p in plist]
        except KeyError as exc:
            raise StructuralInputError(f"unknown parent {exc} for series {lab}") from exc
    return build_graph(len(labels), lists, labels)


@dataclass(frozen=True)
class ParentalPartition:
    """Partition of the parent series into common parental sets.

    ``sets[h]`` holds the member indices of set h (sorted), ``p_h[h]`` its
    generic rank contribution min(|P_h|, |ch(P_h)|), and ``p`` the total.
    """

    sets: tuple[tuple[int, ...], ...]
    p_h: tuple[int, ...]
    p: int
    child_sets: tuple[tuple[int, ...], ...]


def common_parental_sets(g: GraphStructure) -> ParentalPartition:
    """Group parent series into maximal sets linked by shared children.

    Union-find with path compression over the parents of each child; output
    sets sorted by smallest member for determinism. Series with no children
    belong to no set.
    """
    root = list(range(g.q))

    def find(a: int) -> int:
        while root[a] != a:
            root[a] = root[root[a]]
            a = root[a]
        return a

    def union(a: int, b: int) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            root[max(ra, rb)] = min(ra, rb)

    for parents in g.sp:
        for other in parents[1:]:
            union(parents[0], other)

    groups: dict[int, list[int]] = {}
    for j in range(g.q):
        if g.ch[j]:
            groups.setdefault(find(j), []).append(j)
    sets = sorted((sorted(members) for members in groups.values()), key=lambda s: s[0])
    child_sets = []
    p_h = []
    for members in sets:
        kids = sorted({c for j in members for c in g.ch[j]})
        child_sets.append(tuple(kids))
        p_h.append(min(len(members), len(kids)))
    return ParentalPartition(
        sets=tuple(tuple(s) for s in sets),
        p_h=tuple(p_h),
        p=int(sum(p_h)),
        child_sets=tuple(child_sets),
    )


def moral_pattern(g: GraphStructure) -> np.ndarray:
    """Symmetric boolean pattern of the implied joint precision matrix.

    Entry (i, j) is set when i parents j, j parents i, or i and j share a
    child (the moralizing term). The diagonal is always set. Equals the
    structural non-zero pattern of (I - G)' Lam (I - G) for generic fills.
    """
    pat = np.eye(g.q, dtype=bool)
    for i, parents in enumerate(g.sp):
        for j in parents:
            pat[i, j] = pat[j, i] = True
        for a_pos, a in enumerate(parents):
            for b in parents[a_pos + 1 :]:
                pat[a, b] = pat[b, a] = True
    return pat


def phi_blocks(gamma: np.ndarray, part: ParentalPartition) -> list[np.ndarray]:
    """Per-set blocks Phi_h of Gamma'Gamma (the column-block Gram matrices)."""
    gamma = np.asarray(gamma, dtype=float)
    return [gamma[:, list(members)].T @ gamma[:, list(members)] for members in part.sets]


def structural_rank(part: ParentalPartition, gamma_blocks=None):
    """Rank of the simultaneous coefficient matrix implied by the partition.

    Without numeric blocks: returns (sum of p_h, None). With the Phi_h blocks:
    numerical ranks via singular values (relative cut 1e-10), full_rank flags
    whether every block attains its generic rank p_h.
    """
    if gamma_blocks is None:
        return part.p, None
    if len(gamma_blocks) != len(part.sets):
        raise StructuralInputError(
            f"expected {len(part.sets)} blocks, got {len(gamma_blocks)}"
        )
    total = 0
    full = True
    for ph, block in zip(part.p_h, gamma_blocks):
        block = np.asarray(block, dtype=float)
        if block.size == 0:
            full = False
            continue
        sv = np.linalg.svd(block, compute_uv=False)
        rank = int(np.sum(sv > _RANK_RTOL * sv[0])) if sv[0] > 0 else 0
        total += rank
        if rank != ph:
            full = False
    return total, full


@dataclass(frozen=True)
class EigenDiagnostics:
    """Spectral summary of a numeric coefficient matrix on the graph pattern."""

    acyclic: bool
    gershgorin_ok: bool
    eigenvalues: np.ndarray
    spectral_radius: float
    zero_count: int
    disjoint_cycle_bound: int | None


def _is_acyclic(g: GraphStructure) -> bool:
    # iterative three-color DFS on edges parent -> child
    WHITE, GRAY, BLACK = 0, 1, 2
    color = [WHITE] * g.q
    for start in range(g.q):
        if color[start] != WHITE:
            continue
        stack = [(start, iter(g.ch[start]))]
        color[start] = GRAY
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if color[nxt] == GRAY:
                    return False
                if color[nxt] == WHITE:
                    color[nxt] = GRAY
                    stack.append((nxt, iter(g.ch[nxt])))
                    advanced = True
                    break
            if not advanced:
                color[node] = BLACK
                stack.pop()
    return True


def _max_matching_size(adj: list[list[int]], allowed: int, q: int) -> int:
    # bipartite maximum matching (Kuhn) restricted to the vertex bitmask `allowed`
    match_to = [-1] * q

    def try_augment(u: int, visited: list[bool]) -> bool:
        for v in adj[u]:
            if not (allowed >> v) & 1 or visited[v]:
                continue
            visited[v] = True
            if match_to[v] == -1 or try_augment(match_to[v], visited):
                match_to[v] = u
                return True
        return False

    size = 0
    for u in range(q):
        if (allowed >> u) & 1 and try_augment(u, [False] * q):
            size += 1
    return size


def _disjoint_cycle_bound(g: GraphStructure) -> int:
    # r = largest vertex set coverable by vertex-disjoint directed cycles.
    # Such a cover is exactly a permutation on the set following graph edges
    # (no self-loops exist), i.e. a perfect matching of the set against itself.
    adj = [list(g.ch[j]) for j in range(g.q)]
    best = 0
    for mask in range(1, 1 << g.q):
        size = mask.bit_count()
        if size <= best:
            continue
        if _max_matching_size(adj, mask, g.q) == size:
            best = size
    return best


def eigen_diagnostics(g: GraphStructure, gamma: np.ndarray) -> EigenDiagnostics:
    """Cycle, Gershgorin, and eigenvalue diagnostics for a numeric fill of the graph.

    The non-zero pattern of ``gamma`` must respect the graph. The disjoint
    cycle bound (an exhaustive packing search) is computed only for q <= 12.
    """
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (g.q, g.q):
        raise StructuralInputError(f"gamma must be {g.q}x{g.q}, got {gamma.shape}")
    if np.any(gamma[~g.pattern()] != 0.0):
        raise StructuralInputError("gamma has non-zeros outside the graph pattern")

    acyclic = _is_acyclic(g)
    row_sums = np.abs(gamma).sum(axis=1)
    gershgorin_ok = bool(np.all(row_sums < 1.0))
    eigenvalues = np.linalg.eigvals(gamma)
    spectral_radius = float(np.max(np.abs(eigenvalues))) if g.q else 0.0
    tol = _RANK_RTOL * max(1.0, spectral_radius)
    zero_count = int(np.sum(np.abs(eigenvalues) < tol))
    bound = _disjoint_cycle_bound(g) if g.q <= 12 else None
    return EigenDiagnostics(
        acyclic=acyclic,
        gershgorin_ok=gershgorin_ok,
        eigenvalues=eigenvalues,
        spectral_radius=spectral_radius,
        zero_count=zero_count,
        disjoint_cycle_bound=bound,
    )
