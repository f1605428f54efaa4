"""
Complementary components of a fan raster and their adjacency graph
"""

from collections import deque
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, FrozenSet, List, Optional, Set, Tuple

import numpy as np
from scipy import ndimage

from utils.errors import ParameterError
from utils.logger import setup_logger

logger = setup_logger("topology")

FOUR_CONNECTIVITY = ndimage.generate_binary_structure(2, 1)
NEIGHBOR_OFFSETS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]


@dataclass
class ComponentMap:
    """labels: 0 on fan pixels, 1..n_components on the complement in scan order"""

    labels: np.ndarray
    n_components: int
    frame_components: FrozenSet[int] = frozenset()

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.n_components + 1)[1:]


@dataclass
class AdjacencyGraph:
    n: int
    edges: Set[Tuple[int, int]] = field(default_factory=set)
    witnesses: Dict[Tuple[int, int], int] = field(default_factory=dict)

    def neighbors(self) -> Dict[int, List[int]]:
        adj: Dict[int, List[int]] = {v: [] for v in range(1, self.n + 1)}
        for u, v in sorted(self.edges):
            adj[u].append(v)
            adj[v].append(u)
        return adj


@dataclass
class ChainResult:
    chain: List[int]
    status: str

    @property
    def found(self) -> bool:
        return self.status in ("ok", "same")


class DisjointSet:
    """Union-find with path compression and union by rank"""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, x: int, y: int) -> None:
        x_root, y_root = self.find(x), self.find(y)
        if x_root == y_root:
            return
        if self.rank[x_root] < self.rank[y_root]:
            self.parent[x_root] = y_root
        elif self.rank[x_root] > self.rank[y_root]:
            self.parent[y_root] = x_root
        else:
            self.parent[y_root] = x_root
            self.rank[x_root] += 1

    def n_classes(self) -> int:
        return len({self.find(x) for x in range(len(self.parent))})


def extract_components(raster: np.ndarray) -> ComponentMap:
    """
    Label the 4-connected components of the complement of a raster

    Args:
        raster: Bool grid, True on fan pixels

    Returns:
        ComponentMap with labels in scan order
    """
    raster = np.asarray(raster, dtype=bool)
    labels, n = ndimage.label(~raster, structure=FOUR_CONNECTIVITY)
    frame = np.concatenate([labels[0, :], labels[-1, :], labels[:, 0], labels[:, -1]])
    frame_components = frozenset(int(v) for v in np.unique(frame) if v > 0)
    logger.debug(f"{n} complementary components, {len(frame_components)} touching the frame")
    return ComponentMap(labels=labels.astype(np.int64), n_components=int(n), frame_components=frame_components)


def _neighbor_labels(labels: np.ndarray) -> List[np.ndarray]:
    padded = np.pad(labels, 1, mode="constant", constant_values=0)
    ny, nx = labels.shape
    return [padded[1 + dy : 1 + dy + ny, 1 + dx : 1 + dx + nx] for dy, dx in NEIGHBOR_OFFSETS]


def adjacency_graph(
    cm: ComponentMap, min_shared: int = 1, witness_mask: Optional[np.ndarray] = None
) -> AdjacencyGraph:
    """
    Components U, V are adjacent when a fan pixel is 8-adjacent to both

    Args:
        cm (ComponentMap): Labelled complement
        min_shared (int): Minimum number of distinct witnessing fan pixels per edge
        witness_mask: Restricts which label-0 pixels may witness an edge

    Returns:
        AdjacencyGraph on vertices 1..n
    """
    if min_shared < 1:
        raise ParameterError(f"min_shared must be >= 1, got {min_shared}")
    labels = cm.labels
    fan = labels == 0
    if witness_mask is not None:
        fan &= np.asarray(witness_mask, dtype=bool)
    neighbors = _neighbor_labels(labels)
    flat_index = np.arange(labels.size).reshape(labels.shape)

    rows = []
    for n1, n2 in combinations(neighbors, 2):
        mask = fan & (n1 > 0) & (n2 > 0) & (n1 != n2)
        if not mask.any():
            continue
        u, v = n1[mask], n2[mask]
        rows.append(np.stack([flat_index[mask], np.minimum(u, v), np.maximum(u, v)], axis=1))

    graph = AdjacencyGraph(n=cm.n_components)
    if not rows:
        return graph
    triples = np.unique(np.concatenate(rows), axis=0)
    pairs, counts = np.unique(triples[:, 1:], axis=0, return_counts=True)
    for (u, v), c in zip(pairs, counts):
        if c >= min_shared:
            edge = (int(u), int(v))
            graph.edges.add(edge)
            graph.witnesses[edge] = int(c)
    return graph


def is_connected(g: AdjacencyGraph) -> Tuple[bool, int]:
    """Union-find over the edges; returns (connected, number of graph components)"""
    if g.n == 0:
        return True, 0
    ds = DisjointSet(g.n)
    for u, v in g.edges:
        ds.union(u - 1, v - 1)
    classes = ds.n_classes()
    return classes == 1, classes


def chain_between(g: AdjacencyGraph, u: int, v: int) -> ChainResult:
    """Shortest chain of pairwise adjacent components from u to v (BFS)"""
    for label in (u, v):
        if not 1 <= label <= g.n:
            raise ParameterError(f"component label {label} outside 1..{g.n}")
    if u == v:
        return ChainResult(chain=[u], status="same")
    adj = g.neighbors()
    parent = {u: u}
    queue = deque([u])
    while queue:
        x = queue.popleft()
        for y in adj[x]:
            if y in parent:
                continue
            parent[y] = x
            if y == v:
                chain = [v]
                while chain[-1] != u:
                    chain.append(parent[chain[-1]])
                return ChainResult(chain=chain[::-1], status="ok")
            queue.append(y)
    return ChainResult(chain=[], status="disconnected")
