"""
Class taxonomy: tree structure, cuts (admissible label sets) and the binary
codewords that encode parameter inheritance.

Node ids are integers assigned breadth-first from the root with siblings
ordered by name. The root is id 0 and carries no parameters, so the codeword
row of node ``n`` is ``n - 1``.
"""
import functools
import itertools
import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from .exceptions import (
    CutBoundExceededError,
    CycleError,
    DuplicateNameError,
    InvalidNodeError,
    MultipleRootsError,
    OrphanReferenceError,
    ProjectionError,
    TaxonomyError,
    UnaryNodeError,
)

logger = logging.getLogger(__name__)

DEFAULT_MAX_CUTS = 100_000
CODEWORD_CACHE_SIZE = 256


@dataclass(frozen=True)
class NodeRecord:
    id: int
    name: str
    parent: Optional[int]
    children: Tuple[int, ...]
    # nearest ancestor first, root excluded
    ancestors: Tuple[int, ...]
    depth: int


class LabelSetKind(str, Enum):
    FULL_LEAVES = "full-leaves"
    CUT_FRONTIER = "cut-frontier"
    NODE_CHILDREN = "node-children"


@dataclass(frozen=True)
class LabelSet:
    """An ordered set of mutually non-ancestral nodes used as softmax classes"""

    members: Tuple[int, ...]
    kind: LabelSetKind
    anchor: Optional[int] = None
    member_set: FrozenSet[int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "member_set", frozenset(self.members))

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, node: int) -> bool:
        return node in self.member_set

    def index(self, node: int) -> int:
        return self.members.index(node)


@dataclass(frozen=True)
class CodewordMatrix:
    data: np.ndarray
    column_order: Tuple[int, ...]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class WeightedCut:
    label_set: LabelSet
    probability: float


class Taxonomy:
    """Immutable rooted tree of classification nodes"""

    ROOT = 0

    def __init__(self, records: Sequence[NodeRecord]):
        self.logger = logging.getLogger(self.__class__.__name__)
        self.nodes: Tuple[NodeRecord, ...] = tuple(records)
        self.root = self.ROOT
        self._by_name: Dict[str, int] = {r.name: r.id for r in self.nodes}
        self.leaf_ids: Tuple[int, ...] = tuple(
            sorted((r.id for r in self.nodes if not r.children), key=lambda i: self.nodes[i].name)
        )
        self.internal_ids: Tuple[int, ...] = tuple(r.id for r in self.nodes if r.children)
        self._leaf_position = {leaf: j for j, leaf in enumerate(self.leaf_ids)}
        self._ancestor_sets = [frozenset(r.ancestors) for r in self.nodes]
        self._leaf_counts = self._count_leaves()
        self._cached_codeword_matrix = functools.lru_cache(maxsize=CODEWORD_CACHE_SIZE)(self._build_codeword_matrix)
        self._decision_paths = {leaf: self._build_decision_path(leaf) for leaf in self.leaf_ids}

    @classmethod
    def from_edges(cls, edges: Iterable[Tuple[str, str]]) -> "Taxonomy":
        """Build and validate a taxonomy from (child, parent) name pairs"""
        graph = nx.DiGraph()
        seen_children = set()
        for child, parent in edges:
            if not child or not parent:
                raise OrphanReferenceError(f"Edge with an empty endpoint: {child!r} -> {parent!r}")
            if child == parent:
                raise CycleError(f"Node {child!r} is its own parent")
            if child in seen_children:
                raise DuplicateNameError(f"Node {child!r} is listed with more than one parent")
            seen_children.add(child)
            graph.add_edge(parent, child)

        if graph.number_of_nodes() == 0:
            raise TaxonomyError("Hierarchy has no edges")

        roots = [n for n in graph.nodes if graph.in_degree(n) == 0]
        if not roots:
            raise CycleError(f"No root found, cycle through {nx.find_cycle(graph)}")
        if len(roots) > 1:
            raise MultipleRootsError(f"Multiple roots: {sorted(roots)}")
        if not nx.is_directed_acyclic_graph(graph):
            raise CycleError(f"Cycle detected: {nx.find_cycle(graph)}")

        unary = sorted(n for n in graph.nodes if graph.out_degree(n) == 1)
        if unary:
            raise UnaryNodeError(f"Internal nodes with a single child: {unary}")

        root_name = roots[0]
        ids: Dict[str, int] = {root_name: 0}
        order = [root_name]
        queue = deque([root_name])
        while queue:
            name = queue.popleft()
            for child in sorted(graph.successors(name)):
                ids[child] = len(order)
                order.append(child)
                queue.append(child)

        records: List[NodeRecord] = []
        for name in order:
            node_id = ids[name]
            parent_names = list(graph.predecessors(name))
            parent = ids[parent_names[0]] if parent_names else None
            ancestors: List[int] = []
            cursor = parent
            while cursor is not None and cursor != 0:
                ancestors.append(cursor)
                cursor = records[cursor].parent
            records.append(NodeRecord(
                id=node_id,
                name=name,
                parent=parent,
                children=tuple(ids[c] for c in sorted(graph.successors(name))),
                ancestors=tuple(ancestors),
                depth=0 if parent is None else len(ancestors) + 1,
            ))

        taxonomy = cls(records)
        logger.info(
            f"Loaded taxonomy rooted at {root_name!r}: {taxonomy.n_nodes} nodes, "
            f"{len(taxonomy.leaf_ids)} leaves, max depth {taxonomy.max_depth}"
        )
        return taxonomy

    def _count_leaves(self) -> List[int]:
        counts = [0] * len(self.nodes)
        for record in reversed(self.nodes):
            counts[record.id] = 1 if not record.children else sum(counts[c] for c in record.children)
        return counts

    # -- lookups -----------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        """|N|: classification nodes, root excluded"""
        return len(self.nodes) - 1

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_ids)

    @property
    def max_depth(self) -> int:
        return max(r.depth for r in self.nodes)

    def record(self, node: int) -> NodeRecord:
        if not isinstance(node, (int, np.integer)) or not 0 <= node < len(self.nodes):
            raise InvalidNodeError(f"Unknown node id: {node!r}")
        return self.nodes[node]

    def node_id(self, name: str) -> int:
        try:
            return self._by_name[name]
        except KeyError:
            raise InvalidNodeError(f"Unknown node name: {name!r}") from None

    def name(self, node: int) -> str:
        return self.record(node).name

    def children(self, node: int) -> Tuple[int, ...]:
        return self.record(node).children

    def parent(self, node: int) -> Optional[int]:
        return self.record(node).parent

    def ancestors(self, node: int) -> Tuple[int, ...]:
        return self.record(node).ancestors

    def depth(self, node: int) -> int:
        return self.record(node).depth

    def is_leaf(self, node: int) -> bool:
        return not self.record(node).children

    def is_root(self, node: int) -> bool:
        return node == self.root

    def leaf_index(self, leaf: int) -> int:
        try:
            return self._leaf_position[leaf]
        except KeyError:
            raise InvalidNodeError(f"Node {leaf!r} is not a leaf") from None

    def leaf_count(self, node: int) -> int:
        """|Leaves(T_n)|; the root covers every leaf"""
        self.record(node)
        return self._leaf_counts[node]

    def path_from_root(self, node: int) -> Tuple[int, ...]:
        record = self.record(node)
        if record.parent is None:
            return (self.root,)
        return (self.root,) + tuple(reversed(record.ancestors)) + (node,)

    def _build_decision_path(self, leaf: int) -> Tuple[Tuple[int, int], ...]:
        path = self.path_from_root(leaf)
        return tuple((node, self.nodes[node].children.index(child)) for node, child in zip(path, path[1:]))

    def decision_path(self, leaf: int) -> Tuple[Tuple[int, int], ...]:
        """(internal node, position of the correct child) for every decision from root to leaf"""
        try:
            return self._decision_paths[leaf]
        except KeyError:
            raise InvalidNodeError(f"Node {leaf!r} is not a leaf") from None

    def is_on_root_path(self, candidate: int, leaf: int) -> bool:
        """True when candidate is the root, the leaf itself or one of its ancestors"""
        return candidate == self.root or candidate == leaf or candidate in self._ancestor_sets[leaf]

    def edges(self) -> List[Tuple[str, str]]:
        return [(r.name, self.nodes[r.parent].name) for r in self.nodes[1:]]

    # -- label sets --------------------------------------------------------

    def full_leaves(self) -> LabelSet:
        return LabelSet(self.leaf_ids, LabelSetKind.FULL_LEAVES)

    def node_children(self, node: int) -> LabelSet:
        if self.is_leaf(node):
            raise InvalidNodeError(f"Leaf {self.name(node)!r} has no children")
        return LabelSet(self.children(node), LabelSetKind.NODE_CHILDREN, anchor=node)

    def frontier(self, members: Iterable[int], validate: bool = True) -> LabelSet:
        """Label set for a cut; the all-leaves frontier is returned in leaf order"""
        members = tuple(members)
        if validate:
            self._check_frontier(members)
        if len(members) == self.n_leaves and set(members) == set(self.leaf_ids):
            return self.full_leaves()
        return LabelSet(tuple(sorted(members)), LabelSetKind.CUT_FRONTIER)

    def validate_label_set(self, label_set: LabelSet) -> None:
        if label_set.kind is LabelSetKind.NODE_CHILDREN:
            if label_set.anchor is None or label_set.members != self.children(label_set.anchor):
                raise InvalidNodeError("node-children label set does not match its anchor's children")
            return
        self._check_frontier(label_set.members)
        if label_set.kind is LabelSetKind.FULL_LEAVES and label_set.members != self.leaf_ids:
            raise InvalidNodeError("full-leaves label set must list the leaves in leaf order")

    def _check_frontier(self, members: Tuple[int, ...]) -> None:
        member_set = set(members)
        if len(member_set) != len(members):
            raise InvalidNodeError(f"Repeated members in label set: {members}")
        for node in members:
            if self.record(node).parent is None:
                raise InvalidNodeError("The root cannot be a label set member")
            if member_set.intersection(self.ancestors(node)):
                raise InvalidNodeError(f"Member {self.name(node)!r} has an ancestor in the label set")
        for leaf in self.leaf_ids:
            on_path = (leaf in member_set) + len(member_set.intersection(self.ancestors(leaf)))
            if on_path != 1:
                raise InvalidNodeError(f"Leaf {self.name(leaf)!r} is covered {on_path} times by the label set")

    # -- codewords ---------------------------------------------------------

    def codeword(self, node: int) -> np.ndarray:
        record = self.record(node)
        if record.parent is None:
            raise InvalidNodeError("The root has no codeword")
        vector = np.zeros(self.n_nodes)
        vector[node - 1] = 1.0
        for ancestor in record.ancestors:
            vector[ancestor - 1] = 1.0
        return vector

    def codeword_matrix(self, label_set: LabelSet) -> CodewordMatrix:
        return self._cached_codeword_matrix(label_set.members)

    def codeword_cache_size(self) -> int:
        return self._cached_codeword_matrix.cache_info().currsize

    def _build_codeword_matrix(self, members: Tuple[int, ...]) -> CodewordMatrix:
        data = np.stack([self.codeword(n) for n in members], axis=1)
        data.setflags(write=False)
        return CodewordMatrix(data=data, column_order=members)

    def flattened(self) -> "Taxonomy":
        """Depth-1 taxonomy with the same root and leaf names"""
        root_name = self.name(self.root)
        return Taxonomy.from_edges((self.name(leaf), root_name) for leaf in self.leaf_ids)

    def is_flat(self) -> bool:
        return self.max_depth == 1


# -- module-level operations -------------------------------------------------

def parse_taxonomy(lines: Iterable[str]) -> Taxonomy:
    edges = []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise TaxonomyError(f"Line {line_no}: expected 'child<TAB>parent', got {line!r}")
        edges.append((fields[0].strip(), fields[1].strip()))
    return Taxonomy.from_edges(edges)


def load_taxonomy(path: str) -> Taxonomy:
    logger.info(f"Loading taxonomy from {path}")
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return parse_taxonomy(handle)
    except UnicodeDecodeError as error:
        raise TaxonomyError(f"Taxonomy file {path} is not valid UTF-8: {error}") from error


def write_taxonomy(t: Taxonomy, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("# child\tparent\n")
        for child, parent in t.edges():
            handle.write(f"{child}\t{parent}\n")


def format_tree(t: Taxonomy) -> str:
    """Indented rendering of the tree for human inspection"""
    lines = []
    stack = [t.root]
    while stack:
        node = stack.pop()
        lines.append("  " * t.depth(node) + t.name(node))
        stack.extend(reversed(t.children(node)))
    return "\n".join(lines) + "\n"


def build_codeword(t: Taxonomy, n: int) -> np.ndarray:
    return t.codeword(n)


def build_codeword_matrix(t: Taxonomy, y: LabelSet) -> CodewordMatrix:
    return t.codeword_matrix(y)


def _check_rate(p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"Bernoulli rate must lie in [0, 1], got {p}")


def sample_cut(t: Taxonomy, p: float, rng: np.random.Generator) -> LabelSet:
    """Draw a random cut: each visited internal node is kept with probability p"""
    _check_rate(p)
    members = []
    queue = deque(t.children(t.root))
    while queue:
        node = queue.popleft()
        if t.is_leaf(node) or rng.random() >= p:
            members.append(node)
        else:
            queue.extend(t.children(node))
    return t.frontier(members, validate=False)


def count_cuts(t: Taxonomy, node: Optional[int] = None) -> int:
    node = t.root if node is None else node
    total = 1
    for child in t.children(node):
        total *= 1 if t.is_leaf(child) else 1 + count_cuts(t, child)
    return total


def _expand(t: Taxonomy, node: int, p: float) -> List[Tuple[Tuple[int, ...], float]]:
    per_child = []
    for child in t.children(node):
        if t.is_leaf(child):
            per_child.append([((child,), 1.0)])
        else:
            options = [((child,), 1.0 - p)]
            options.extend((members, p * prob) for members, prob in _expand(t, child, p))
            per_child.append(options)

    expanded = []
    for combo in itertools.product(*per_child):
        members = tuple(itertools.chain.from_iterable(m for m, _ in combo))
        prob = float(np.prod([q for _, q in combo]))
        expanded.append((members, prob))
    return expanded


def enumerate_all_cuts(t: Taxonomy, p: float = 0.5, max_cuts: int = DEFAULT_MAX_CUTS) -> List[WeightedCut]:
    """All frontiers of the taxonomy with their sampling probability under rate p"""
    _check_rate(p)
    total = count_cuts(t)
    if total > max_cuts:
        raise CutBoundExceededError(f"Taxonomy admits {total} cuts, above the bound of {max_cuts}")
    cuts = [WeightedCut(t.frontier(m, validate=False), prob) for m, prob in _expand(t, t.root, p)]
    logger.debug(f"Enumerated {len(cuts)} cuts")
    return cuts


def project_label(t: Taxonomy, y: int, ls: LabelSet) -> int:
    """The unique member of ls lying on leaf y's root path"""
    if not t.is_leaf(y):
        raise InvalidNodeError(f"{t.name(y)!r} is not a leaf")
    for candidate in (y,) + t.ancestors(y):
        if candidate in ls:
            return candidate
    raise ProjectionError(f"No member of the label set lies on the path of {t.name(y)!r}")


def node_conditional_label(t: Taxonomy, y: int, n: int) -> int:
    """Child of n on the path from n down to leaf y"""
    path = t.path_from_root(y)
    if n not in path[:-1]:
        raise InvalidNodeError(f"{t.name(n)!r} is not on the root path of {t.name(y)!r}")
    return path[path.index(n) + 1]
