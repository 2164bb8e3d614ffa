"""
Phylogeny
=========
Clonal-family trees, alignments, Newick/FASTA I/O, Felsenstein pruning and
tree statistics.

A CladeTree is unrooted. One leaf holds the naive (root) sequence; every
computation that needs a direction roots the tree at a chosen node through
CladeTree.rooted(), by default at the naive leaf. Internal nodes have degree
3; the only tree without internal nodes is the single-sequence family, a
lone edge between the naive leaf and its tip.
"""

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from errors import (DataMismatchError, InvalidArgumentError, InvalidParameterError,
                    NewickParseError)
from substitution_model import BASE_INDEX, NUCLEOTIDES, RateMatrix

logger = logging.getLogger(__name__)

MISSING = 4
ALIGNMENT_ALPHABET = "ACGTN-"
CHAR_CODES = {"A": 0, "C": 1, "G": 2, "T": 3, "N": MISSING, "-": MISSING}

# Row 4 is the all-ones vector used for N and '-'
LEAF_VECTORS = np.vstack([np.eye(4), np.ones(4)])
LEAF_VECTORS.setflags(write=False)


# ─────────────────────────────────────────────
#  Alignment
# ─────────────────────────────────────────────
@dataclass(frozen=True, eq=False)
class Msa:
    """m aligned DNA sequences of length n. region is an optional 1-based inclusive column interval."""

    ids: tuple
    sequences: tuple
    region: Optional[Tuple[int, int]] = None
    codes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        seqs = tuple(str(s).upper() for s in self.sequences)
        if len(ids) != len(seqs):
            raise InvalidArgumentError(f"{len(ids)} identifiers for {len(seqs)} sequences")
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise InvalidArgumentError(f"duplicate sequence identifiers: {dupes}")
        if seqs and len({len(s) for s in seqs}) != 1:
            raise InvalidArgumentError("alignment rows have different lengths")
        for sid, s in zip(ids, seqs):
            bad = set(s) - set(ALIGNMENT_ALPHABET)
            if bad:
                raise InvalidArgumentError(f"sequence {sid} has characters outside {ALIGNMENT_ALPHABET}: {sorted(bad)}")
        n = len(seqs[0]) if seqs else 0
        if self.region is not None:
            start, end = (int(x) for x in self.region)
            if not 1 <= start <= end <= n:
                raise InvalidArgumentError(f"region {self.region} outside columns 1..{n}")
            object.__setattr__(self, "region", (start, end))
        codes = np.array([[CHAR_CODES[c] for c in s] for s in seqs], dtype=np.uint8).reshape(len(seqs), n)
        codes.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "sequences", seqs)
        object.__setattr__(self, "codes", codes)

    @property
    def m(self) -> int:
        return len(self.ids)

    @property
    def n(self) -> int:
        return self.codes.shape[1]

    def index(self, seq_id: str) -> int:
        try:
            return self.ids.index(seq_id)
        except ValueError:
            raise DataMismatchError(f"sequence {seq_id!r} not in alignment") from None

    def sequence(self, seq_id: str) -> str:
        return self.sequences[self.index(seq_id)]

    def as_dict(self) -> Dict[str, str]:
        return dict(zip(self.ids, self.sequences))

    def without(self, seq_id: str) -> "Msa":
        keep = [i for i, s in enumerate(self.ids) if s != seq_id]
        return Msa(tuple(self.ids[i] for i in keep), tuple(self.sequences[i] for i in keep), self.region)

    def with_sequence(self, seq_id: str, sequence: str) -> "Msa":
        if len(sequence) != self.n:
            raise DataMismatchError(f"sequence {seq_id} has length {len(sequence)}, alignment has {self.n}")
        base = self.without(seq_id) if seq_id in self.ids else self
        return Msa(base.ids + (seq_id,), base.sequences + (sequence,), self.region)

    def columns(self, cols) -> "Msa":
        """Sub-alignment of the given column indices (0-based)."""
        cols = np.atleast_1d(np.asarray(cols, dtype=int))
        return Msa(self.ids, tuple("".join(s[c] for c in cols) for s in self.sequences))

    def base_frequencies(self, pseudocount: float = 1.0) -> np.ndarray:
        counts = np.bincount(self.codes.ravel(), minlength=5)[:4].astype(float) + pseudocount
        return counts / counts.sum()


def parse_fasta(text: str) -> List[Tuple[str, str]]:
    records, name, chunks = [], None, []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith(">"):
            if name is not None:
                records.append((name, "".join(chunks)))
            name, chunks = line[1:].split()[0] if line[1:].strip() else "", []
        elif name is None:
            raise InvalidArgumentError("FASTA text does not start with a '>' header")
        else:
            chunks.append(line)
    if name is not None:
        records.append((name, "".join(chunks)))
    return records


def read_fasta(path, region: Optional[Tuple[int, int]] = None) -> Msa:
    with open(path) as fh:
        records = parse_fasta(fh.read())
    if not records:
        raise InvalidArgumentError(f"no sequences in {path}")
    ids, seqs = zip(*records)
    return Msa(ids, seqs, region)


def format_fasta(records: Iterable[Tuple[str, str]]) -> str:
    return "".join(f">{name}\n{seq}\n" for name, seq in records)


def write_fasta(path, records: Iterable[Tuple[str, str]]) -> None:
    with open(path, "w") as fh:
        fh.write(format_fasta(records))


# ─────────────────────────────────────────────
#  Tree
# ─────────────────────────────────────────────
@dataclass(frozen=True, eq=False)
class RootedView:
    """Directed view of a CladeTree. length[u] is the branch above u (0 at the root)."""

    root: int
    parent: np.ndarray
    children: tuple
    length: np.ndarray
    preorder: tuple
    postorder: tuple


@dataclass(frozen=True, eq=False)
class CladeTree:
    """Unrooted tree with labelled leaves, one of which is the naive leaf."""

    labels: tuple                      # per node; None for internal nodes
    edges: tuple                       # ((u, v, length), ...)
    naive_label: str = "naive"
    _adjacency: tuple = field(init=False, repr=False)
    _views: dict = field(init=False, repr=False)

    def __post_init__(self):
        n_nodes = len(self.labels)
        edges = tuple((int(u), int(v), float(t)) for u, v, t in self.edges)
        if n_nodes < 2 or len(edges) != n_nodes - 1:
            raise InvalidArgumentError(f"a tree on {n_nodes} nodes needs {n_nodes - 1} edges, got {len(edges)}")
        adjacency = [[] for _ in range(n_nodes)]
        for idx, (u, v, t) in enumerate(edges):
            if not (0 <= u < n_nodes and 0 <= v < n_nodes) or u == v:
                raise InvalidArgumentError(f"edge {idx} ({u}, {v}) is not between two distinct nodes")
            if not math.isfinite(t) or t < 0:
                raise InvalidArgumentError(f"edge {idx} has invalid branch length {t!r}")
            adjacency[u].append((v, idx))
            adjacency[v].append((u, idx))

        labels = tuple(self.labels)
        leaf_labels = []
        for node, nbrs in enumerate(adjacency):
            if len(nbrs) == 1:
                if not labels[node]:
                    raise InvalidArgumentError(f"leaf node {node} has no label")
                if "," in labels[node]:
                    raise InvalidArgumentError(f"leaf label {labels[node]!r} contains a comma")
                leaf_labels.append(labels[node])
            elif len(nbrs) != 3:
                raise InvalidArgumentError(
                    f"node {node} has degree {len(nbrs)}; only binary unrooted trees are supported")
        if len(set(leaf_labels)) != len(leaf_labels):
            raise InvalidArgumentError("leaf labels are not unique")
        if self.naive_label not in leaf_labels:
            raise DataMismatchError(f"tree has no naive leaf labelled {self.naive_label!r}")

        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "_adjacency", tuple(tuple(a) for a in adjacency))
        object.__setattr__(self, "_views", {})
        view = self.rooted(self.naive)
        if len(view.preorder) != n_nodes:
            raise InvalidArgumentError("tree is not connected")

    # ── Structure ────────────────────────────
    @property
    def n_nodes(self) -> int:
        return len(self.labels)

    @property
    def naive(self) -> int:
        return self.labels.index(self.naive_label)

    @property
    def attachment(self) -> int:
        """Neighbour of the naive leaf (the tip itself for a single-sequence family)."""
        return self._adjacency[self.naive][0][0]

    @property
    def t0(self) -> float:
        return self.edges[self._adjacency[self.naive][0][1]][2]

    def is_leaf(self, node: int) -> bool:
        return len(self._adjacency[node]) == 1

    def neighbors(self, node: int) -> List[int]:
        return [v for v, _ in self._adjacency[node]]

    def incident_edges(self, node: int) -> List[int]:
        return [e for _, e in self._adjacency[node]]

    @property
    def tips(self) -> List[int]:
        """Observed leaves (everything but the naive leaf), in naive-rooted preorder."""
        return [u for u in self.rooted(self.naive).preorder if self.is_leaf(u) and u != self.naive]

    @property
    def tip_labels(self) -> List[str]:
        return [self.labels[u] for u in self.tips]

    @property
    def internal_nodes(self) -> List[int]:
        """Non-leaf nodes in naive-rooted preorder (the Y_int rows)."""
        return [u for u in self.rooted(self.naive).preorder if not self.is_leaf(u)]

    @property
    def branch_lengths(self) -> np.ndarray:
        return np.array([t for _, _, t in self.edges])

    @property
    def total_length(self) -> float:
        return float(self.branch_lengths.sum())

    def node_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise DataMismatchError(f"no node labelled {label!r}") from None

    def internal_edges(self) -> List[int]:
        return [idx for idx, (u, v, _) in enumerate(self.edges)
                if not self.is_leaf(u) and not self.is_leaf(v)]

    def rooted(self, root: Optional[int] = None) -> RootedView:
        root = self.naive if root is None else int(root)
        cached = self._views.get(root)
        if cached is not None:
            return cached
        n = self.n_nodes
        parent = np.full(n, -1, dtype=int)
        length = np.zeros(n)
        children = [[] for _ in range(n)]
        preorder = [root]
        seen = {root}
        stack = [root]
        while stack:
            u = stack.pop()
            for v, e in reversed(self._adjacency[u]):
                if v in seen:
                    continue
                seen.add(v)
                parent[v] = u
                length[v] = self.edges[e][2]
                children[u].append(v)
                stack.append(v)
        # rebuild a true preorder (stack order above is depth-first but children reversed)
        preorder = []
        stack = [root]
        while stack:
            u = stack.pop()
            preorder.append(u)
            stack.extend(reversed(children[u]))
        parent.setflags(write=False)
        length.setflags(write=False)
        view = RootedView(root=root, parent=parent, children=tuple(tuple(c) for c in children),
                          length=length, preorder=tuple(preorder), postorder=tuple(reversed(preorder)))
        self._views[root] = view
        return view

    # ── Derived quantities ───────────────────
    def distances_from_naive(self) -> np.ndarray:
        view = self.rooted(self.naive)
        dist = np.zeros(self.n_nodes)
        for u in view.preorder[1:]:
            dist[u] = dist[view.parent[u]] + view.length[u]
        return dist

    def clade_signatures(self) -> Dict[int, str]:
        """Comma-joined sorted tip labels below each node of the naive-rooted tree (labels never contain commas)."""
        view = self.rooted(self.naive)
        below: Dict[int, List[str]] = {}
        for u in view.postorder:
            if self.is_leaf(u) and u != self.naive:
                below[u] = [self.labels[u]]
            else:
                below[u] = sorted(label for c in view.children[u] for label in below[c])
        return {u: ",".join(labels) for u, labels in below.items()}

    def path_from_naive(self, tip_label: str) -> List[int]:
        node = self.node_of(tip_label)
        view = self.rooted(self.naive)
        path = [node]
        while view.parent[path[-1]] >= 0:
            path.append(int(view.parent[path[-1]]))
        return path[::-1]

    def with_branch_lengths(self, lengths: Sequence[float]) -> "CladeTree":
        lengths = list(lengths)
        if len(lengths) != len(self.edges):
            raise InvalidArgumentError(f"expected {len(self.edges)} branch lengths, got {len(lengths)}")
        edges = tuple((u, v, float(t)) for (u, v, _), t in zip(self.edges, lengths))
        return CladeTree(self.labels, edges, self.naive_label)

    def nni(self, edge_index: int, variant: int) -> "CladeTree":
        """
        Nearest-neighbour interchange across an internal edge (u, v).

        With u's other neighbours (a, b) and v's other neighbours (c, d), both
        sorted by node id, variant 0 swaps b with c and variant 1 swaps b with d.
        Branch lengths travel with their subtrees.
        """
        u, v, _ = self.edges[edge_index]
        if self.is_leaf(u) or self.is_leaf(v):
            raise InvalidArgumentError(f"edge {edge_index} is not internal")
        a_b = sorted((w, e) for w, e in self._adjacency[u] if w != v)
        c_d = sorted((w, e) for w, e in self._adjacency[v] if w != u)
        b, b_edge = a_b[1]
        c, c_edge = c_d[variant]
        edges = list(self.edges)
        edges[b_edge] = (v, b, edges[b_edge][2])
        edges[c_edge] = (u, c, edges[c_edge][2])
        return CladeTree(self.labels, tuple(edges), self.naive_label)

    def check_alignment(self, msa: Msa) -> None:
        """Every observed tip must have a row; every row must be a tip or the naive leaf."""
        ids = set(msa.ids)
        missing = [label for label in self.tip_labels if label not in ids]
        if missing:
            raise DataMismatchError(f"tips without alignment rows: {missing[:5]}")
        leaves = set(self.tip_labels) | {self.naive_label}
        extra = [i for i in msa.ids if i not in leaves]
        if extra:
            raise DataMismatchError(f"alignment rows not in tree: {extra[:5]}")


def random_topology(tip_labels: Sequence[str], naive_label: str, rng: np.random.Generator,
                    branch_length: float = 0.1) -> CladeTree:
    """Uniform random unrooted binary topology on the tips plus the naive leaf (stepwise addition)."""
    labels = [naive_label] + list(tip_labels)
    if len(labels) < 2:
        raise InvalidArgumentError("need at least one observed tip")
    order = list(rng.permutation(len(labels)))
    node_labels: List[Optional[str]] = [labels[order[0]], labels[order[1]]]
    edges = [(0, 1)]
    if len(labels) >= 3:
        node_labels.append(labels[order[2]])
        node_labels.append(None)
        edges = [(3, 0), (3, 1), (3, 2)]
        for leaf_label in (labels[i] for i in order[3:]):
            u, v = edges.pop(int(rng.integers(len(edges))))
            node_labels.append(leaf_label)
            leaf = len(node_labels) - 1
            node_labels.append(None)
            mid = len(node_labels) - 1
            edges.extend([(u, mid), (mid, v), (mid, leaf)])
    return CladeTree(tuple(node_labels), tuple((u, v, branch_length) for u, v in edges), naive_label)


# ─────────────────────────────────────────────
#  Newick
# ─────────────────────────────────────────────
_LABEL_STOP = set("(),:;[]")
_NEEDS_QUOTES = re.compile(r"[\s(),:;\[\]']")


class _Node:
    __slots__ = ("label", "length", "children", "parent", "line", "column")

    def __init__(self, parent, line, column):
        self.label = None
        self.length = None
        self.children = []
        self.parent = parent
        self.line = line
        self.column = column


def _parse_newick_structure(text: str, first_line: int = 1) -> _Node:
    i, line, col = 0, first_line, 1
    root = current = _Node(None, line, col)
    finished = False

    def advance(k=1):
        nonlocal i, line, col
        for _ in range(k):
            if text[i] == "\n":
                line, col = line + 1, 1
            else:
                col += 1
            i += 1

    while i < len(text):
        ch = text[i]
        if finished:
            if not ch.isspace():
                raise NewickParseError("unexpected text after ';'", line, col)
            advance()
        elif ch.isspace():
            advance()
        elif ch == "[":
            end = text.find("]", i)
            if end < 0:
                raise NewickParseError("unterminated comment", line, col)
            advance(end - i + 1)
        elif ch == "(":
            if current.children or current.label is not None or current.length is not None:
                raise NewickParseError("unexpected '('", line, col)
            child = _Node(current, line, col)
            current.children.append(child)
            current = child
            advance()
        elif ch == ",":
            if current.parent is None:
                raise NewickParseError("',' outside parentheses", line, col)
            sibling = _Node(current.parent, line, col)
            current.parent.children.append(sibling)
            current = sibling
            advance()
        elif ch == ")":
            if current.parent is None:
                raise NewickParseError("unbalanced ')'", line, col)
            current = current.parent
            advance()
        elif ch == ":":
            if current.length is not None:
                raise NewickParseError("duplicate branch length", line, col)
            start_line, start_col = line, col
            advance()
            j = i
            while j < len(text) and text[j] not in ",);[" and not text[j].isspace():
                j += 1
            token = text[i:j]
            try:
                value = float(token)
            except ValueError:
                raise NewickParseError(f"invalid branch length {token!r}", start_line, start_col) from None
            if not math.isfinite(value) or value < 0:
                raise NewickParseError(f"branch length must be finite and non-negative, got {token!r}",
                                       start_line, start_col)
            current.length = value
            advance(j - i)
        elif ch == ";":
            if current is not root:
                raise NewickParseError("';' before all parentheses were closed", line, col)
            finished = True
            advance()
        else:
            if current.label is not None:
                raise NewickParseError("unexpected second label", line, col)
            if ch == "'":
                end = text.find("'", i + 1)
                if end < 0:
                    raise NewickParseError("unterminated quoted label", line, col)
                current.label = text[i + 1:end]
                advance(end - i + 1)
            else:
                j = i
                while j < len(text) and text[j] not in _LABEL_STOP and not text[j].isspace():
                    j += 1
                current.label = text[i:j]
                advance(j - i)
    if not finished:
        raise NewickParseError("missing terminating ';'", line, col)
    return root


def parse_newick(text: str, naive_label: str = "naive", first_line: int = 1) -> CladeTree:
    """
    Parse one Newick tree. Every non-root node needs a branch length; nodes of
    degree 2 (a bifurcating Newick root, single-child nodes) are merged into
    one edge; any remaining multifurcation is rejected.
    """
    root = _parse_newick_structure(text, first_line)

    nodes: List[_Node] = []
    stack = [root]
    while stack:
        node = stack.pop()
        nodes.append(node)
        stack.extend(reversed(node.children))
    ids = {id(node): k for k, node in enumerate(nodes)}

    adjacency: Dict[int, Dict[int, float]] = {k: {} for k in range(len(nodes))}
    for node in nodes[1:]:
        if node.length is None:
            raise NewickParseError(f"missing branch length for {node.label or 'internal node'}",
                                   node.line, node.column)
        u, v = ids[id(node)], ids[id(node.parent)]
        adjacency[u][v] = node.length
        adjacency[v][u] = node.length

    labels = {}
    for node in nodes:
        k = ids[id(node)]
        if node.children:
            labels[k] = None
        elif not node.label:
            raise NewickParseError("leaf without a label", node.line, node.column)
        else:
            labels[k] = node.label
    if naive_label not in labels.values():
        raise DataMismatchError(f"Newick tree has no naive leaf labelled {naive_label!r}")

    # merge degree-2 nodes into a single edge
    for k in [k for k in adjacency if len(adjacency[k]) == 2 and labels[k] is None]:
        (a, ta), (b, tb) = adjacency[k].items()
        del adjacency[a][k], adjacency[b][k]
        adjacency[a][b] = adjacency[b][a] = ta + tb
        del adjacency[k]
    for k, nbrs in adjacency.items():
        if len(nbrs) > 3:
            node = nodes[k]
            raise NewickParseError(f"multifurcating node with {len(nbrs)} neighbours", node.line, node.column)
        if len(nbrs) == 0 and len(adjacency) > 1:
            raise NewickParseError("disconnected node", nodes[k].line, nodes[k].column)
        if len(nbrs) == 1 and labels[k] is None:
            raise NewickParseError("root has a single child", nodes[k].line, nodes[k].column)

    remap = {old: new for new, old in enumerate(sorted(adjacency))}
    edges = sorted({(min(remap[a], remap[b]), max(remap[a], remap[b]), t)
                    for a, nbrs in adjacency.items() for b, t in nbrs.items()})
    tree_labels = tuple(labels[old] for old in sorted(adjacency))
    return CladeTree(tree_labels, tuple(edges), naive_label)


def read_newick_file(path, naive_label: str = "naive") -> List[CladeTree]:
    """One tree per non-empty line."""
    trees = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if line.strip():
                trees.append(parse_newick(line, naive_label, first_line=line_no))
    return trees


def _format_label(label: str) -> str:
    return f"'{label}'" if _NEEDS_QUOTES.search(label) else label


def serialize_newick(tree: CladeTree) -> str:
    """Write the tree rooted at the naive attachment node, naive leaf last."""
    if tree.is_leaf(tree.attachment):
        tip = tree.labels[tree.attachment]
        return f"({_format_label(tip)}:{tree.t0!r},{_format_label(tree.naive_label)}:0.0);"
    view = tree.rooted(tree.attachment)
    text: Dict[int, str] = {}
    for u in view.postorder:
        kids = [c for c in view.children[u] if c != tree.naive]
        if not kids:
            text[u] = _format_label(tree.labels[u])
        else:
            inner = [f"{text[c]}:{float(view.length[c])!r}" for c in kids]
            if u == view.root:
                inner.append(f"{_format_label(tree.naive_label)}:{tree.t0!r}")
            text[u] = "(" + ",".join(inner) + ")"
    return text[view.root] + ";"


# ─────────────────────────────────────────────
#  Felsenstein pruning
# ─────────────────────────────────────────────
@dataclass(frozen=True, eq=False)
class PartialLikelihoods:
    """
    Conditional likelihood vectors for every node and column of one pruning pass.

    partials[u, j, i] * exp(log_scale[u, j]) is the probability of the tips
    below u (away from the root) at column j given state i at u.
    """

    view: RootedView
    partials: np.ndarray
    log_scale: np.ndarray
    visits: int

    def log_vector(self, node: int) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.partials[node]) + self.log_scale[node][:, None]


def _tip_vectors(tree: CladeTree, msa: Msa, observe_naive: bool) -> Dict[int, np.ndarray]:
    tree.check_alignment(msa)
    rows = {sid: k for k, sid in enumerate(msa.ids)}
    vectors = {}
    for u in range(tree.n_nodes):
        if not tree.is_leaf(u):
            continue
        label = tree.labels[u]
        if u == tree.naive and (not observe_naive or label not in rows):
            vectors[u] = np.ones((msa.n, 4))
        else:
            vectors[u] = LEAF_VECTORS[msa.codes[rows[label]]]
    return vectors


def prune_partials(tree: CladeTree, msa: Msa, q: RateMatrix, rate: float = 1.0,
                   root: Optional[int] = None, observe_naive: bool = False) -> PartialLikelihoods:
    """
    Post-order pruning over all alignment columns at once, branch lengths scaled by rate.

    Each node's vectors are divided by their per-column maximum and the log of
    that factor accumulates in log_scale, so deep trees do not underflow. The
    naive leaf contributes data only when observe_naive is set and the
    alignment has a naive row.
    """
    if not math.isfinite(rate) or rate <= 0:
        raise InvalidParameterError(f"rate must be positive, got {rate!r}")
    view = tree.rooted(root)
    tips = _tip_vectors(tree, msa, observe_naive)
    p = q.transitions(view.length * rate)
    n_cols = msa.n
    partials = np.empty((tree.n_nodes, n_cols, 4))
    log_scale = np.zeros((tree.n_nodes, n_cols))
    visits = 0
    for u in view.postorder:
        acc = tips[u].copy() if u in tips else np.ones((n_cols, 4))
        scale_u = np.zeros(n_cols)
        for c in view.children[u]:
            acc *= partials[c] @ p[c].T
            scale_u += log_scale[c]
        peak = acc.max(axis=1)
        ok = peak > 0
        acc[ok] /= peak[ok, None]
        scale_u[ok] += np.log(peak[ok])
        scale_u[~ok] = -np.inf
        partials[u] = acc
        log_scale[u] = scale_u
        visits += 1
    return PartialLikelihoods(view=view, partials=partials, log_scale=log_scale, visits=visits)


def naive_conditional_log_likelihoods(tree: CladeTree, msa: Msa, q: RateMatrix,
                                      rate: float = 1.0) -> np.ndarray:
    """
    log p(D^(j) | tree, params, naive state i, rate) for every column j and state i; shape (n, 4).

    Rooted at the naive leaf this is the naive node's own Felsenstein vector,
    which equals the standard column likelihood with the naive leaf fixed to
    state i divided by pi_i.
    """
    pl = prune_partials(tree, msa, q, rate, root=tree.naive, observe_naive=False)
    return pl.log_vector(tree.naive)


def naive_conditional_site_likelihood(tree: CladeTree, msa: Msa, column: int, naive_state,
                                      q: RateMatrix, rate: float = 1.0) -> float:
    state = BASE_INDEX[naive_state] if isinstance(naive_state, str) else int(naive_state)
    if q.pi[state] <= 0:
        raise InvalidParameterError(f"stationary frequency of {NUCLEOTIDES[state]} is zero")
    log_lik = naive_conditional_log_likelihoods(tree, msa.columns([column]), q, rate)
    return float(np.exp(log_lik[0, state]))


def site_log_likelihoods(tree: CladeTree, q: RateMatrix, rates: Sequence[float], msa: Msa,
                         root: Optional[int] = None) -> np.ndarray:
    """
    Standard per-column GTR+Gamma log-likelihood of an alignment that may include
    the naive row (the augmented alignment), equal-weight mixture over rates.
    """
    view_root = tree.naive if root is None else root
    per_rate = []
    for rate in rates:
        pl = prune_partials(tree, msa, q, rate, root=view_root, observe_naive=True)
        with np.errstate(divide="ignore"):
            per_rate.append(np.log(pl.partials[view_root] @ q.pi) + pl.log_scale[view_root])
    stacked = np.vstack(per_rate)
    peak = stacked.max(axis=0)
    safe = np.where(np.isfinite(peak), peak, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.mean(np.exp(stacked - safe), axis=0))


def augmented_log_likelihood(tree: CladeTree, q: RateMatrix, rates: Sequence[float], msa: Msa,
                             root: Optional[int] = None) -> float:
    return float(np.sum(site_log_likelihoods(tree, q, rates, msa, root)))


# ─────────────────────────────────────────────
#  Tree statistics
# ─────────────────────────────────────────────
def tree_imbalance(tree: CladeTree) -> float:
    """Population standard deviation of naive-to-tip path lengths."""
    dist = tree.distances_from_naive()
    return float(np.std(dist[tree.tips]))


def colless_index(tree: CladeTree) -> int:
    """Sum over internal nodes of |left tips - right tips| in the tree rooted at the naive attachment."""
    view = tree.rooted(tree.naive)
    n_tips = np.zeros(tree.n_nodes, dtype=int)
    total = 0
    for u in view.postorder:
        kids = view.children[u]
        if not kids:
            n_tips[u] = 0 if u == tree.naive else 1
            continue
        n_tips[u] = sum(n_tips[c] for c in kids)
        if len(kids) == 2:
            total += abs(n_tips[kids[0]] - n_tips[kids[1]])
    return int(total)
