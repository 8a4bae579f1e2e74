"""Tractable logical circuits: AND/OR/leaf DAGs in a topologically-ordered
node arena, with structural-property checks, exact model counting, model
enumeration, and a bit-exact text format.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .formula import Assignment


class CircuitError(Exception):
    pass


class NnfFormatError(CircuitError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


# ---------------------------------------------------------------------------
# Nodes and the arena
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LeafNode:
    var: int
    positive: bool


@dataclass(frozen=True)
class AndNode:
    children: tuple[int, ...]


@dataclass(frozen=True)
class OrNode:
    children: tuple[int, ...]
    decision: int | None = None  # variable the children branch on, if known


@dataclass(frozen=True)
class TrueNode:
    pass


@dataclass(frozen=True)
class FalseNode:
    pass


CircuitNode = LeafNode | AndNode | OrNode | TrueNode | FalseNode


class Circuit:
    """Immutable arena of nodes; children always precede parents."""

    def __init__(self, nodes: Sequence[CircuitNode], root: int, var_count: int):
        self.nodes: tuple[CircuitNode, ...] = tuple(nodes)
        self.root = root
        self.var_count = var_count
        if not (0 <= root < len(self.nodes)):
            raise CircuitError("root id out of range")
        for i, n in enumerate(self.nodes):
            if isinstance(n, (AndNode, OrNode)):
                if not n.children:
                    raise CircuitError(f"node {i}: gate with no children")
                for c in n.children:
                    if not (0 <= c < i):
                        raise CircuitError(
                            f"node {i}: child {c} does not precede it")
            elif isinstance(n, LeafNode):
                if not (0 <= n.var < var_count):
                    raise CircuitError(f"node {i}: variable out of range")
        self._scopes: list[frozenset[int]] | None = None
        self._quick_props: "PropertyReport | None" = None

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def edge_count(self) -> int:
        return sum(len(n.children) for n in self.nodes
                   if isinstance(n, (AndNode, OrNode)))

    def scopes(self) -> list[frozenset[int]]:
        """Per-node variable scope, computed bottom-up and cached."""
        if self._scopes is None:
            out: list[frozenset[int]] = []
            for n in self.nodes:
                if isinstance(n, LeafNode):
                    out.append(frozenset((n.var,)))
                elif isinstance(n, (AndNode, OrNode)):
                    s: frozenset[int] = frozenset()
                    for c in n.children:
                        s = s | out[c]
                    out.append(s)
                else:
                    out.append(frozenset())
            self._scopes = out
        return self._scopes

    def structurally_equal(self, other: "Circuit") -> bool:
        return (self.var_count == other.var_count and self.root == other.root
                and self.nodes == other.nodes)

    def evaluate(self, values: Sequence[bool]) -> bool:
        """Boolean semantics of the represented formula under ``values``."""
        if isinstance(values, Assignment):
            values = values.values
        if len(values) < self.var_count:
            raise CircuitError("assignment does not cover circuit variables")
        vals: list[bool] = []
        for n in self.nodes:
            if isinstance(n, LeafNode):
                vals.append(values[n.var] if n.positive else not values[n.var])
            elif isinstance(n, AndNode):
                vals.append(all(vals[c] for c in n.children))
            elif isinstance(n, OrNode):
                vals.append(any(vals[c] for c in n.children))
            else:
                vals.append(isinstance(n, TrueNode))
        return vals[self.root]

    def evaluate_batch(self, assignments: np.ndarray) -> np.ndarray:
        """Vectorized evaluate over a (num_assignments, var_count) bool array."""
        vals: list[np.ndarray] = []
        m = assignments.shape[0]
        for n in self.nodes:
            if isinstance(n, LeafNode):
                col = assignments[:, n.var]
                vals.append(col if n.positive else ~col)
            elif isinstance(n, AndNode):
                acc = vals[n.children[0]].copy()
                for c in n.children[1:]:
                    acc &= vals[c]
                vals.append(acc)
            elif isinstance(n, OrNode):
                acc = vals[n.children[0]].copy()
                for c in n.children[1:]:
                    acc |= vals[c]
                vals.append(acc)
            elif isinstance(n, TrueNode):
                vals.append(np.ones(m, dtype=bool))
            else:
                vals.append(np.zeros(m, dtype=bool))
        return vals[self.root]


def leaf_circuit(var: int, positive: bool = True, var_count: int | None = None) -> Circuit:
    return Circuit([LeafNode(var, positive)], 0,
                   var_count if var_count is not None else var + 1)


# ---------------------------------------------------------------------------
# Builder with hash-consing
# ---------------------------------------------------------------------------

class CircuitBuilder:
    """Append-only arena builder that dedupes structurally-identical nodes."""

    def __init__(self, var_count: int, node_budget: int | None = None):
        self.var_count = var_count
        self.node_budget = node_budget
        self.nodes: list[CircuitNode] = []
        self._table: dict[tuple, int] = {}

    def _add(self, key: tuple, node: CircuitNode) -> int:
        hit = self._table.get(key)
        if hit is not None:
            return hit
        if self.node_budget is not None and len(self.nodes) >= self.node_budget:
            raise BudgetExceeded(self.node_budget, len(self.nodes))
        self.nodes.append(node)
        nid = len(self.nodes) - 1
        self._table[key] = nid
        return nid

    def leaf(self, var: int, positive: bool) -> int:
        if not (0 <= var < self.var_count):
            raise CircuitError(f"leaf variable {var} out of range")
        return self._add(("L", var, positive), LeafNode(var, positive))

    def true(self) -> int:
        return self._add(("T",), TrueNode())

    def false(self) -> int:
        return self._add(("F",), FalseNode())

    def and_(self, children: Sequence[int]) -> int:
        ch = tuple(children)
        if not ch:
            return self.true()
        if len(ch) == 1:
            return ch[0]
        return self._add(("A", ch), AndNode(ch))

    def or_(self, children: Sequence[int], decision: int | None = None) -> int:
        ch = tuple(children)
        if not ch:
            return self.false()
        if len(ch) == 1:
            return ch[0]
        return self._add(("O", ch, decision), OrNode(ch, decision))

    def finish(self, root: int) -> Circuit:
        return compact(Circuit(self.nodes, root, self.var_count))


class BudgetExceeded(CircuitError):
    """Node budget hit during construction; carries the partial size."""

    def __init__(self, budget: int, reached: int):
        super().__init__(
            f"node budget {budget} exceeded (reached {reached} nodes)")
        self.budget = budget
        self.reached = reached


def compact(c: Circuit) -> Circuit:
    """Drop nodes unreachable from the root, preserving relative order."""
    reachable = [False] * len(c.nodes)
    reachable[c.root] = True
    for i in range(c.root, -1, -1):
        if not reachable[i]:
            continue
        n = c.nodes[i]
        if isinstance(n, (AndNode, OrNode)):
            for ch in n.children:
                reachable[ch] = True
    if all(reachable[: c.root + 1]) and c.root == len(c.nodes) - 1:
        return c
    remap: dict[int, int] = {}
    nodes: list[CircuitNode] = []
    for i, n in enumerate(c.nodes):
        if not reachable[i]:
            continue
        if isinstance(n, AndNode):
            n = AndNode(tuple(remap[ch] for ch in n.children))
        elif isinstance(n, OrNode):
            n = OrNode(tuple(remap[ch] for ch in n.children), n.decision)
        remap[i] = len(nodes)
        nodes.append(n)
    return Circuit(nodes, remap[c.root], c.var_count)


# ---------------------------------------------------------------------------
# Structural properties
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PropertyReport:
    decomposable: bool
    smooth: bool
    deterministic: bool | None  # None: unverifiable
    determinism_method: str     # "exhaustive" | "witness" | "unverifiable"

    @property
    def all_ok(self) -> bool:
        return self.decomposable and self.smooth and self.deterministic is True


_EXHAUSTIVE_LIMIT = 20
_CHUNK_BITS = 16


def _decomposable(c: Circuit) -> bool:
    scopes = c.scopes()
    for n in c.nodes:
        if isinstance(n, AndNode):
            seen: set[int] = set()
            total = 0
            for ch in n.children:
                seen |= scopes[ch]
                total += len(scopes[ch])
            if len(seen) != total:
                return False
    return True


def _smooth(c: Circuit) -> bool:
    scopes = c.scopes()
    for i, n in enumerate(c.nodes):
        if isinstance(n, OrNode):
            for ch in n.children:
                if scopes[ch] != scopes[i]:
                    return False
    return True


def _forced_value(c: Circuit, node_id: int, var: int) -> bool | None:
    """Truth value ``var`` must take for node ``node_id`` to be true, if the
    node syntactically forces one (it is the literal, or an AND containing it).
    """
    n = c.nodes[node_id]
    if isinstance(n, LeafNode) and n.var == var:
        return n.positive
    if isinstance(n, AndNode):
        for ch in n.children:
            m = c.nodes[ch]
            if isinstance(m, LeafNode) and m.var == var:
                return m.positive
    return None


def _witness_deterministic(c: Circuit) -> bool | None:
    """True when every OR's children pin its decision variable to distinct
    values; None when some OR lacks a usable witness.
    """
    for i, n in enumerate(c.nodes):
        if not isinstance(n, OrNode) or len(n.children) < 2:
            continue
        if n.decision is None:
            return None
        forced = [_forced_value(c, ch, n.decision) for ch in n.children]
        if any(v is None for v in forced) or len(set(forced)) != len(forced):
            return None
    return True


def _exhaustive_deterministic(c: Circuit) -> bool:
    v = c.var_count
    or_ids = [i for i, n in enumerate(c.nodes)
              if isinstance(n, OrNode) and len(n.children) > 1]
    if not or_ids:
        return True
    total = 1 << v
    chunk = min(total, 1 << _CHUNK_BITS)
    codes = np.arange(total, dtype=np.uint32)
    for lo in range(0, total, chunk):
        block = codes[lo:lo + chunk]
        assignments = ((block[:, None] >> np.arange(v, dtype=np.uint32)) & 1
                       ).astype(bool)
        vals: list[np.ndarray] = []
        m = assignments.shape[0]
        for n in c.nodes:
            if isinstance(n, LeafNode):
                col = assignments[:, n.var]
                vals.append(col if n.positive else ~col)
            elif isinstance(n, AndNode):
                acc = vals[n.children[0]].copy()
                for ch in n.children[1:]:
                    acc &= vals[ch]
                vals.append(acc)
            elif isinstance(n, OrNode):
                acc = vals[n.children[0]].copy()
                for ch in n.children[1:]:
                    acc |= vals[ch]
                vals.append(acc)
            elif isinstance(n, TrueNode):
                vals.append(np.ones(m, dtype=bool))
            else:
                vals.append(np.zeros(m, dtype=bool))
        for i in or_ids:
            n = c.nodes[i]
            count = np.zeros(m, dtype=np.int16)
            for ch in n.children:
                count += vals[ch]
            if np.any(count > 1):
                return False
    return True


def check_properties(c: Circuit) -> PropertyReport:
    """Syntactic decomposability/smoothness plus a determinism check:
    exhaustive over all assignments up to 20 variables, otherwise via the
    decision-variable witness ("unverifiable" when annotations are missing).
    """
    dec = _decomposable(c)
    smo = _smooth(c)
    if c.var_count <= _EXHAUSTIVE_LIMIT:
        det: bool | None = _exhaustive_deterministic(c)
        method = "exhaustive"
    else:
        det = _witness_deterministic(c)
        method = "witness" if det is not None else "unverifiable"
    return PropertyReport(dec, smo, det, method)


def quick_properties(c: Circuit) -> PropertyReport:
    """Like check_properties but witness-first, cached on the circuit; used
    to validate smooth/deterministic/decomposable preconditions cheaply.
    """
    if c._quick_props is None:
        dec = _decomposable(c)
        smo = _smooth(c)
        det = _witness_deterministic(c)
        method = "witness"
        if det is None:
            if c.var_count <= _EXHAUSTIVE_LIMIT:
                det = _exhaustive_deterministic(c)
                method = "exhaustive"
            else:
                method = "unverifiable"
        c._quick_props = PropertyReport(dec, smo, det, method)
    return c._quick_props


def require_sdd_properties(c: Circuit, op: str) -> None:
    rep = quick_properties(c)
    if not rep.decomposable:
        raise CircuitError(f"{op}: circuit is not decomposable")
    if not rep.smooth:
        raise CircuitError(f"{op}: circuit is not smooth")
    if rep.deterministic is False:
        raise CircuitError(f"{op}: circuit is not deterministic")
    if rep.deterministic is None:
        raise CircuitError(f"{op}: determinism unverifiable")


# ---------------------------------------------------------------------------
# Counting and enumeration
# ---------------------------------------------------------------------------

def model_count(c: Circuit) -> int:
    """Exact model count over the circuit's var_count variables.

    Requires smooth + deterministic + decomposable; leaves count 1, OR sums,
    AND multiplies. Variables missing from the root scope contribute a free
    factor of 2 each.
    """
    require_sdd_properties(c, "model_count")
    counts: list[int] = []
    for n in c.nodes:
        if isinstance(n, LeafNode):
            counts.append(1)
        elif isinstance(n, AndNode):
            acc = 1
            for ch in n.children:
                acc *= counts[ch]
            counts.append(acc)
        elif isinstance(n, OrNode):
            counts.append(sum(counts[ch] for ch in n.children))
        elif isinstance(n, TrueNode):
            counts.append(1)
        else:
            counts.append(0)
    missing = c.var_count - len(c.scopes()[c.root])
    return counts[c.root] << missing if counts[c.root] else 0


def enumerate_models(c: Circuit, limit: int = 1 << 20) -> Iterator[Assignment]:
    """Yield every model exactly once; raises before yielding if the count
    exceeds ``limit``.
    """
    n_models = model_count(c)
    if n_models > limit:
        raise CircuitError(f"model count {n_models} exceeds limit {limit}")
    scopes = c.scopes()

    def walk(i: int) -> Iterator[dict[int, bool]]:
        n = c.nodes[i]
        if isinstance(n, LeafNode):
            yield {n.var: n.positive}
        elif isinstance(n, TrueNode):
            yield {}
        elif isinstance(n, FalseNode):
            return
        elif isinstance(n, OrNode):
            for ch in n.children:
                yield from walk(ch)
        else:
            def product(children: tuple[int, ...]) -> Iterator[dict[int, bool]]:
                if not children:
                    yield {}
                    return
                for head in walk(children[0]):
                    for rest in product(children[1:]):
                        merged = dict(head)
                        merged.update(rest)
                        yield merged
            yield from product(n.children)

    missing = sorted(set(range(c.var_count)) - scopes[c.root])
    for partial in walk(c.root):
        for free_bits in itertools.product((False, True), repeat=len(missing)):
            full = dict(partial)
            full.update(zip(missing, free_bits))
            yield Assignment(tuple(full[v] for v in range(c.var_count)))


# ---------------------------------------------------------------------------
# NNF text format
# ---------------------------------------------------------------------------
#
# Header: `nnf <numNodes> <numEdges> <numVars>`, then one line per node in
# arena order:
#   L <lit>                      (1-based signed variable)
#   T
#   F
#   A <childCount> <ids...>
#   O <decisionVar> <childCount> <ids...>   (decisionVar 0 when absent)
# Ids are 0-based line indices; a child id must precede the line using it.
# The last node is the root.

def write_nnf(c: Circuit) -> str:
    lines = [f"nnf {len(c.nodes)} {c.edge_count} {c.var_count}"]
    last = len(c.nodes) - 1
    if c.root != last:
        # keep the on-disk contract "last node is the root"
        c = compact(c)
        lines = [f"nnf {len(c.nodes)} {c.edge_count} {c.var_count}"]
    for n in c.nodes:
        if isinstance(n, LeafNode):
            lines.append(f"L {n.var + 1 if n.positive else -(n.var + 1)}")
        elif isinstance(n, TrueNode):
            lines.append("T")
        elif isinstance(n, FalseNode):
            lines.append("F")
        elif isinstance(n, AndNode):
            lines.append("A " + " ".join(
                [str(len(n.children))] + [str(ch) for ch in n.children]))
        else:
            d = 0 if n.decision is None else n.decision + 1
            lines.append(f"O {d} " + " ".join(
                [str(len(n.children))] + [str(ch) for ch in n.children]))
    return "\n".join(lines) + "\n"


def read_nnf(text: str) -> Circuit:
    lines = text.splitlines()
    if not lines:
        raise NnfFormatError("empty input", 1)
    header = lines[0].split()
    if len(header) != 4 or header[0] != "nnf":
        raise NnfFormatError(f"malformed header {lines[0]!r}", 1)
    try:
        num_nodes, num_edges, num_vars = (int(x) for x in header[1:])
    except ValueError:
        raise NnfFormatError(f"malformed header {lines[0]!r}", 1) from None

    nodes: list[CircuitNode] = []

    def parse_children(fields: list[str], lineno: int) -> tuple[int, ...]:
        try:
            count = int(fields[0])
            ids = [int(x) for x in fields[1:]]
        except ValueError:
            raise NnfFormatError("non-numeric child list", lineno) from None
        if count != len(ids):
            raise NnfFormatError(
                f"child count {count} does not match {len(ids)} ids", lineno)
        for ch in ids:
            if ch < 0 or ch >= num_nodes:
                raise NnfFormatError(f"child id {ch} out of range", lineno)
            if ch >= len(nodes):
                raise NnfFormatError(f"forward reference to node {ch}", lineno)
        return tuple(ids)

    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        fields = line.split()
        kind = fields[0]
        if kind == "L":
            if len(fields) != 2:
                raise NnfFormatError("literal line needs one argument", lineno)
            try:
                lit = int(fields[1])
            except ValueError:
                raise NnfFormatError(f"bad literal {fields[1]!r}", lineno) from None
            if lit == 0 or abs(lit) > num_vars:
                raise NnfFormatError(
                    f"variable {abs(lit)} out of range (max {num_vars})", lineno)
            nodes.append(LeafNode(abs(lit) - 1, lit > 0))
        elif kind == "T":
            nodes.append(TrueNode())
        elif kind == "F":
            nodes.append(FalseNode())
        elif kind == "A":
            children = parse_children(fields[1:], lineno)
            if not children:
                raise NnfFormatError("AND gate with no children", lineno)
            nodes.append(AndNode(children))
        elif kind == "O":
            if len(fields) < 3:
                raise NnfFormatError("malformed OR line", lineno)
            try:
                d = int(fields[1])
            except ValueError:
                raise NnfFormatError(f"bad decision var {fields[1]!r}", lineno) from None
            if d < 0 or d > num_vars:
                raise NnfFormatError(f"decision variable {d} out of range", lineno)
            children = parse_children(fields[2:], lineno)
            if not children:
                raise NnfFormatError("OR gate with no children", lineno)
            nodes.append(OrNode(children, None if d == 0 else d - 1))
        else:
            raise NnfFormatError(f"unknown node kind {kind!r}", lineno)

    if len(nodes) != num_nodes:
        raise NnfFormatError(
            f"header declares {num_nodes} nodes, found {len(nodes)}",
            len(lines))
    c = Circuit(nodes, len(nodes) - 1, num_vars)
    if c.edge_count != num_edges:
        raise NnfFormatError(
            f"header declares {num_edges} edges, found {c.edge_count}",
            len(lines))
    return c
