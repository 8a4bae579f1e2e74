"""Compile constraint ASTs into smooth, deterministic, decomposable circuits.

The recipe is top-down branching in a fixed variable order: an OR node
branches on the current variable, its two AND children pair the branch
literal (plus any unit-propagated literals) with the compiled residual.
Residual formulas are canonicalized (NNF, constant folding, flattening,
child sorting) and interned, so structurally-equal residuals compile to one
shared circuit node.
"""

from __future__ import annotations

from dataclasses import dataclass

from .circuit import (AndNode, Circuit, CircuitBuilder, FalseNode,
                      OrNode, TrueNode)
from .formula import And, Const, Formula, Lit, Node, Not, Or


class CompileError(Exception):
    pass


@dataclass(frozen=True)
class VarOrder:
    """A branching order: a permutation of the variable ids."""

    permutation: tuple[int, ...]
    strategy: str = "explicit"

    def __post_init__(self):
        if sorted(self.permutation) != list(range(len(self.permutation))):
            raise CompileError("order is not a permutation of the variables")

    @classmethod
    def lexicographic(cls, var_count: int) -> "VarOrder":
        return cls(tuple(range(var_count)), "lexicographic")

    @classmethod
    def most_frequent_first(cls, f: Formula) -> "VarOrder":
        counts = [0] * f.var_count
        stack = [f.root]
        while stack:
            n = stack.pop()
            if isinstance(n, Lit):
                counts[n.var] += 1
            elif isinstance(n, (And, Or)):
                stack.extend(n.children)
            elif isinstance(n, Not):
                stack.append(n.child)
        perm = sorted(range(f.var_count), key=lambda v: (-counts[v], v))
        return cls(tuple(perm), "most_frequent_first")

    @classmethod
    def explicit(cls, permutation) -> "VarOrder":
        return cls(tuple(permutation), "explicit")


# ---------------------------------------------------------------------------
# Interned canonical formulas
# ---------------------------------------------------------------------------

_TRUE = 0
_FALSE = 1


class _Pool:
    """Residual formulas as interned ids. Kinds: T, F, L (var, sign),
    A / O (sorted child ids). Gate constructors constant-fold, flatten
    same-kind children, deduplicate, and collapse complementary literals.
    """

    def __init__(self):
        self.kind: list[str] = ["T", "F"]
        self.payload: list = [None, None]
        self.vars: list[frozenset[int]] = [frozenset(), frozenset()]
        self._table: dict[tuple, int] = {("T",): _TRUE, ("F",): _FALSE}

    def _add(self, key: tuple, kind: str, payload, vars_: frozenset[int]) -> int:
        hit = self._table.get(key)
        if hit is not None:
            return hit
        self.kind.append(kind)
        self.payload.append(payload)
        self.vars.append(vars_)
        fid = len(self.kind) - 1
        self._table[key] = fid
        return fid

    def lit(self, var: int, sign: bool) -> int:
        return self._add(("L", var, sign), "L", (var, sign), frozenset((var,)))

    def gate(self, kind: str, children: list[int]) -> int:
        absorbing = _FALSE if kind == "A" else _TRUE
        identity = _TRUE if kind == "A" else _FALSE
        flat: list[int] = []
        for ch in children:
            if ch == absorbing:
                return absorbing
            if ch == identity:
                continue
            if self.kind[ch] == kind:
                flat.extend(self.payload[ch])
            else:
                flat.append(ch)
        seen: set[int] = set()
        uniq: list[int] = []
        lits: dict[int, bool] = {}
        for ch in flat:
            if ch in seen:
                continue
            seen.add(ch)
            if self.kind[ch] == "L":
                v, s = self.payload[ch]
                if v in lits and lits[v] != s:
                    return absorbing  # x and not-x under one gate
                lits[v] = s
            uniq.append(ch)
        if not uniq:
            return identity
        if len(uniq) == 1:
            return uniq[0]
        uniq.sort(key=lambda ch: (min(self.vars[ch]), ch))
        vars_: frozenset[int] = frozenset()
        for ch in uniq:
            vars_ = vars_ | self.vars[ch]
        return self._add((kind, tuple(uniq)), kind, tuple(uniq), vars_)

    def intern(self, node: Node, negate: bool = False) -> int:
        if isinstance(node, Lit):
            return self.lit(node.var, node.positive ^ negate)
        if isinstance(node, Const):
            return _FALSE if node.value == negate else _TRUE
        if isinstance(node, Not):
            return self.intern(node.child, not negate)
        kind = "A" if isinstance(node, And) else "O"
        if negate:
            kind = "O" if kind == "A" else "A"
        return self.gate(kind, [self.intern(c, negate) for c in node.children])


# ---------------------------------------------------------------------------
# The compiler
# ---------------------------------------------------------------------------

class _Compiler:
    def __init__(self, f: Formula, order: VarOrder, node_budget: int):
        self.pool = _Pool()
        self.builder = CircuitBuilder(f.var_count, node_budget)
        self.position = [0] * f.var_count
        for i, v in enumerate(order.permutation):
            self.position[v] = i
        self.order = order.permutation
        self._sub_memo: dict[tuple[int, int, bool], int] = {}
        self._built: dict[int, int | None] = {}
        self.root_fid = self.pool.intern(f.root)

    def substitute(self, fid: int, var: int, val: bool) -> int:
        if var not in self.pool.vars[fid]:
            return fid
        key = (fid, var, val)
        hit = self._sub_memo.get(key)
        if hit is not None:
            return hit
        kind = self.pool.kind[fid]
        if kind == "L":
            v, s = self.pool.payload[fid]
            out = _TRUE if s == val else _FALSE
        else:
            out = self.pool.gate(
                kind, [self.substitute(ch, var, val)
                       for ch in self.pool.payload[fid]])
        self._sub_memo[key] = out
        return out

    def extract_units(self, fid: int) -> tuple[dict[int, bool], int]:
        """Peel forced literals off an AND-rooted (or bare-literal) residual
        until a fixpoint; the returned core has no top-level literals.
        """
        units: dict[int, bool] = {}
        while True:
            kind = self.pool.kind[fid]
            if kind == "L":
                v, s = self.pool.payload[fid]
                units[v] = s
                return units, _TRUE
            if kind != "A":
                return units, fid
            found = [(self.pool.payload[ch])
                     for ch in self.pool.payload[fid]
                     if self.pool.kind[ch] == "L"]
            if not found:
                return units, fid
            for v, s in found:
                units[v] = s
                fid = self.substitute(fid, v, s)
                if fid in (_TRUE, _FALSE):
                    return units, fid

    def branch_var(self, fid: int) -> int:
        return min(self.pool.vars[fid], key=lambda v: self.position[v])

    def build(self, fid: int) -> int | None:
        """Circuit node for the residual, or None when it is unsatisfiable."""
        if fid == _TRUE:
            return self.builder.true()
        if fid == _FALSE:
            return None
        hit = self._built.get(fid, "miss")
        if hit != "miss":
            return hit
        units, core = self.extract_units(fid)
        if units:
            result = self._conjoin(units, core)
        else:
            v = self.branch_var(fid)
            branches: list[int] = []
            for val in (True, False):
                residual = self.substitute(fid, v, val)
                node = self._conjoin({v: val}, residual)
                if node is not None:
                    branches.append(node)
            if not branches:
                result = None
            elif len(branches) == 1:
                result = branches[0]
            else:
                result = self.builder.or_(branches, decision=v)
        self._built[fid] = result
        return result

    def _conjoin(self, units: dict[int, bool], core: int) -> int | None:
        if core == _FALSE:
            return None
        sub = None
        if core != _TRUE:
            sub = self.build(core)
            if sub is None:
                return None
        children = [self.builder.leaf(v, s) for v, s in sorted(units.items())]
        if sub is not None:
            children.append(sub)
        return self.builder.and_(children)


def compile_formula(f: Formula, order: VarOrder | None = None,
                    node_budget: int = 10_000_000) -> Circuit:
    """Compile a formula to a smooth, deterministic, decomposable circuit
    logically equivalent to it, smoothed over all var_count variables.

    Unsatisfiable inputs give the single-false-node circuit; tautologies the
    smoothing gadget over every variable. Raises BudgetExceeded when the node
    budget is hit.
    """
    if order is None:
        order = VarOrder.lexicographic(f.var_count)
    if len(order.permutation) != f.var_count:
        raise CompileError(
            f"order covers {len(order.permutation)} variables, formula has "
            f"{f.var_count}")
    comp = _Compiler(f, order, node_budget)
    root = comp.build(comp.root_fid)
    if root is None:
        return Circuit([FalseNode()], 0, f.var_count)
    raw = comp.builder.finish(root)
    return _smooth(raw, extend_root=True, node_budget=node_budget)


def smooth(c: Circuit) -> Circuit:
    """Equalize the scopes of every OR's children by conjoining (v or not-v)
    gadgets for missing variables. Already-smooth circuits are returned
    unchanged; the satisfying set is always preserved.
    """
    return _smooth(c, extend_root=False, node_budget=None)


def _needs_work(c: Circuit, extend_root: bool) -> bool:
    scopes = c.scopes()
    for i, n in enumerate(c.nodes):
        if isinstance(n, OrNode):
            for ch in n.children:
                if scopes[ch] != scopes[i]:
                    return True
                if isinstance(c.nodes[ch], (TrueNode, FalseNode)):
                    return True
    if extend_root:
        root = c.nodes[c.root]
        if isinstance(root, TrueNode) and c.var_count > 0:
            return True
        if not isinstance(root, (TrueNode, FalseNode)) and \
                len(scopes[c.root]) != c.var_count:
            return True
    return False


def _smooth(c: Circuit, extend_root: bool, node_budget: int | None) -> Circuit:
    if not _needs_work(c, extend_root):
        return c
    scopes = c.scopes()
    b = CircuitBuilder(c.var_count, node_budget)
    gadgets: dict[int, int] = {}

    def gadget(v: int) -> int:
        if v not in gadgets:
            gadgets[v] = b.or_([b.leaf(v, True), b.leaf(v, False)], decision=v)
        return gadgets[v]

    def extend(nid: int, missing: frozenset[int]) -> int:
        if not missing:
            return nid
        return b.and_([nid] + [gadget(v) for v in sorted(missing)])

    new_id: list[int | None] = []
    for i, n in enumerate(c.nodes):
        if isinstance(n, (TrueNode, FalseNode)):
            new_id.append(b.true() if isinstance(n, TrueNode) else b.false())
        elif not isinstance(n, (AndNode, OrNode)):
            new_id.append(b.leaf(n.var, n.positive))
        elif isinstance(n, AndNode):
            if any(isinstance(c.nodes[ch], FalseNode) for ch in n.children):
                new_id.append(b.false())
                continue
            kept = [new_id[ch] for ch in n.children
                    if not isinstance(c.nodes[ch], TrueNode)]
            new_id.append(b.and_(kept) if kept else b.true())
        else:
            children: list[int] = []
            for ch in n.children:
                if isinstance(c.nodes[ch], FalseNode):
                    continue
                missing = scopes[i] - scopes[ch]
                if isinstance(c.nodes[ch], TrueNode):
                    if missing:
                        children.append(b.and_([gadget(v)
                                                for v in sorted(missing)]))
                    else:
                        children.append(b.true())
                else:
                    children.append(extend(new_id[ch], missing))
            new_id.append(b.or_(children, decision=n.decision))

    root = new_id[c.root]
    if extend_root:
        all_vars = frozenset(range(c.var_count))
        if isinstance(c.nodes[c.root], TrueNode):
            if c.var_count:
                root = b.and_([gadget(v) for v in sorted(all_vars)])
        elif not isinstance(c.nodes[c.root], FalseNode):
            root = extend(root, all_vars - scopes[c.root])
    return b.finish(root)
