"""Boolean constraints as ASTs: parsing, evaluation, and constraint templates.

Variables are 0-based integer ids. A formula is a tree of nodes (literals,
and/or/not, constants) plus a declared variable count; the DIMACS convention
(1-based signed literals) is translated at the file boundary.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence, Union


class FormulaError(Exception):
    pass


class DimacsError(FormulaError):
    """Malformed DIMACS input. Carries the offending line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


# ---------------------------------------------------------------------------
# AST nodes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Lit:
    var: int
    positive: bool = True


@dataclass(frozen=True)
class And:
    children: tuple["Node", ...]


@dataclass(frozen=True)
class Or:
    children: tuple["Node", ...]


@dataclass(frozen=True)
class Not:
    child: "Node"


@dataclass(frozen=True)
class Const:
    value: bool


Node = Union[Lit, And, Or, Not, Const]

TRUE = Const(True)
FALSE = Const(False)


def land(*children: Node) -> Node:
    return And(tuple(children))


def lor(*children: Node) -> Node:
    return Or(tuple(children))


def lnot(child: Node) -> Node:
    return Not(child)


@dataclass(frozen=True)
class Formula:
    """A Boolean constraint: an AST over variables 0 .. var_count-1."""

    root: Node
    var_count: int

    def __post_init__(self):
        if self.var_count < 0:
            raise FormulaError("var_count must be non-negative")
        bad = [v for v in variables(self.root) if v < 0 or v >= self.var_count]
        if bad:
            raise FormulaError(
                f"variable {bad[0]} out of range for var_count {self.var_count}")

    def variables(self) -> frozenset[int]:
        return frozenset(variables(self.root))


def variables(node: Node) -> Iterator[int]:
    """Yield every variable id appearing under ``node`` (with repeats)."""
    stack = [node]
    while stack:
        n = stack.pop()
        if isinstance(n, Lit):
            yield n.var
        elif isinstance(n, (And, Or)):
            stack.extend(n.children)
        elif isinstance(n, Not):
            stack.append(n.child)


# ---------------------------------------------------------------------------
# Categorical spaces and assignments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CategoricalSpace:
    """A grid of n categorical steps with k classes each, one-hot encoded.

    Step i, category c maps to Boolean variable i*k + c.
    """

    steps: int
    categories: int

    def __post_init__(self):
        if self.steps < 1 or self.categories < 1:
            raise FormulaError("steps and categories must be >= 1")

    @property
    def var_count(self) -> int:
        return self.steps * self.categories

    def var(self, step: int, category: int) -> int:
        if not (0 <= step < self.steps and 0 <= category < self.categories):
            raise FormulaError(f"({step}, {category}) outside space")
        return step * self.categories + category

    def assignment(self, cats: Sequence[int]) -> "Assignment":
        """One-hot Boolean assignment for a categorical sequence."""
        if len(cats) != self.steps:
            raise FormulaError(
                f"expected {self.steps} categories, got {len(cats)}")
        values = [False] * self.var_count
        for i, c in enumerate(cats):
            if not (0 <= c < self.categories):
                raise FormulaError(f"category {c} out of range at step {i}")
            values[self.var(i, c)] = True
        return Assignment(tuple(values), tuple(cats))


@dataclass(frozen=True)
class Assignment:
    """A total truth assignment, optionally with a categorical view.

    When ``categories`` is present, exactly one indicator per step must be
    true and the two views must agree (checked on construction).
    """

    values: tuple[bool, ...]
    categories: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.categories is not None:
            n = len(self.categories)
            if n == 0 or len(self.values) % n != 0:
                raise FormulaError("categorical view inconsistent with values")
            k = len(self.values) // n
            for i, c in enumerate(self.categories):
                hot = [cc for cc in range(k) if self.values[i * k + cc]]
                if hot != [c]:
                    raise FormulaError(
                        f"step {i}: one-hot view disagrees with Boolean values")

    @property
    def var_count(self) -> int:
        return len(self.values)

    def __getitem__(self, var: int) -> bool:
        return self.values[var]


def assignment_from_map(values: dict[int, bool], var_count: int) -> Assignment:
    missing = [v for v in range(var_count) if v not in values]
    if missing:
        raise FormulaError(f"assignment missing variable {missing[0]}")
    return Assignment(tuple(bool(values[v]) for v in range(var_count)))


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def evaluate(f: Formula, a: Assignment | Sequence[bool]) -> bool:
    """Standard Boolean satisfaction: True iff ``a`` is a model of ``f``."""
    values = a.values if isinstance(a, Assignment) else tuple(a)
    if len(values) < f.var_count:
        raise FormulaError(
            f"assignment covers {len(values)} variables, formula needs "
            f"{f.var_count}")

    def walk(n: Node) -> bool:
        if isinstance(n, Lit):
            return values[n.var] if n.positive else not values[n.var]
        if isinstance(n, And):
            return all(walk(c) for c in n.children)
        if isinstance(n, Or):
            return any(walk(c) for c in n.children)
        if isinstance(n, Not):
            return not walk(n.child)
        return n.value

    return walk(f.root)


def all_assignments(var_count: int) -> Iterator[tuple[bool, ...]]:
    """All 2^var_count assignments in lexicographic (var 0 fastest) order."""
    for bits in range(1 << var_count):
        yield tuple(bool((bits >> v) & 1) for v in range(var_count))


# ---------------------------------------------------------------------------
# DIMACS CNF
# ---------------------------------------------------------------------------

def parse_dimacs(text: str) -> Formula:
    """Parse DIMACS CNF: ``p cnf V C`` header, clauses terminated by 0."""
    var_count = None
    clauses: list[list[Lit]] = []
    current: list[Lit] = []
    clause_open_line = 0

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("c"):
            continue
        if line.startswith("p"):
            if var_count is not None:
                raise DimacsError("duplicate header", lineno)
            parts = line.split()
            if len(parts) != 4 or parts[1] != "cnf":
                raise DimacsError(f"malformed header {line!r}", lineno)
            try:
                var_count = int(parts[2])
                declared_clauses = int(parts[3])
            except ValueError:
                raise DimacsError(f"malformed header {line!r}", lineno) from None
            if var_count < 0 or declared_clauses < 0:
                raise DimacsError("negative counts in header", lineno)
            continue
        if var_count is None:
            raise DimacsError("clause before header", lineno)
        for tok in line.split():
            try:
                lit = int(tok)
            except ValueError:
                raise DimacsError(f"bad token {tok!r}", lineno) from None
            if lit == 0:
                clauses.append(current)
                current = []
                clause_open_line = 0
            else:
                if abs(lit) > var_count:
                    raise DimacsError(
                        f"variable {abs(lit)} out of range (max {var_count})",
                        lineno)
                if not current:
                    clause_open_line = lineno
                current.append(Lit(abs(lit) - 1, lit > 0))

    if var_count is None:
        raise DimacsError("missing 'p cnf' header", 1)
    if current:
        raise DimacsError("unterminated clause (no closing 0)",
                          clause_open_line)

    root = And(tuple(Or(tuple(cl)) for cl in clauses))
    return Formula(root, var_count)


def to_dimacs(f: Formula) -> str:
    """Serialize a CNF-shaped formula back to DIMACS text.

    Accepts the shapes parse_dimacs and the CNF templates produce: a
    conjunction of clauses, where a clause is a disjunction of literals or a
    bare literal.
    """
    clauses = _cnf_clauses(f.root)
    lines = [f"p cnf {f.var_count} {len(clauses)}"]
    for cl in clauses:
        lines.append(
            " ".join(str(l.var + 1 if l.positive else -(l.var + 1))
                     for l in cl) + " 0")
    return "\n".join(lines) + "\n"


def _cnf_clauses(root: Node) -> list[list[Lit]]:
    def as_clause(n: Node) -> list[Lit]:
        if isinstance(n, Lit):
            return [n]
        if isinstance(n, Not) and isinstance(n.child, Lit):
            c = n.child
            return [Lit(c.var, not c.positive)]
        if isinstance(n, Or):
            out: list[Lit] = []
            for ch in n.children:
                out.extend(as_clause(ch))
            return out
        raise FormulaError("formula is not in CNF shape")

    if isinstance(root, And):
        return [as_clause(c) for c in root.children]
    return [as_clause(root)]


# ---------------------------------------------------------------------------
# Templates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Template:
    """A generated constraint plus, when one-hot encoded, its space."""

    formula: Formula
    space: CategoricalSpace | None = None


def exactly_one(vars: Sequence[int], var_count: int | None = None) -> Formula:
    """Satisfied precisely when one of ``vars`` is true.

    Encoded as the at-least-one clause plus pairwise at-most-one clauses.
    """
    vs = list(vars)
    if not vs:
        raise FormulaError("exactly_one needs a non-empty variable list")
    if len(set(vs)) != len(vs):
        raise FormulaError("exactly_one variable list has duplicates")
    if var_count is None:
        var_count = max(vs) + 1
    return Formula(_exactly_one_node(vs), var_count)


def _exactly_one_node(vs: Sequence[int]) -> Node:
    clauses: list[Node] = [Or(tuple(Lit(v) for v in vs))]
    for a, b in itertools.combinations(vs, 2):
        clauses.append(Or((Lit(a, False), Lit(b, False))))
    return And(tuple(clauses))


def choose_k(n: int, k: int) -> Template:
    """Exactly k of n Boolean variables true; model count C(n, k)."""
    if not (0 <= k <= n) or n < 1:
        raise FormulaError(f"choose_k({n}, {k}) is inconsistent")

    def rec(i: int, need: int) -> Node:
        remaining = n - i
        if need < 0 or need > remaining:
            return FALSE
        if remaining == 0:
            return TRUE
        if need == 0:
            return And(tuple(Lit(v, False) for v in range(i, n)))
        if need == remaining:
            return And(tuple(Lit(v) for v in range(i, n)))
        take = And((Lit(i), rec(i + 1, need - 1)))
        skip = And((Lit(i, False), rec(i + 1, need)))
        return Or((take, skip))

    return Template(Formula(rec(0, k), n))


def latin_square(n: int, boxes: bool = False) -> Template:
    """n x n grid over n values: rows and columns each hold every value once.

    With ``boxes`` (n a perfect square) each sqrt(n) x sqrt(n) box must also
    hold every value once. Cell exactly-one constraints are conjoined
    explicitly, so the model count over the n^3 indicators is the number of
    valid grids.
    """
    if n < 1:
        raise FormulaError("latin_square needs n >= 1")
    space = CategoricalSpace(steps=n * n, categories=n)
    cell = lambda r, c: r * n + c
    parts: list[Node] = []
    for r in range(n):
        for c in range(n):
            parts.append(_exactly_one_node(
                [space.var(cell(r, c), v) for v in range(n)]))
    for r in range(n):
        for v in range(n):
            parts.append(_exactly_one_node(
                [space.var(cell(r, c), v) for c in range(n)]))
    for c in range(n):
        for v in range(n):
            parts.append(_exactly_one_node(
                [space.var(cell(r, c), v) for r in range(n)]))
    if boxes:
        side = int(round(n ** 0.5))
        if side * side != n:
            raise FormulaError("box uniqueness needs n to be a perfect square")
        for br in range(side):
            for bc in range(side):
                members = [cell(br * side + dr, bc * side + dc)
                           for dr in range(side) for dc in range(side)]
                for v in range(n):
                    parts.append(_exactly_one_node(
                        [space.var(m, v) for m in members]))
    return Template(Formula(And(tuple(parts)), space.var_count), space)


def grid_edges(rows: int, cols: int) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    """Edges of the rows x cols vertex grid: horizontal first (row-major),
    then vertical, each row-major. The list index is the edge's variable id.
    """
    edges = []
    for r in range(rows):
        for c in range(cols - 1):
            edges.append(((r, c), (r, c + 1)))
    for r in range(rows - 1):
        for c in range(cols):
            edges.append(((r, c), (r + 1, c)))
    return edges


def grid_path(rows: int, cols: int) -> Template:
    """Edge subsets forming a simple path from top-left to bottom-right.

    Paths need not be monotone. Built by enumerating every simple path with
    a DFS and taking the disjunction of the corresponding complete edge
    minterms, which is exact at desk scale.
    """
    if rows < 1 or cols < 1 or rows * cols < 2:
        raise FormulaError("grid_path needs at least two vertices")
    if rows > 4 or cols > 4:
        raise FormulaError("grid_path enumeration is limited to 4x4 grids")
    edges = grid_edges(rows, cols)
    edge_id = {e: i for i, e in enumerate(edges)}

    def incident(v):
        r, c = v
        out = []
        for nb in ((r, c - 1), (r, c + 1), (r - 1, c), (r + 1, c)):
            if 0 <= nb[0] < rows and 0 <= nb[1] < cols:
                key = (v, nb) if (v, nb) in edge_id else (nb, v)
                out.append((edge_id[key], nb))
        return out

    start, goal = (0, 0), (rows - 1, cols - 1)
    paths: list[frozenset[int]] = []

    def dfs(v, used_edges: list[int], visited: set):
        if v == goal:
            paths.append(frozenset(used_edges))
            return
        for eid, nb in incident(v):
            if nb not in visited:
                visited.add(nb)
                used_edges.append(eid)
                dfs(nb, used_edges, visited)
                used_edges.pop()
                visited.remove(nb)

    dfs(start, [], {start})

    minterms = tuple(
        And(tuple(Lit(e, e in p) for e in range(len(edges))))
        for p in sorted(paths, key=sorted))
    return Template(Formula(Or(minterms), len(edges)))


def banned_patterns(alphabet_size: int, patterns: Iterable[Sequence[int]],
                    seq_len: int) -> Template:
    """Sequences over a k-ary alphabet containing none of ``patterns`` as a
    contiguous subsequence at any start offset. One-hot encoded with explicit
    exactly-one constraints per step.
    """
    space = CategoricalSpace(steps=seq_len, categories=alphabet_size)
    parts: list[Node] = []
    for i in range(seq_len):
        parts.append(_exactly_one_node(
            [space.var(i, c) for c in range(alphabet_size)]))
    for pat in patterns:
        pat = tuple(pat)
        if len(pat) > seq_len:
            raise FormulaError(
                f"pattern of length {len(pat)} longer than seq_len {seq_len}")
        if not pat:
            raise FormulaError("empty pattern")
        for c in pat:
            if not (0 <= c < alphabet_size):
                raise FormulaError(f"pattern symbol {c} outside alphabet")
        for start in range(seq_len - len(pat) + 1):
            parts.append(Or(tuple(
                Lit(space.var(start + j, pat[j]), False)
                for j in range(len(pat)))))
    return Template(Formula(And(tuple(parts)), space.var_count), space)


def make_template(kind: str, **params) -> Template:
    """Dispatch by template name; used by the CLI."""
    if kind == "latin_square":
        return latin_square(params["n"], boxes=params.get("boxes", False))
    if kind == "grid_path":
        return grid_path(params["rows"], params["cols"])
    if kind == "choose_k":
        return choose_k(params["n"], params["k"])
    if kind == "banned_patterns":
        return banned_patterns(params["alphabet_size"], params["patterns"],
                               params["seq_len"])
    raise FormulaError(f"unknown template kind {kind!r}")
