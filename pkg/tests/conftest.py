"""Shared generators and small independent oracles for the test suite."""

import itertools

import numpy as np

from circuitloss.formula import (And, CategoricalSpace, Const, Formula, Lit,
                                 Not, Or, _exactly_one_node)
from circuitloss.models import FactorizedModel, MarkovARModel
from circuitloss.wmc import WeightMap


def rand_cnf(rng: np.random.Generator, n_vars: int, n_clauses: int,
             max_len: int = 3) -> Formula:
    clauses = []
    for _ in range(n_clauses):
        length = int(rng.integers(1, max_len + 1))
        vs = rng.choice(n_vars, size=min(length, n_vars), replace=False)
        clauses.append(Or(tuple(
            Lit(int(v), bool(rng.integers(2))) for v in vs)))
    return Formula(And(tuple(clauses)), n_vars)


def rand_ast(rng: np.random.Generator, n_vars: int, depth: int):
    """Random general formula tree with negations and constants."""
    if depth == 0 or rng.random() < 0.3:
        r = rng.random()
        if r < 0.05:
            return Const(bool(rng.integers(2)))
        return Lit(int(rng.integers(n_vars)), bool(rng.integers(2)))
    kind = rng.integers(3)
    if kind == 2:
        return Not(rand_ast(rng, n_vars, depth - 1))
    arity = int(rng.integers(1, 4))
    children = tuple(rand_ast(rng, n_vars, depth - 1) for _ in range(arity))
    return And(children) if kind == 0 else Or(children)


def rand_formula(rng: np.random.Generator, n_vars: int, depth: int = 4) -> Formula:
    return Formula(rand_ast(rng, n_vars, depth), n_vars)


def truth_table_eval(node, assignment: dict) -> bool:
    """Independent recursive evaluator used to cross-check satisfaction."""
    if isinstance(node, Lit):
        return assignment[node.var] == node.positive
    if isinstance(node, Not):
        return not truth_table_eval(node.child, assignment)
    if isinstance(node, And):
        return all(truth_table_eval(c, assignment) for c in node.children)
    if isinstance(node, Or):
        return any(truth_table_eval(c, assignment) for c in node.children)
    return node.value


def brute_count(f: Formula) -> int:
    count = 0
    for bits in itertools.product([False, True], repeat=f.var_count):
        if truth_table_eval(f.root, dict(enumerate(bits))):
            count += 1
    return count


def brute_wmc(f: Formula, probs) -> float:
    """Sum over models of the product of per-variable Bernoulli weights."""
    total = 0.0
    for bits in itertools.product([False, True], repeat=f.var_count):
        if truth_table_eval(f.root, dict(enumerate(bits))):
            w = 1.0
            for v, b in enumerate(bits):
                w *= probs[v] if b else 1.0 - probs[v]
            total += w
    return total


def rand_probs_weightmap(rng: np.random.Generator, n_vars: int) -> WeightMap:
    return WeightMap.from_probs(rng.uniform(0.05, 0.95, size=n_vars))


def rand_factorized(rng: np.random.Generator,
                    space: CategoricalSpace) -> FactorizedModel:
    return FactorizedModel(
        space, rng.normal(size=(space.steps, space.categories)))


def rand_markov(rng: np.random.Generator, space: CategoricalSpace,
                window: int) -> MarkovARModel:
    k = space.categories
    return MarkovARModel(
        space, window,
        [rng.normal(size=(k ** min(window, i), k))
         for i in range(space.steps)])


def space_constraint(rng: np.random.Generator, space: CategoricalSpace,
                     n_clauses: int = 4) -> Formula:
    """Random clauses over the one-hot indicators, conjoined with the
    explicit exactly-one constraint per step.
    """
    parts = [_exactly_one_node([space.var(i, c)
                                for c in range(space.categories)])
             for i in range(space.steps)]
    nv = space.var_count
    for _ in range(n_clauses):
        length = int(rng.integers(1, 4))
        vs = rng.choice(nv, size=min(length, nv), replace=False)
        parts.append(Or(tuple(
            Lit(int(v), bool(rng.integers(2))) for v in vs)))
    return Formula(And(tuple(parts)), nv)
