"""Brute-force counterparts of the fast paths: enumeration-based model
counting, weighted model counting, neighborhood-loss evaluation, and
sequence-space entropy/KL. Deliberately independent of the circuit engine's
dynamic programming; everything here enumerates.
"""

from __future__ import annotations

import itertools
import math
from typing import Iterator

import numpy as np

from .circuit import Circuit
from .formula import CategoricalSpace, Formula

_MAX_ENUM_VARS = 26


def assignment_matrix(var_count: int) -> np.ndarray:
    """(2^var_count, var_count) bool matrix; row index encodes the
    assignment with variable 0 as the least significant bit.
    """
    if var_count > _MAX_ENUM_VARS:
        raise ValueError(f"enumeration over {var_count} variables refused")
    codes = np.arange(1 << var_count, dtype=np.uint32)
    return ((codes[:, None] >> np.arange(var_count, dtype=np.uint32)) & 1
            ).astype(bool)


def formula_sat_mask(f: Formula, assignments: np.ndarray) -> np.ndarray:
    """Vectorized satisfaction of ``f`` for every row of the matrix."""
    from .formula import And, Const, Lit, Not

    def walk(node) -> np.ndarray:
        if isinstance(node, Lit):
            col = assignments[:, node.var]
            return col if node.positive else ~col
        if isinstance(node, Not):
            return ~walk(node.child)
        if isinstance(node, Const):
            return np.full(assignments.shape[0], node.value, dtype=bool)
        acc = walk(node.children[0]) if node.children else None
        if acc is None:
            return np.full(assignments.shape[0], isinstance(node, And),
                           dtype=bool)
        acc = acc.copy()
        for ch in node.children[1:]:
            if isinstance(node, And):
                acc &= walk(ch)
            else:
                acc |= walk(ch)
        return acc

    return walk(f.root)


def _sat_mask(target: Formula | Circuit, assignments: np.ndarray) -> np.ndarray:
    if isinstance(target, Circuit):
        return target.evaluate_batch(assignments)
    return formula_sat_mask(target, assignments)


def brute_model_count(target: Formula | Circuit) -> int:
    """Count satisfying assignments by full enumeration."""
    assignments = assignment_matrix(target.var_count)
    return int(np.count_nonzero(_sat_mask(target, assignments)))


def brute_models(target: Formula | Circuit) -> list[tuple[bool, ...]]:
    assignments = assignment_matrix(target.var_count)
    mask = _sat_mask(target, assignments)
    return [tuple(assignments[i]) for i in np.flatnonzero(mask)]


def brute_log_wmc(target: Formula | Circuit, log_pos, log_neg) -> float:
    """log sum over satisfying assignments of the product of literal weights."""
    log_pos = np.asarray(log_pos, dtype=float)
    log_neg = np.asarray(log_neg, dtype=float)
    assignments = assignment_matrix(target.var_count)
    mask = _sat_mask(target, assignments)
    if not np.any(mask):
        return float("-inf")
    sat = assignments[mask]
    v = target.var_count
    logw = np.where(sat, log_pos[:v][None, :], log_neg[:v][None, :]).sum(axis=1)
    m = logw.max()
    if m == float("-inf"):
        return float("-inf")
    return float(m + np.log(np.exp(logw - m).sum()))


def sequence_space(space: CategoricalSpace) -> Iterator[tuple[int, ...]]:
    return itertools.product(range(space.categories), repeat=space.steps)


def brute_neighborhood_prob(target: Formula | Circuit,
                            log_cond: np.ndarray,
                            space: CategoricalSpace) -> float:
    """Probability mass the table's literal weights put on the satisfying
    Boolean assignments: positive indicator (i, c) weighs exp(L[i][c]),
    negative weighs its complement. Computed by full enumeration.
    """
    n, k = log_cond.shape
    if (n, k) != (space.steps, space.categories):
        raise ValueError("table shape disagrees with space")
    log_pos = log_cond.reshape(-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_neg = np.log1p(-np.exp(log_pos))
    log_neg = np.where(log_pos == 0.0, float("-inf"), log_neg)
    return math.exp(brute_log_wmc(target, log_pos, log_neg))


def brute_entropy_bits(log_cond: np.ndarray) -> float:
    """Entropy of the product distribution by enumerating every sequence."""
    n, k = log_cond.shape
    total = 0.0
    for seq in itertools.product(range(k), repeat=n):
        lp = sum(log_cond[i][c] for i, c in enumerate(seq))
        p = math.exp(lp)
        if p > 0.0:
            total -= p * (lp / math.log(2.0))
    return total


def brute_kl_bits(log_cond: np.ndarray, model) -> float:
    """KL(table-product || model) in bits over the full sequence space."""
    n, k = log_cond.shape
    total = 0.0
    for seq in itertools.product(range(k), repeat=n):
        lq = sum(log_cond[i][c] for i, c in enumerate(seq))
        q = math.exp(lq)
        if q == 0.0:
            continue
        lp = model.log_joint(seq)
        if lp == float("-inf"):
            return math.inf
        total += q * (lq - lp) / math.log(2.0)
    return total


def brute_model_entropy_bits(model) -> float:
    space = model.space
    total = 0.0
    for seq in sequence_space(space):
        lp = model.log_joint(seq)
        p = math.exp(lp)
        if p > 0.0:
            total -= p * (lp / math.log(2.0))
    return total
