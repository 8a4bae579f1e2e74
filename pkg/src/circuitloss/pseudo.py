"""The local product approximation and its loss.

Around a model sample y we build the n x k table of conditionals
log p(y_i = c | y_-i) by evaluating the model on every sequence one
substitution away from y, normalizing each position's row. Feeding those
conditionals to a constraint circuit's leaves (positive literal: the
conditional; negative literal: its stable log-complement) and evaluating
the circuit gives the constraint's probability under the approximation;
its negative log over a sample mean is the loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .circuit import Circuit
from .formula import Assignment, CategoricalSpace
from .wmc import NEG_INF, WeightMap, grad_log_wmc, log1mexp, log_wmc, \
    logsumexp


class PseudoError(Exception):
    pass


@dataclass(frozen=True)
class ConditionalTable:
    """Per-position conditionals around an anchoring sample.

    log_cond[i][c] = log p(y_i = c | y_-i); each row log-sum-exps to 0.
    log_joints holds the perturbed-joint log-probabilities the row was
    normalized from.
    """

    log_cond: np.ndarray
    sample: tuple[int, ...]
    log_joints: np.ndarray

    def __post_init__(self):
        if self.log_cond.shape != self.log_joints.shape or \
                self.log_cond.ndim != 2:
            raise PseudoError("table matrices must be equal-shape n x k")
        n, k = self.log_cond.shape
        if len(self.sample) != n:
            raise PseudoError("anchoring sample length disagrees with table")
        if any(not (0 <= c < k) for c in self.sample):
            raise PseudoError("anchoring sample has out-of-range category")

    @property
    def steps(self) -> int:
        return self.log_cond.shape[0]

    @property
    def categories(self) -> int:
        return self.log_cond.shape[1]

    def validate_normalized(self, tol: float = 1e-9) -> None:
        for i in range(self.steps):
            if abs(logsumexp(list(self.log_cond[i]))) > tol:
                raise PseudoError(f"row {i} is not normalized")

    def to_text(self) -> str:
        """One row per step, k decimal probabilities."""
        lines = []
        for row in self.log_cond:
            lines.append(" ".join(repr(float(math.exp(x))) for x in row))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class PslConfig:
    samples: int = 1
    top_k: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.samples < 1:
            raise PseudoError("samples must be >= 1")
        if self.top_k is not None and self.top_k < 1:
            raise PseudoError("top_k must be >= 1")


def expand_neighborhood(y: Assignment | tuple[int, ...],
                        space: CategoricalSpace) -> list[list[Assignment]]:
    """All n*k sequences one substitution away from y, as an n x k grid;
    entry (i, c) is y with position i set to c, so entry (i, y_i) is y.
    """
    cats = _categories_of(y, space)
    rows: list[list[Assignment]] = []
    for i in range(space.steps):
        row = []
        for c in range(space.categories):
            if c == cats[i]:
                row.append(space.assignment(cats))
            else:
                row.append(space.assignment(cats[:i] + (c,) + cats[i + 1:]))
        rows.append(row)
    return rows


def _categories_of(y, space: CategoricalSpace) -> tuple[int, ...]:
    if isinstance(y, Assignment):
        if y.categories is None:
            raise PseudoError("assignment lacks a categorical view")
        cats = y.categories
    else:
        cats = tuple(y)
    if len(cats) != space.steps:
        raise PseudoError(
            f"sequence length {len(cats)} disagrees with {space.steps} steps")
    for i, c in enumerate(cats):
        if not (0 <= c < space.categories):
            raise PseudoError(f"category {c} out of range at position {i}")
    return cats


def conditionals_from_joints(log_joints, sample=None) -> ConditionalTable:
    """Normalize each row of perturbed-joint log-probabilities into
    conditionals: L[i][c] = joints[i][c] - logsumexp_c'(joints[i][c']).
    """
    joints = np.asarray(log_joints, dtype=float)
    if joints.ndim != 2:
        raise PseudoError("log_joints must be an n x k matrix")
    if np.any(np.isnan(joints)) or np.any(joints == np.inf):
        raise PseudoError("log_joints must be finite or -inf")
    n, k = joints.shape
    log_cond = np.empty_like(joints)
    for i in range(n):
        z = logsumexp(list(joints[i]))
        if z == NEG_INF:
            raise PseudoError(f"row {i} is entirely -inf")
        log_cond[i] = joints[i] - z
    if sample is None:
        sample = tuple(int(np.argmax(joints[i])) for i in range(n))
    return ConditionalTable(log_cond, tuple(sample), joints)


def table_from_model(model, y, space: CategoricalSpace) -> ConditionalTable:
    """Build the conditional table around y by scoring the neighborhood."""
    cats = _categories_of(y, space)
    joints = np.empty((space.steps, space.categories))
    for i, row in enumerate(expand_neighborhood(cats, space)):
        for c, neighbor in enumerate(row):
            joints[i, c] = model.log_joint(neighbor)
    return conditionals_from_joints(joints, sample=cats)


def pseudo_loglik(model, y, space: CategoricalSpace | None = None) -> float:
    """Sum of the sample's own conditionals, the likelihood surrogate."""
    if space is None:
        space = model.space
    t = table_from_model(model, y, space)
    return float(sum(t.log_cond[i][c] for i, c in enumerate(t.sample)))


def restrict_top_k(t: ConditionalTable, k_top: int) -> ConditionalTable:
    """Keep each row's k_top highest-mass categories plus the sampled one,
    renormalize the kept entries, and zero out the rest. A k_top covering
    every category returns the table unchanged, bit for bit.
    """
    n, k = t.log_cond.shape
    if k_top > k:
        raise PseudoError(f"top_k {k_top} exceeds {k} categories")
    if k_top == k:
        return t
    log_cond = np.full_like(t.log_cond, NEG_INF)
    for i in range(n):
        order = sorted(range(k), key=lambda c: (-t.log_cond[i][c], c))
        keep = set(order[:k_top])
        keep.add(t.sample[i])
        z = logsumexp([float(t.log_cond[i][c]) for c in sorted(keep)])
        for c in keep:
            log_cond[i][c] = t.log_cond[i][c] - z
    return ConditionalTable(log_cond, t.sample, t.log_joints)


def weights_from_table(t: ConditionalTable,
                       space: CategoricalSpace) -> WeightMap:
    """Leaf weights over the one-hot indicators: positive literal (i, c)
    carries L[i][c], the negative literal its stable log-complement.
    """
    if (t.steps, t.categories) != (space.steps, space.categories):
        raise PseudoError("table shape disagrees with space")
    log_pos = np.empty(space.var_count)
    log_neg = np.empty(space.var_count)
    for i in range(t.steps):
        for c in range(t.categories):
            v = space.var(i, c)
            x = min(float(t.log_cond[i][c]), 0.0)
            log_pos[v] = x
            log_neg[v] = log1mexp(x)
    return WeightMap(log_pos, log_neg, probabilistic=True)


@dataclass(frozen=True)
class PslResult:
    loss: float
    grad: list[np.ndarray]          # d loss / d log_joints, per sample
    tables: list[ConditionalTable]
    per_sample_log_wmc: list[float]
    infinite: bool


def psl_loss_for_samples(circuit: Circuit, model, samples,
                         space: CategoricalSpace,
                         top_k: int | None = None,
                         minimize: bool = False) -> PslResult:
    """Loss and gradient for an explicit list of anchoring samples.

    The loss is -log of the mean constraint probability across samples
    (the probabilities sit inside a single logarithm). The gradient flows
    through the conditional tables only; it is returned per table entry,
    chained through the row normalization, which makes it exactly
    d loss / d perturbed-joint.
    """
    if circuit.var_count != space.var_count:
        raise PseudoError(
            f"circuit has {circuit.var_count} variables, space needs "
            f"{space.var_count}")
    tables = []
    for y in samples:
        t = table_from_model(model, y, space)
        if top_k is not None:
            t = restrict_top_k(t, top_k)
        tables.append(t)

    log_wmcs = []
    weight_maps = []
    for t in tables:
        w = weights_from_table(t, space)
        weight_maps.append(w)
        log_wmcs.append(log_wmc(circuit, w))

    s = len(tables)
    log_mean = logsumexp(log_wmcs) - math.log(s)
    infinite = log_mean == NEG_INF
    # + 0.0 keeps -0.0 out of serialized output
    if minimize:
        loss = -log1mexp(min(log_mean, 0.0)) + 0.0
        infinite = log_mean >= 0.0
    else:
        loss = math.inf if infinite else -log_mean + 0.0

    grads = []
    for t, w, lw in zip(tables, weight_maps, log_wmcs):
        if infinite or lw == NEG_INF:
            grads.append(np.zeros_like(t.log_cond))
            continue
        coeff = -math.exp(lw - logsumexp(log_wmcs))
        if minimize:
            # d(-log(1 - p))/d log p = p / (1 - p), flipping the sign
            coeff *= -math.exp(log_mean - log1mexp(log_mean))
        g = grad_log_wmc(circuit, w)
        raw = np.zeros_like(t.log_cond)
        for i in range(t.steps):
            for c in range(t.categories):
                v = space.var(i, c)
                term = coeff * g.d_pos[v]
                if g.d_neg[v] != 0.0:
                    x = float(t.log_cond[i][c])
                    # d log(1 - e^x) / dx = -e^(x - log(1 - e^x))
                    term += coeff * g.d_neg[v] * (-math.exp(x - log1mexp(x)))
                raw[i, c] = term
        probs = np.exp(t.log_cond)
        centered = raw - probs * raw.sum(axis=1, keepdims=True)
        grads.append(centered)
    return PslResult(loss, grads, tables, [float(x) for x in log_wmcs],
                     infinite)


def pseudo_semantic_loss(circuit: Circuit, model, space: CategoricalSpace,
                         cfg: PslConfig, minimize: bool = False) -> PslResult:
    """Draw cfg.samples ancestral samples from the model and evaluate the
    loss around them. Deterministic given the seed.
    """
    rng = np.random.default_rng(cfg.seed)
    samples = [model.sample(rng) for _ in range(cfg.samples)]
    return psl_loss_for_samples(circuit, model, samples, space,
                                top_k=cfg.top_k, minimize=minimize)
