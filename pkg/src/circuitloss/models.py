"""Reference sequence models and a small trainer.

Both models expose exact log-joints via the chain rule and exact ancestral
sampling. MarkovARModel conditions each position on a truncated window of
previous categories via a per-(position, context) logit table; window
n-1 recovers the full tabular autoregressive model. No neural network:
everything here has analytic gradients and enumerable state, which is what
the verification suite needs.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .circuit import Circuit
from .formula import Assignment, CategoricalSpace, Formula, evaluate
from .pseudo import PslResult, psl_loss_for_samples
from .wmc import WeightMap, grad_log_wmc


class ModelError(Exception):
    pass


class TrainingError(Exception):
    pass


class SequenceModel(Protocol):
    space: CategoricalSpace

    def log_joint(self, y) -> float: ...

    def sample(self, rng: np.random.Generator) -> Assignment: ...


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max()
    with np.errstate(invalid="ignore"):
        z = m + math.log(np.exp(logits - m).sum())
        return logits - z


def _categories(y, space: CategoricalSpace) -> tuple[int, ...]:
    if isinstance(y, Assignment):
        if y.categories is None:
            raise ModelError("assignment lacks a categorical view")
        cats = y.categories
    else:
        cats = tuple(int(c) for c in y)
    if len(cats) != space.steps:
        raise ModelError(f"sequence length {len(cats)} != {space.steps} steps")
    for c in cats:
        if not (0 <= c < space.categories):
            raise ModelError(f"category {c} out of range")
    return cats


def _draw(rng: np.random.Generator, log_probs: np.ndarray) -> int:
    """Inverse-CDF draw, deterministic given the generator state."""
    u = rng.random()
    acc = 0.0
    probs = np.exp(log_probs)
    for c, p in enumerate(probs):
        acc += p
        if u < acc:
            return c
    return len(probs) - 1


class FactorizedModel:
    """Independent per-step categoricals: softmax of one logit row per step."""

    def __init__(self, space: CategoricalSpace, logits: np.ndarray):
        logits = np.asarray(logits, dtype=float)
        if logits.shape != (space.steps, space.categories):
            raise ModelError(
                f"logits must be shaped ({space.steps}, {space.categories})")
        self.space = space
        self.logits = logits

    @classmethod
    def uniform(cls, space: CategoricalSpace) -> "FactorizedModel":
        return cls(space, np.zeros((space.steps, space.categories)))

    def step_log_probs(self, i: int) -> np.ndarray:
        return _log_softmax(self.logits[i])

    def marginals(self) -> np.ndarray:
        return np.vstack([np.exp(self.step_log_probs(i))
                          for i in range(self.space.steps)])

    def log_joint(self, y) -> float:
        cats = _categories(y, self.space)
        return float(sum(self.step_log_probs(i)[c]
                         for i, c in enumerate(cats)))

    def sample(self, rng: np.random.Generator) -> Assignment:
        cats = tuple(_draw(rng, self.step_log_probs(i))
                     for i in range(self.space.steps))
        return self.space.assignment(cats)

    def sample_with_logprob(self, rng) -> tuple[Assignment, float]:
        cats = []
        lp = 0.0
        for i in range(self.space.steps):
            row = self.step_log_probs(i)
            c = _draw(rng, row)
            cats.append(c)
            lp += float(row[c])
        return self.space.assignment(tuple(cats)), lp

    # trainer plumbing: the logit table rows, flattened in slot order
    def slot_count(self) -> int:
        return self.space.steps

    def slot_for(self, i: int, cats: Sequence[int]) -> int:
        return i

    def slot_logits(self, slot: int) -> np.ndarray:
        return self.logits[slot]

    def copy(self) -> "FactorizedModel":
        return FactorizedModel(self.space, self.logits.copy())


class MarkovARModel:
    """Autoregressive model over a truncated context window.

    Position i conditions on the last min(window, i) categories; the logit
    table has one row per (position, context), contexts in lexicographic
    order. window = steps - 1 is the full tabular chain-rule model.
    """

    def __init__(self, space: CategoricalSpace, window: int,
                 logits: Sequence[np.ndarray]):
        if window < 0:
            raise ModelError("window must be >= 0")
        self.space = space
        self.window = window
        self.logits = [np.asarray(t, dtype=float) for t in logits]
        k = space.categories
        if len(self.logits) != space.steps:
            raise ModelError("need one logit table per step")
        for i, t in enumerate(self.logits):
            if t.shape != (k ** min(window, i), k):
                raise ModelError(
                    f"step {i}: table shape {t.shape} != "
                    f"({k ** min(window, i)}, {k})")

    @classmethod
    def uniform(cls, space: CategoricalSpace, window: int) -> "MarkovARModel":
        k = space.categories
        return cls(space, window,
                   [np.zeros((k ** min(window, i), k))
                    for i in range(space.steps)])

    def _context_index(self, cats: Sequence[int], i: int) -> int:
        w = min(self.window, i)
        idx = 0
        for c in cats[i - w:i]:
            idx = idx * self.space.categories + c
        return idx

    def step_log_probs(self, i: int, cats: Sequence[int]) -> np.ndarray:
        return _log_softmax(self.logits[i][self._context_index(cats, i)])

    def log_joint(self, y) -> float:
        cats = _categories(y, self.space)
        return float(sum(self.step_log_probs(i, cats)[cats[i]]
                         for i in range(self.space.steps)))

    def sample(self, rng: np.random.Generator) -> Assignment:
        cats: list[int] = []
        for i in range(self.space.steps):
            cats.append(_draw(rng, self.step_log_probs(i, cats)))
        return self.space.assignment(tuple(cats))

    def sample_with_logprob(self, rng) -> tuple[Assignment, float]:
        cats: list[int] = []
        lp = 0.0
        for i in range(self.space.steps):
            row = self.step_log_probs(i, cats)
            c = _draw(rng, row)
            cats.append(c)
            lp += float(row[c])
        return self.space.assignment(tuple(cats)), lp

    def slot_count(self) -> int:
        return sum(t.shape[0] for t in self.logits)

    def slot_for(self, i: int, cats: Sequence[int]) -> int:
        base = sum(self.logits[j].shape[0] for j in range(i))
        return base + self._context_index(cats, i)

    def slot_logits(self, slot: int) -> np.ndarray:
        for t in self.logits:
            if slot < t.shape[0]:
                return t[slot]
            slot -= t.shape[0]
        raise ModelError("slot out of range")

    def copy(self) -> "MarkovARModel":
        return MarkovARModel(self.space, self.window,
                             [t.copy() for t in self.logits])


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------
# Line 1: `model <factorized|markov> n=<n> k=<k> m=<m>`; then one logit row
# per conditional slot in (position, context) lexicographic order.

def write_model(model) -> str:
    if isinstance(model, FactorizedModel):
        head = (f"model factorized n={model.space.steps} "
                f"k={model.space.categories} m=0")
        rows = [model.logits[i] for i in range(model.space.steps)]
    elif isinstance(model, MarkovARModel):
        head = (f"model markov n={model.space.steps} "
                f"k={model.space.categories} m={model.window}")
        rows = [t[j] for t in model.logits for j in range(t.shape[0])]
    else:
        raise ModelError(f"cannot serialize {type(model).__name__}")
    lines = [head]
    for row in rows:
        lines.append(" ".join(repr(float(x)) for x in row))
    return "\n".join(lines) + "\n"


def read_model(text: str):
    lines = [l for l in text.splitlines() if l.strip()]
    if not lines:
        raise ModelError("empty model file")
    head = lines[0].split()
    if len(head) != 5 or head[0] != "model":
        raise ModelError(f"malformed model header {lines[0]!r}")
    kind = head[1]
    try:
        fields = {p.split("=")[0]: int(p.split("=")[1]) for p in head[2:]}
        n, k, m = fields["n"], fields["k"], fields["m"]
    except (ValueError, KeyError, IndexError):
        raise ModelError(f"malformed model header {lines[0]!r}") from None
    space = CategoricalSpace(n, k)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            row = np.array([float(x) for x in line.split()])
        except ValueError:
            raise ModelError(f"model line {lineno}: bad logit row") from None
        if row.shape != (k,):
            raise ModelError(f"model line {lineno}: expected {k} logits")
        rows.append(row)
    if kind == "factorized":
        if len(rows) != n:
            raise ModelError(f"expected {n} logit rows, found {len(rows)}")
        return FactorizedModel(space, np.vstack(rows))
    if kind == "markov":
        tables = []
        at = 0
        for i in range(n):
            size = k ** min(m, i)
            if at + size > len(rows):
                raise ModelError("model file truncated")
            tables.append(np.vstack(rows[at:at + size]))
            at += size
        if at != len(rows):
            raise ModelError(f"expected {at} logit rows, found {len(rows)}")
        return MarkovARModel(space, m, tables)
    raise ModelError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# Gradients shared by the trainer and the verification suites
# ---------------------------------------------------------------------------

def _accumulate_logit_grad(model, cats: tuple[int, ...], weight: float,
                           grads: list[np.ndarray]) -> None:
    """Add weight * d log_joint(cats) / d logits into per-slot grads."""
    for i in range(model.space.steps):
        slot = model.slot_for(i, cats)
        row = model.slot_logits(slot)
        soft = np.exp(_log_softmax(row))
        g = -weight * soft
        g[cats[i]] += weight
        grads[slot] += g


def _zero_slot_grads(model) -> list[np.ndarray]:
    return [np.zeros(model.space.categories)
            for _ in range(model.slot_count())]


def cross_entropy_and_grad(model, dataset) -> tuple[float, list[np.ndarray]]:
    """Mean over items of -log p(target_i | target_<i) on non-context
    positions, with the analytic logit gradient.
    """
    grads = _zero_slot_grads(model)
    total = 0.0
    if not dataset:
        return 0.0, grads
    for item in dataset:
        cats = _categories(item.target, model.space)
        for i in range(model.space.steps):
            if item.context_mask[i]:
                continue
            slot = model.slot_for(i, cats)
            row = _log_softmax(model.slot_logits(slot))
            total -= float(row[cats[i]])
            soft = np.exp(row)
            g = soft / len(dataset)
            g[cats[i]] -= 1.0 / len(dataset)
            grads[slot] += g
    return total / len(dataset), grads


def psl_and_grad(circuit: Circuit, model, samples,
                 top_k: int | None = None,
                 minimize: bool = False) -> tuple[PslResult, list[np.ndarray]]:
    """Pseudo-loss for fixed samples plus d loss / d logits, chaining the
    per-table-entry gradient through the log-joints of every perturbed
    sequence (the sampling step stays detached).
    """
    result = psl_loss_for_samples(circuit, model, samples, model.space,
                                  top_k=top_k, minimize=minimize)
    grads = _zero_slot_grads(model)
    for t, g in zip(result.tables, result.grad):
        base = t.sample
        for i in range(t.steps):
            for c in range(t.categories):
                wgt = float(g[i, c])
                if wgt == 0.0:
                    continue
                seq = base if c == base[i] else \
                    base[:i] + (c,) + base[i + 1:]
                _accumulate_logit_grad(model, seq, wgt, grads)
    return result, grads


def semantic_loss_and_grad(circuit: Circuit,
                           model: FactorizedModel) -> tuple[float, list[np.ndarray]]:
    """Semantic loss of the constraint under the model's marginals, with
    the analytic logit gradient (factorized models only).
    """
    space = model.space
    if circuit.var_count != space.var_count:
        raise ModelError("circuit variables disagree with the model space")
    marg = model.marginals()
    w = WeightMap.from_probs(marg.reshape(-1))
    g = grad_log_wmc(circuit, w)
    loss = -g.log_wmc
    grads = _zero_slot_grads(model)
    for i in range(space.steps):
        r = np.zeros(space.categories)
        for c in range(space.categories):
            v = space.var(i, c)
            a = -g.d_pos[v]
            b = -g.d_neg[v]
            r[c] = a
            if b != 0.0:
                p = marg[i, c]
                r[c] -= b * p / (1.0 - p)
        # chain through log-softmax: d w+_c / d logit_d = delta_cd - p_d
        p_row = marg[i]
        grads[i] = r - p_row * r.sum()
    return float(loss), grads


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainExample:
    context_mask: tuple[bool, ...]  # True: position is given, not predicted
    target: tuple[int, ...]


@dataclass(frozen=True)
class TrainConfig:
    step_size: float = 0.5
    steps: int = 500
    psl_weight: float = 0.0
    ce_weight: float = 1.0
    momentum: float = 0.0
    samples: int = 1
    seed: int = 0
    log_every: int = 50
    consistency_samples: int = 200

    def __post_init__(self):
        if self.step_size <= 0:
            raise TrainingError("step_size must be positive")
        if self.psl_weight < 0 or self.ce_weight < 0:
            raise TrainingError("loss weights must be >= 0")


@dataclass
class TrainResult:
    model: object
    metrics: list[dict] = field(default_factory=list)


def exact_constraint_probability(f: Formula | Circuit, model) -> float:
    """Sum of model probabilities of the sequences whose one-hot encodings
    satisfy the constraint; exact by enumeration, so only for small spaces.
    """
    space = model.space
    if space.categories ** space.steps > 1 << 20:
        raise ModelError("space too large for exact enumeration")
    total = 0.0
    for seq in itertools.product(range(space.categories), repeat=space.steps):
        a = space.assignment(seq)
        sat = f.evaluate(a.values) if isinstance(f, Circuit) else evaluate(f, a)
        if sat:
            total += math.exp(model.log_joint(seq))
    return total


def sampled_consistency(f: Formula | Circuit, model, rng,
                        n_samples: int) -> float:
    hits = 0
    for _ in range(n_samples):
        a = model.sample(rng)
        sat = f.evaluate(a.values) if isinstance(f, Circuit) else evaluate(f, a)
        hits += bool(sat)
    return hits / n_samples


def train_toy(model, circuit: Circuit | None, dataset: list[TrainExample],
              cfg: TrainConfig) -> TrainResult:
    """Full-batch gradient descent on ce_weight * CE + psl_weight * PSL.

    Metrics rows record the losses, the exact constraint probability when
    the space is small enough, and a sampled consistency rate. Deterministic
    given cfg.seed.
    """
    model = model.copy()
    if cfg.psl_weight > 0 and circuit is None:
        raise TrainingError("a circuit is required when psl_weight > 0")
    rng = np.random.default_rng(cfg.seed)
    velocity = _zero_slot_grads(model)
    metrics: list[dict] = []
    small_space = (model.space.categories ** model.space.steps) <= (1 << 16)

    for step in range(cfg.steps):
        ce, ce_grads = cross_entropy_and_grad(model, dataset) \
            if cfg.ce_weight > 0 else (0.0, _zero_slot_grads(model))
        psl_loss = 0.0
        psl_grads = _zero_slot_grads(model)
        if cfg.psl_weight > 0:
            samples = [model.sample(rng) for _ in range(cfg.samples)]
            result, psl_grads = psl_and_grad(circuit, model, samples)
            psl_loss = result.loss if not result.infinite else float("inf")

        total_grads = []
        for gc, gp in zip(ce_grads, psl_grads):
            g = cfg.ce_weight * gc + cfg.psl_weight * gp
            if not np.all(np.isfinite(g)):
                raise TrainingError(
                    f"non-finite gradient at step {step} "
                    f"(ce={ce}, psl={psl_loss})")
            total_grads.append(g)

        for slot, g in enumerate(total_grads):
            velocity[slot] = cfg.momentum * velocity[slot] - cfg.step_size * g
            model.slot_logits(slot)[...] += velocity[slot]

        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            row = {"step": step, "ce": ce, "psl": psl_loss,
                   "loss": cfg.ce_weight * ce + cfg.psl_weight * psl_loss}
            if circuit is not None and small_space:
                row["constraint_probability"] = \
                    exact_constraint_probability(circuit, model)
            if circuit is not None:
                eval_rng = np.random.default_rng(cfg.seed + 1_000_003 + step)
                row["consistency_rate"] = sampled_consistency(
                    circuit, model, eval_rng, cfg.consistency_samples)
            metrics.append(row)
    return TrainResult(model, metrics)
