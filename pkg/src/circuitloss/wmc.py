"""Log-space weighted model counting over circuits, with exact gradients.

One upward pass computes log WMC (sums at AND nodes, stable log-sum-exp at
OR nodes); a second downward pass computes the partial derivative of the log
WMC with respect to every literal's log-weight. Natural log throughout;
-inf encodes exact zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .circuit import AndNode, Circuit, LeafNode, OrNode, TrueNode, \
    require_sdd_properties

NEG_INF = float("-inf")


class WmcError(Exception):
    pass


def logsumexp(values) -> float:
    """Stable log(sum(exp(values))); -inf in, -inf out, never NaN."""
    m = max(values, default=NEG_INF)
    if m == NEG_INF:
        return NEG_INF
    acc = 0.0
    for v in values:
        acc += math.exp(v - m)
    return m + math.log(acc)


def log1mexp(x: float) -> float:
    """Stable log(1 - exp(x)) for x <= 0."""
    if x > 0.0:
        if x < 1e-9:  # normalization jitter
            x = 0.0
        else:
            raise WmcError(f"log1mexp needs x <= 0, got {x}")
    if x == 0.0:
        return NEG_INF
    if x == NEG_INF:
        return 0.0
    if x < -math.log(2.0):
        return math.log1p(-math.exp(x))
    return math.log(-math.expm1(x))


@dataclass(frozen=True)
class WeightMap:
    """Per-variable log-weights of the positive and negative literal."""

    log_pos: np.ndarray
    log_neg: np.ndarray
    probabilistic: bool = False

    def __post_init__(self):
        lp, ln = np.asarray(self.log_pos), np.asarray(self.log_neg)
        if lp.shape != ln.shape or lp.ndim != 1:
            raise WmcError("weight arrays must be 1-d and equal length")
        for arr in (lp, ln):
            if np.any(np.isnan(arr)) or np.any(arr == np.inf):
                raise WmcError("weights must be finite or -inf")
        if self.probabilistic:
            total = np.exp(lp) + np.exp(ln)
            if np.any(np.abs(total - 1.0) > 1e-12):
                raise WmcError("probabilistic weights must satisfy "
                               "exp(w+) + exp(w-) = 1 within 1e-12")

    @property
    def var_count(self) -> int:
        return len(self.log_pos)

    @classmethod
    def from_probs(cls, probs) -> "WeightMap":
        p = np.asarray(probs, dtype=float)
        if np.any(p < 0.0) or np.any(p > 1.0):
            raise WmcError("probabilities must lie in [0, 1]")
        with np.errstate(divide="ignore"):
            lp = np.log(p)
            ln = np.log1p(-p)
        return cls(lp, ln, probabilistic=True)

    @classmethod
    def unit(cls, var_count: int) -> "WeightMap":
        return cls(np.zeros(var_count), np.zeros(var_count))

    def weight(self, var: int, positive: bool) -> float:
        return float(self.log_pos[var] if positive else self.log_neg[var])


# ---------------------------------------------------------------------------
# Weights file: one line per variable, "<1-based var> <prob_true>"
# ---------------------------------------------------------------------------

def read_weights(text: str, var_count: int) -> WeightMap:
    probs = np.full(var_count, np.nan)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise WmcError(f"weights line {lineno}: expected '<var> <prob>'")
        try:
            var = int(parts[0])
            p = float(parts[1])
        except ValueError:
            raise WmcError(f"weights line {lineno}: bad number") from None
        if not (1 <= var <= var_count):
            raise WmcError(f"weights line {lineno}: variable {var} out of range")
        probs[var - 1] = p
    if np.any(np.isnan(probs)):
        missing = int(np.argmax(np.isnan(probs))) + 1
        raise WmcError(f"weights file missing variable {missing}")
    return WeightMap.from_probs(probs)


def write_weights(w: WeightMap) -> str:
    if not w.probabilistic:
        raise WmcError("only probabilistic weights have a file form")
    return "".join(f"{v + 1} {math.exp(w.log_pos[v])!r}\n"
                   for v in range(w.var_count))


# ---------------------------------------------------------------------------
# Core passes
# ---------------------------------------------------------------------------

def _upward(c: Circuit, w: WeightMap) -> list[float]:
    vals: list[float] = []
    for n in c.nodes:
        if isinstance(n, LeafNode):
            vals.append(w.weight(n.var, n.positive))
        elif isinstance(n, AndNode):
            acc = 0.0
            for ch in n.children:
                acc += vals[ch]
            vals.append(acc)
        elif isinstance(n, OrNode):
            vals.append(logsumexp([vals[ch] for ch in n.children]))
        elif isinstance(n, TrueNode):
            vals.append(0.0)
        else:
            vals.append(NEG_INF)
    if any(math.isnan(v) for v in vals):
        raise WmcError("NaN encountered during circuit evaluation")
    return vals


def log_wmc(c: Circuit, w: WeightMap) -> float:
    """log of the weighted model count: the constraint's log-probability
    when the weights are probabilistic.
    """
    if w.var_count < c.var_count:
        raise WmcError(
            f"weights cover {w.var_count} variables, circuit has {c.var_count}")
    require_sdd_properties(c, "log_wmc")
    return _upward(c, w)[c.root]


def log_wmc_batch(c: Circuit, weight_maps) -> list[float]:
    """Evaluate several weight maps in a fixed, deterministic order."""
    return [log_wmc(c, w) for w in weight_maps]


def semantic_loss(c: Circuit, w: WeightMap) -> float:
    """-log of the constraint probability; +inf when the probability is 0."""
    if not w.probabilistic:
        raise WmcError("semantic loss needs probabilistic weights")
    lw = log_wmc(c, w)
    return math.inf if lw == NEG_INF else -lw


@dataclass(frozen=True)
class WmcGradient:
    """d log WMC / d w(literal), one entry per literal, linear scale."""

    log_wmc: float
    d_pos: np.ndarray
    d_neg: np.ndarray


def grad_log_wmc(c: Circuit, w: WeightMap) -> WmcGradient:
    """One upward and one downward pass. Each literal's log-weight is treated
    as an independent input; literals absent from the circuit get 0.
    """
    if w.var_count < c.var_count:
        raise WmcError(
            f"weights cover {w.var_count} variables, circuit has {c.var_count}")
    require_sdd_properties(c, "grad_log_wmc")
    vals = _upward(c, w)
    total = vals[c.root]
    if total == NEG_INF:
        raise WmcError("gradient undefined: weighted model count is zero")

    ctx = [NEG_INF] * len(c.nodes)
    ctx[c.root] = 0.0
    for i in range(len(c.nodes) - 1, -1, -1):
        n = c.nodes[i]
        if ctx[i] == NEG_INF or not isinstance(n, (AndNode, OrNode)):
            continue
        if isinstance(n, OrNode):
            for ch in n.children:
                ctx[ch] = logsumexp([ctx[ch], ctx[i]])
        else:
            neg_inf_children = [ch for ch in n.children if vals[ch] == NEG_INF]
            for ch in n.children:
                if len(neg_inf_children) == 0:
                    sib = vals[i] - vals[ch]
                elif neg_inf_children == [ch]:
                    sib = 0.0
                    for other in n.children:
                        if other != ch:
                            sib += vals[other]
                else:
                    continue  # two zero children: every context stays zero
                ctx[ch] = logsumexp([ctx[ch], ctx[i] + sib])

    d_pos = np.zeros(c.var_count)
    d_neg = np.zeros(c.var_count)
    for i, n in enumerate(c.nodes):
        if isinstance(n, LeafNode) and ctx[i] != NEG_INF:
            contribution = math.exp(ctx[i] + vals[i] - total)
            if n.positive:
                d_pos[n.var] += contribution
            else:
                d_neg[n.var] += contribution
    return WmcGradient(total, d_pos, d_neg)
