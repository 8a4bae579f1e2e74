"""Fidelity diagnostics for the local product approximation: its entropy,
the model's exact entropy, and the KL divergence between the two. This is
the one module that reports in bits.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .pseudo import ConditionalTable

LOG2 = math.log(2.0)


class FidelityError(Exception):
    pass


@dataclass(frozen=True)
class FidelityReport:
    sample_id: int
    entropy_approx_bits: float
    kl_bits: float
    per_step_entropy_bits: tuple[float, ...]
    entropy_model_bits: float | None = None
    kl_infinite: bool = False

    def __post_init__(self):
        if self.entropy_approx_bits < 0:
            raise FidelityError("entropy must be non-negative")
        if not self.kl_infinite and self.kl_bits < -1e-9:
            raise FidelityError("KL fell below the numerical slack")


def _row_entropy_bits(log_row: np.ndarray) -> float:
    h = 0.0
    for x in log_row:
        p = math.exp(x)
        if p > 0.0:
            h -= p * (x / LOG2)
    return h


def entropy_product(t: ConditionalTable) -> float:
    """Exact entropy, in bits, of the product distribution the table
    defines: the per-row entropies add up.
    """
    t.validate_normalized()
    return float(sum(_row_entropy_bits(t.log_cond[i]) for i in range(t.steps)))


def per_step_entropies(t: ConditionalTable) -> tuple[float, ...]:
    t.validate_normalized()
    return tuple(_row_entropy_bits(t.log_cond[i]) for i in range(t.steps))


def entropy_model_exact(model) -> float:
    """Exact model entropy in bits by enumerating the sequence space."""
    space = model.space
    if space.categories ** space.steps > 1 << 20:
        raise FidelityError("sequence space too large for exact entropy")
    total = 0.0
    for seq in itertools.product(range(space.categories), repeat=space.steps):
        lp = model.log_joint(seq)
        p = math.exp(lp)
        if p > 0.0:
            total -= p * (lp / LOG2)
    return total


def kl_local(t: ConditionalTable, model) -> tuple[float, bool]:
    """KL(approximation || model) in bits over the full sequence space.

    Returns (kl_bits, infinite); infinite marks a support violation (the
    approximation puts mass where the model has none).
    """
    t.validate_normalized()
    space = model.space
    if (t.steps, t.categories) != (space.steps, space.categories):
        raise FidelityError("table shape disagrees with the model space")
    if space.categories ** space.steps > 1 << 20:
        raise FidelityError("sequence space too large for exact KL")
    total = 0.0
    for seq in itertools.product(range(space.categories), repeat=space.steps):
        lq = sum(float(t.log_cond[i][c]) for i, c in enumerate(seq))
        q = math.exp(lq)
        if q == 0.0:
            continue
        lp = model.log_joint(seq)
        if lp == float("-inf"):
            return math.inf, True
        total += q * (lq - lp) / LOG2
    return total, False


def fidelity_report(sample_id: int, t: ConditionalTable, model,
                    include_model_entropy: bool = True) -> FidelityReport:
    kl, infinite = kl_local(t, model)
    return FidelityReport(
        sample_id=sample_id,
        entropy_approx_bits=entropy_product(t),
        kl_bits=kl,
        per_step_entropy_bits=per_step_entropies(t),
        entropy_model_bits=entropy_model_exact(model)
        if include_model_entropy else None,
        kl_infinite=infinite,
    )
