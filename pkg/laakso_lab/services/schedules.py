"""
Schedule Service
Block selection for slowly decaying sequences and η / α schedule generators.
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

import numpy as np

from laakso_lab.core.config import settings
from laakso_lab.core.errors import ParameterError, ScheduleError

logger = logging.getLogger(__name__)


@dataclass
class ScheduleReport:
    """Greedy packing of α into blocks, one block per target group."""

    p: float
    sigma: float
    blocks: List[np.ndarray]
    block_sums: List[float]
    power_sums: List[float]
    targets: List[Tuple[int, int, float]]
    tail_infimum: float
    prefix_length: int
    subsequence: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def total_sum(self) -> float:
        return float(sum(self.block_sums))

    @property
    def total_power(self) -> float:
        return float(sum(self.power_sums))

    @property
    def subsequence_power(self) -> float:
        return float(sum(self.power_sums_raw))

    @property
    def power_sums_raw(self) -> List[float]:
        return [ps ** (1 / self.sigma) for ps in self.power_sums]

    def selected_sum(self, upto: int, alpha: np.ndarray) -> float:
        """Σ α_i over selected indices i ≤ upto (1-based)."""
        chosen = self.subsequence[self.subsequence <= upto]
        return float(alpha[chosen - 1].sum())

    def diverging(self, alpha: np.ndarray) -> bool:
        """Selected mass on the last three quarters of the prefix is at least 1/2."""
        N = self.prefix_length
        return self.selected_sum(N, alpha) - self.selected_sum(N // 4, alpha) >= 0.5


def _validate_alpha(alpha: Sequence[float]) -> np.ndarray:
    values = np.asarray(alpha, dtype=float)
    if values.ndim != 1 or len(values) < 4:
        raise ParameterError("α needs at least 4 entries", field="alpha")
    if not np.all(np.isfinite(values)) or np.any(values <= 0):
        raise ParameterError("α must be positive and finite", field="alpha")
    return values


def schedule_blocks(
    alpha: Sequence[float],
    p: float,
    sigma: float,
    tail_ratio: Optional[float] = None,
) -> ScheduleReport:
    """Pack a finite prefix of α into disjoint blocks with Σ_block α ≈ 1 per group
    while keeping Σ_m (Σ_{i∈I_m} α_i^p)^σ summable.

    Group g has K_g = ⌈2^{g/(σ(p−1))}⌉ targets of size 1/K_g; each target is filled by
    a forward pointer taking every α_i that still fits until half the target is reached.
    """
    values = _validate_alpha(alpha)
    if p <= 1:
        raise ParameterError(f"p = {p} must exceed 1", field="p")
    if not 0 < sigma <= 1:
        raise ParameterError(f"σ = {sigma} outside (0, 1]", field="sigma")
    ratio = settings.SCHEDULE_TAIL_RATIO if tail_ratio is None else tail_ratio

    tail = float(values[len(values) // 2 :].min())
    if tail / float(values.max()) >= ratio:
        raise ScheduleError(
            "Tail infimum does not decay on the given prefix",
            details={"tail_infimum": tail, "max": float(values.max()), "ratio": ratio},
        )

    blocks: List[np.ndarray] = []
    block_sums: List[float] = []
    power_sums: List[float] = []
    targets: List[Tuple[int, int, float]] = []
    pointer = 0
    group = 0
    exhausted = False
    while not exhausted:
        group += 1
        count = math.ceil(2 ** (group / (sigma * (p - 1))))
        size = 1.0 / count
        chosen: List[int] = []
        for _ in range(count):
            partial = 0.0
            while partial < size / 2 and pointer < len(values):
                if values[pointer] <= size - partial:
                    partial += values[pointer]
                    chosen.append(pointer)
                pointer += 1
            if partial < size / 2:
                exhausted = True
                break
            targets.append((group, count, size))
        if chosen:
            block = np.array(chosen, dtype=np.int64)
            blocks.append(block + 1)
            block_sums.append(float(values[block].sum()))
            power_sums.append(float((values[block] ** p).sum() ** sigma))

    subsequence = np.concatenate(blocks) if blocks else np.zeros(0, dtype=np.int64)
    logger.info(f"Scheduled {len(blocks)} blocks over a prefix of {len(values)} terms")
    return ScheduleReport(
        p=p,
        sigma=sigma,
        blocks=blocks,
        block_sums=block_sums,
        power_sums=power_sums,
        targets=targets,
        tail_infimum=tail,
        prefix_length=len(values),
        subsequence=subsequence,
    )


# ── Sequence generators ─────────────────────────────────────────────────────


def dyadic(x: float, bits: Optional[int] = None) -> Fraction:
    """Round x in (0, 1] to a dyadic rational, keeping it positive."""
    bits = settings.ETA_DENOMINATOR_BITS if bits is None else bits
    scale = 2**bits
    return Fraction(min(scale, max(1, round(x * scale))), scale)


def eta_power(levels: int, c: float = 1.0, exponent: float = 1.0) -> Tuple[Fraction, ...]:
    """η_i = min(1, c·i^{-e})."""
    return tuple(dyadic(min(1.0, c * i ** (-exponent))) for i in range(1, levels + 1))


def eta_geometric(levels: int, ratio: float = 0.5) -> Tuple[Fraction, ...]:
    """η_i = r^i."""
    if not 0 < ratio <= 1:
        raise ParameterError(f"ratio {ratio} outside (0, 1]", field="ratio")
    return tuple(dyadic(ratio**i) for i in range(1, levels + 1))


def eta_block(levels: int, blocks: Sequence[Sequence[int]], value: float) -> Tuple[Fraction, ...]:
    """η_i = value on the union of the blocks, 1 elsewhere."""
    marked = {int(i) for block in blocks for i in block}
    small = dyadic(value)
    return tuple(small if i in marked else Fraction(1) for i in range(1, levels + 1))


def eta_sum_power(eta: Sequence[Fraction], s: float) -> float:
    """Σ η_i^s, the diagnostic separating the two regimes of shortcut spaces."""
    return float(sum(float(x) ** s for x in eta))


def alpha_sequence(kind: str, length: int, exponent: float = 1.0, ratio: float = 0.5, value: float = 1.0) -> np.ndarray:
    """α_i for i = 1..length: "power" i^{-e}, "geometric" r^i, "constant" value."""
    i = np.arange(1, length + 1, dtype=float)
    if kind == "power":
        return i ** (-exponent)
    if kind == "geometric":
        return ratio**i
    if kind == "constant":
        return np.full(length, float(value))
    raise ParameterError(f"Unknown α schedule {kind!r}", field="kind")
