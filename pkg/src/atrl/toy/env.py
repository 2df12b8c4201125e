"""Desk-scale verifiable environment: read the brightest slot.

A scene is V visual slots each holding one symbol from a small alphabet.
The verifiable answer is the symbol sitting at the highest-valued slot
(ties resolve to the lowest slot index, which is value-identical anyway).
The answer is recoverable only from the slots, so a policy must ground its
decision in visual attention; filler tokens exist in the vocabulary purely
so sequences contain genuinely low-connectivity positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SyntheticScene:
    slots: tuple[int, ...]
    truth: int

    @property
    def num_slots(self) -> int:
        return len(self.slots)


def gen_scene(
    seed: int | np.random.Generator,
    num_slots: int = 8,
    alphabet: int = 10,
) -> SyntheticScene:
    """Draw slot symbols i.i.d. uniform over the alphabet.

    Truth is the maximum symbol; np.argmax picks the lowest slot index on
    ties, which is value-identical anyway.
    """
    if num_slots < 1 or alphabet < 2:
        raise ValueError("need num_slots >= 1 and alphabet >= 2")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    symbols = rng.integers(0, alphabet, size=num_slots)
    truth = int(symbols[int(np.argmax(symbols))])
    return SyntheticScene(slots=tuple(int(s) for s in symbols), truth=truth)


def verify(answer: int | None, scene: SyntheticScene) -> float:
    """Binary verifiable reward: +1 for the exact answer, -1 otherwise."""
    return 1.0 if answer == scene.truth else -1.0
