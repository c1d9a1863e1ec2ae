"""Warm-up / Phase GP / Phase BP state machine.

After ``warmup_epochs`` epochs of warm-up, batches run in cycles of ``k``
GP batches followed by ``m`` BP batches. ``m`` grows by ``growth`` at the
end of every post-warm-up epoch until it reaches ``k``; a cycle keeps the
``m`` that was in force when it started.
"""
from __future__ import annotations

from dataclasses import dataclass, field

WARMUP = "warmup"
BP = "bp"
GP = "gp"
TAGS = (WARMUP, BP, GP)


@dataclass
class PhaseState:
    warmup_epochs: int = 3
    m_initial: int = 1
    k: int = 4
    growth: int = 1
    m: int = field(init=False)
    epoch: int = field(init=False, default=0)
    cycle_pos: int = field(init=False, default=0)
    cycle_m: int = field(init=False, default=0)
    counts: dict = field(init=False)
    history: list = field(init=False)

    def __post_init__(self):
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")
        if self.m_initial < 1:
            raise ValueError("m_initial must be >= 1")
        if self.k < self.m_initial:
            raise ValueError(f"k ({self.k}) must be >= m_initial ({self.m_initial})")
        if self.growth < 0:
            raise ValueError("growth must be >= 0")
        self.m = self.m_initial
        self.counts = {t: 0 for t in TAGS}
        self.history = []

    @property
    def in_warmup(self):
        return self.epoch < self.warmup_epochs

    def next_batch_phase(self):
        if self.in_warmup:
            tag = WARMUP
        else:
            if self.cycle_pos == 0:
                self.cycle_m = self.m
            tag = GP if self.cycle_pos < self.k else BP
            self.cycle_pos += 1
            if self.cycle_pos == self.k + self.cycle_m:
                self.cycle_pos = 0
        self.counts[tag] += 1
        self.history.append(tag)
        return tag

    def end_of_epoch_update(self):
        if not self.in_warmup:
            self.m = min(self.k, self.m + self.growth)
        self.epoch += 1
        return self


def next_batch_phase(state: PhaseState):
    return state.next_batch_phase()


def end_of_epoch_update(state: PhaseState):
    return state.end_of_epoch_update()


def phase_fractions(counts, total_batches=None):
    """(warmup, bp, gp) fractions from a tag-count mapping or a PhaseState."""
    if isinstance(counts, PhaseState):
        counts = counts.counts
    total = sum(counts.get(t, 0) for t in TAGS) if total_batches is None else total_batches
    if total == 0:
        raise ValueError("no batches recorded")
    w = counts.get(WARMUP, 0) / total
    b = counts.get(BP, 0) / total
    return w, b, 1.0 - w - b


def tag_sequence(warmup_epochs, m_initial, k, growth, batches_per_epoch, epochs):
    """Replay the schedule; returns a list of per-epoch tag lists."""
    st = PhaseState(warmup_epochs, m_initial, k, growth)
    out = []
    for _ in range(epochs):
        out.append([st.next_batch_phase() for _ in range(batches_per_epoch)])
        st.end_of_epoch_update()
    return out
