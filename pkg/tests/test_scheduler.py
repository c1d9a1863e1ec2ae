import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adagp.scheduler import BP, GP, WARMUP, PhaseState, phase_fractions, tag_sequence

# L=3, m0=1, k=4, growth=1, 8 batches per epoch, unrolled by hand.
# A cycle is k GP batches then m BP batches; it keeps the m it started with.
GOLDEN_8 = [
    "WWWWWWWW", "WWWWWWWW", "WWWWWWWW",
    "GGGGBGGG",  # m=1: cycle GGGGB, next cycle starts
    "GBGGGGBB",  # finishes m=1 cycle, new cycle with m=2
    "GGGGBBBG",  # m=3
    "GGGBBBGG",  # still in m=3 cycle, then m=4 cycle
    "GGBBBBGG",
    "GGBBBBGG",
    "GGBBBBGG",
]
LETTER = {WARMUP: "W", BP: "B", GP: "G"}


def cycle_stream_oracle(warmup_epochs, m_initial, k, growth, per_epoch, epochs):
    """Same schedule built cycle by cycle from absolute batch positions."""
    total = per_epoch * epochs
    tags = ["W"] * min(total, warmup_epochs * per_epoch)
    pos = len(tags)
    while pos < total:
        epoch = pos // per_epoch
        m = min(k, m_initial + growth * (epoch - warmup_epochs))
        tags += ["G"] * k + ["B"] * m
        pos += k + m
    tags = tags[:total]
    return ["".join(tags[e * per_epoch:(e + 1) * per_epoch]) for e in range(epochs)]


def as_letters(seq):
    return ["".join(LETTER[t] for t in epoch) for epoch in seq]


def test_golden_sequence():
    assert as_letters(tag_sequence(3, 1, 4, 1, 8, 10)) == GOLDEN_8


def test_golden_matches_oracle():
    assert cycle_stream_oracle(3, 1, 4, 1, 8, 10) == GOLDEN_8


@settings(max_examples=60, deadline=None)
@given(L=st.integers(0, 3), m0=st.integers(1, 4), extra=st.integers(0, 4), growth=st.integers(0, 2),
       per_epoch=st.integers(1, 13), epochs=st.integers(1, 9))
def test_state_machine_matches_oracle(L, m0, extra, growth, per_epoch, epochs):
    k = m0 + extra
    assert as_letters(tag_sequence(L, m0, k, growth, per_epoch, epochs)) == \
        cycle_stream_oracle(L, m0, k, growth, per_epoch, epochs)


@settings(max_examples=40, deadline=None)
@given(m0=st.integers(1, 3), extra=st.integers(0, 5), growth=st.integers(1, 3), epochs=st.integers(1, 20))
def test_m_clamps_at_k_and_stays(m0, extra, growth, epochs):
    k = m0 + extra
    st_ = PhaseState(1, m0, k, growth)
    ms = []
    for _ in range(epochs):
        st_.end_of_epoch_update()
        ms.append(st_.m)
    assert all(m <= k for m in ms)
    assert ms == sorted(ms)
    if k in ms:
        assert all(m == k for m in ms[ms.index(k):])


def test_m_frozen_during_warmup():
    s = PhaseState(3, 1, 4, 1)
    for _ in range(3):
        s.end_of_epoch_update()
        assert s.m == 1
    s.end_of_epoch_update()
    assert s.m == 2


def test_zero_warmup_starts_with_gp():
    s = PhaseState(0, 1, 2, 1)
    assert [s.next_batch_phase() for _ in range(4)] == [GP, GP, BP, GP]


@pytest.mark.parametrize("kw", [{"k": 0}, {"m_initial": 0}, {"warmup_epochs": -1}, {"growth": -1}])
def test_invalid_state(kw):
    with pytest.raises(ValueError):
        PhaseState(**kw)


def test_fractions_from_counts():
    assert phase_fractions({WARMUP: 2, BP: 1, GP: 1}) == pytest.approx((0.5, 0.25, 0.25))


def test_fractions_need_batches():
    with pytest.raises(ValueError):
        phase_fractions({})


def test_fractions_from_state_sum_to_one():
    s = PhaseState(1, 1, 4, 1)
    for _ in range(30):
        s.next_batch_phase()
    assert sum(phase_fractions(s)) == pytest.approx(1.0)
