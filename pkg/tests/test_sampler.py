import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from gated_streams.sampler import StreamConfig, sample_window


def progression(t, n, step):
    # every step-th frame from t - step*(n-1) up to t, clamped at frame 0
    return [max(0, x) for x in range(t - step * (n - 1), t + 1, step)]


def test_short_stream_at_100():
    assert sample_window(100, StreamConfig(n_st=8, n_lt=8, s=8)).short_idx == tuple(range(93, 101))


def test_long_stream_at_100():
    w = sample_window(100, StreamConfig(n_st=8, n_lt=8, s=8))
    assert list(w.long_idx) == progression(100, 8, 8) == [44, 52, 60, 68, 76, 84, 92, 100]


def test_clamped_at_video_start():
    assert sample_window(2, StreamConfig(n_st=8, n_lt=1, s=1)).short_idx == (0, 0, 0, 0, 0, 0, 1, 2)


def test_negative_t_rejected():
    with pytest.raises(ValueError):
        sample_window(-1, StreamConfig())


@pytest.mark.parametrize("field", ["n_st", "n_lt", "s"])
def test_config_rejects_nonpositive(field):
    with pytest.raises(ValueError):
        StreamConfig(**{field: 0})


def test_matches_enumeration_on_grid():
    for n_st, n_lt, s in itertools.product((1, 4, 8), (1, 4, 8), (1, 4, 16)):
        cfg = StreamConfig(n_st, n_lt, s)
        for t in range(0, 501):
            w = sample_window(t, cfg)
            assert list(w.short_idx) == progression(t, n_st, 1)
            assert list(w.long_idx) == progression(t, n_lt, s)


configs = st.builds(StreamConfig, n_st=st.integers(1, 16), n_lt=st.integers(1, 16), s=st.integers(1, 32))


@given(t=st.integers(0, 10_000), cfg=configs)
def test_window_invariants(t, cfg):
    w = sample_window(t, cfg)
    assert len(w.short_idx) == cfg.n_st and len(w.long_idx) == cfg.n_lt
    assert max(w.short_idx) == t and max(w.long_idx) == t
    for idx, gap in ((w.short_idx, 1), (w.long_idx, cfg.s)):
        assert min(idx) >= 0
        assert all(0 <= b - a <= gap for a, b in zip(idx, idx[1:]))


@given(t=st.integers(0, 5000), cfg=configs)
def test_short_window_slides_by_one(t, cfg):
    if t < cfg.n_st - 1:
        return
    now, nxt = sample_window(t, cfg), sample_window(t + 1, cfg)
    assert nxt.short_idx == tuple(i + 1 for i in now.short_idx)


@given(t=st.integers(0, 5000), n=st.integers(1, 16))
def test_unit_stride_long_stream_equals_short(t, n):
    w = sample_window(t, StreamConfig(n_st=n, n_lt=n, s=1))
    assert w.long_idx == w.short_idx
