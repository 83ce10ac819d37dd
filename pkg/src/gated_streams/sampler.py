"""Causal long/short frame windows for online step recognition."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class StreamConfig:
    n_st: int = 4
    n_lt: int = 4
    s: int = 4

    def __post_init__(self):
        for name in ("n_st", "n_lt", "s"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")


@dataclass(frozen=True)
class StreamWindow:
    short_idx: tuple[int, ...]
    long_idx: tuple[int, ...]
    query_t: int


def sample_window(t: int, cfg: StreamConfig) -> StreamWindow:
    """Frame indices feeding the prediction at time ``t``.

    The short stream is the last ``n_st`` frames ending at ``t``; the long
    stream is ``n_lt`` frames at stride ``s`` also ending at ``t``. Indices
    before the start of the video are clamped to frame 0.
    """
    t = int(t)
    if t < 0:
        raise ValueError(f"query frame must be >= 0, got {t}")
    short = tuple(max(0, t - k) for k in range(cfg.n_st - 1, -1, -1))
    long = tuple(max(0, t - cfg.s * k) for k in range(cfg.n_lt - 1, -1, -1))
    return StreamWindow(short_idx=short, long_idx=long, query_t=t)
