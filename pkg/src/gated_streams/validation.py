"""Input checks for video collections passed to the estimator API."""

from __future__ import annotations

import numpy as np


def check_video(frames, name: str = "video") -> np.ndarray:
    arr = np.asarray(frames, dtype=np.float64)
    if arr.ndim != 4:
        raise ValueError(f"{name}: expected [T, H, W, C] frames, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError(f"{name}: video has no frames")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: frames contain NaN or Inf")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name}: pixel values must lie in [0, 1]")
    return arr


def check_videos(X, y=None):
    """Validate a list of videos (and optional per-frame label arrays).

    All videos must share ``H, W, C``. Returns ``(videos, labels)`` with
    labels ``None`` when ``y`` is not given.
    """
    if isinstance(X, np.ndarray) and X.ndim == 4:
        X = [X]
    X = list(X)
    if not X:
        raise ValueError("need at least one video")
    videos = [check_video(v, f"video {i}") for i, v in enumerate(X)]
    frame_shape = videos[0].shape[1:]
    for i, v in enumerate(videos):
        if v.shape[1:] != frame_shape:
            raise ValueError(f"video {i}: frame shape {v.shape[1:]} differs from {frame_shape}")
    if y is None:
        return videos, None
    if isinstance(y, np.ndarray) and y.ndim == 1 and len(videos) == 1:
        y = [y]
    y = list(y)
    if len(y) != len(videos):
        raise ValueError(f"{len(y)} label arrays for {len(videos)} videos")
    labels = []
    for i, (v, lab) in enumerate(zip(videos, y)):
        lab = np.asarray(lab)
        if lab.shape != (len(v),):
            raise ValueError(f"video {i}: {lab.shape} labels for {len(v)} frames")
        labels.append(lab)
    return videos, labels
