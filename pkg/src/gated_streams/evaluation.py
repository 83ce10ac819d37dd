"""Online inference, step-recognition metrics and ribbon plots."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ConfigError
from .sampler import StreamConfig, sample_window

log = logging.getLogger(__name__)

METRICS = ("accuracy", "precision", "recall", "jaccard")


@dataclass
class PredictionTrack:
    video_id: str
    predicted: np.ndarray
    truth: np.ndarray

    def __post_init__(self):
        self.predicted = np.asarray(self.predicted, dtype=np.int64)
        self.truth = np.asarray(self.truth, dtype=np.int64)
        if self.predicted.shape != self.truth.shape:
            raise ValueError(
                f"{self.video_id}: {len(self.predicted)} predictions for {len(self.truth)} labels"
            )


@dataclass
class MetricsReport:
    """Metrics in percent.

    ``accuracy`` is the mean of per-video frame accuracies; the other three
    are macro averages over classes present in the ground truth, computed
    from confusion counts pooled over all frames.
    """

    accuracy: float
    precision: float
    recall: float
    jaccard: float
    per_video_accuracy: dict[str, float] = field(default_factory=dict)
    per_class: dict[int, dict[str, float]] = field(default_factory=dict)
    std: dict[str, float] | None = None  # across repetitions, when aggregated

    def as_row(self) -> dict[str, float]:
        return {m: getattr(self, m) for m in METRICS}


# --- inference ------------------------------------------------------------


def window_batch(frames, ts: Sequence[int], stream: StreamConfig, long_stream: bool = True):
    """Stack the short/long clips for query frames ``ts`` from an indexable frame source."""
    st, lt = [], []
    for t in ts:
        w = sample_window(t, stream)
        st.append(np.asarray(frames[list(w.short_idx)]))
        if long_stream:
            lt.append(np.asarray(frames[list(w.long_idx)]))
    return np.stack(st), (np.stack(lt) if long_stream else None)


def predict_proba_video(model, frames, batch_size: int = 64) -> np.ndarray:
    """Per-frame class probabilities from one causal window per frame."""
    cfg = model.config
    stream = StreamConfig(cfg.n_st, cfg.n_lt, cfg.s)
    out = []
    n = len(frames)
    for lo in range(0, n, batch_size):
        ts = range(lo, min(n, lo + batch_size))
        st, lt = window_batch(frames, ts, stream, cfg.uses_long_stream)
        logits = model(st, lt).data
        z = np.exp(logits - logits.max(axis=1, keepdims=True))
        out.append(z / z.sum(axis=1, keepdims=True))
    if not out:
        return np.zeros((0, cfg.num_classes))
    return np.concatenate(out)


def predict_video(model, frames, batch_size: int = 64) -> np.ndarray:
    return predict_proba_video(model, frames, batch_size).argmax(axis=1)


# --- metrics --------------------------------------------------------------


def confusion_matrix(tracks: Sequence[PredictionTrack], num_classes: int) -> np.ndarray:
    """``cm[true, pred]`` frame counts pooled over tracks."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for tr in tracks:
        if tr.truth.size and (tr.truth.max() >= num_classes or tr.predicted.max() >= num_classes):
            raise ValueError(f"{tr.video_id}: label outside [0, {num_classes})")
        np.add.at(cm, (tr.truth, tr.predicted), 1)
    return cm


def class_scores(cm: np.ndarray) -> dict[int, dict[str, float]]:
    """Per-class precision/recall/Jaccard (percent) for classes present in the truth.

    This is the one place the averaging convention lives.
    """
    out = {}
    for k in range(cm.shape[0]):
        support = cm[k].sum()
        if support == 0:
            continue
        tp = cm[k, k]
        predicted = cm[:, k].sum()
        fp, fn = predicted - tp, support - tp
        out[k] = {
            "precision": 100.0 * int(tp) / int(predicted) if predicted else 0.0,
            "recall": 100.0 * int(tp) / int(support),
            "jaccard": 100.0 * int(tp) / int(tp + fp + fn),
        }
    return out


def _mean(values) -> float:
    # correctly rounded sum, so the result does not depend on summation order
    values = list(values)
    return math.fsum(values) / len(values)


def score_tracks(tracks: Sequence[PredictionTrack], num_classes: int) -> MetricsReport:
    tracks = [t for t in tracks if t.truth.size]
    if not tracks:
        raise ValueError("no non-empty tracks to score")
    per_video = {t.video_id: 100.0 * int(np.sum(t.predicted == t.truth)) / t.truth.size for t in tracks}
    per_class = class_scores(confusion_matrix(tracks, num_classes))
    macro = {m: _mean([c[m] for c in per_class.values()]) for m in ("precision", "recall", "jaccard")}
    return MetricsReport(
        accuracy=_mean(per_video.values()),
        per_video_accuracy=per_video,
        per_class=per_class,
        **macro,
    )


def aggregate_reports(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Mean and (population) std across repeated runs."""
    if not reports:
        raise ValueError("nothing to aggregate")
    vals = {m: np.array([getattr(r, m) for r in reports]) for m in METRICS}
    return MetricsReport(
        **{m: float(v.mean()) for m, v in vals.items()},
        std={m: float(v.std()) for m, v in vals.items()},
    )


def predict_tracks(model, videos, batch_size: int = 64) -> list[PredictionTrack]:
    tracks = []
    for v in videos:
        if len(v) == 0:
            log.warning("skipping empty video %s", v.video_id)
            continue
        tracks.append(PredictionTrack(v.video_id, predict_video(model, v.frames, batch_size), v.labels))
    return tracks


def evaluate(model, videos, batch_size: int = 64) -> tuple[MetricsReport, list[PredictionTrack]]:
    """Online sliding-window evaluation over held-out videos."""
    if not videos:
        raise ConfigError("evaluate needs at least one video")
    tracks = predict_tracks(model, videos, batch_size)
    return score_tracks(tracks, model.config.num_classes), tracks


def evaluate_runs(models, videos, batch_size: int = 64) -> MetricsReport:
    """Evaluate several checkpoints of the same setup and report mean +- std."""
    return aggregate_reports([evaluate(m, videos, batch_size)[0] for m in models])


# --- output ---------------------------------------------------------------


def write_metrics_csv(path: str | Path, report: MetricsReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value", "std"])
        for m in METRICS:
            std = "" if report.std is None else f"{report.std[m]:.6f}"
            w.writerow([m, f"{getattr(report, m):.6f}", std])
        for vid, acc in report.per_video_accuracy.items():
            w.writerow([f"accuracy[{vid}]", f"{acc:.6f}", ""])
        for k, scores in report.per_class.items():
            for m, v in scores.items():
                w.writerow([f"{m}[class {k}]", f"{v:.6f}", ""])


def format_report(report: MetricsReport) -> str:
    lines = [f"{'metric':<10} {'value':>8}"]
    for m in METRICS:
        extra = "" if report.std is None else f" +- {report.std[m]:.2f}"
        lines.append(f"{m:<10} {getattr(report, m):8.2f}{extra}")
    return "\n".join(lines)


def write_track_csv(path: str | Path, track: PredictionTrack) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_index", "predicted", "truth"])
        for i, (p, t) in enumerate(zip(track.predicted, track.truth)):
            w.writerow([i, int(p), int(t)])


DEFAULT_PALETTE = (
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200), (245, 130, 48), (145, 30, 180),
    (70, 240, 240), (240, 50, 230), (210, 245, 60), (250, 190, 212), (0, 128, 128), (170, 110, 40),
)


def ribbon_image(track: PredictionTrack, palette=DEFAULT_PALETTE, width: int | None = None,
                 band_height: int = 24, gap: int = 4) -> np.ndarray:
    """RGB ribbon: predictions on top, ground truth below, white gap between."""
    labels = np.concatenate([track.predicted, track.truth]) if len(track.truth) else np.zeros(0, int)
    if labels.size and labels.max() >= len(palette):
        raise ConfigError(f"palette has {len(palette)} colours, labels go up to {labels.max()}")
    n = len(track.truth)
    if n == 0:
        raise ValueError("cannot draw an empty track")
    width = n if width is None else width
    cols = (np.arange(width) * n) // width
    pal = np.asarray(palette, dtype=np.uint8)
    img = np.full((2 * band_height + gap, width, 3), 255, dtype=np.uint8)
    img[:band_height] = pal[track.predicted[cols]][None]
    img[band_height + gap :] = pal[track.truth[cols]][None]
    return img


def encode_ppm(img: np.ndarray) -> bytes:
    h, w, _ = img.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img, dtype=np.uint8).tobytes()


def decode_ppm(buf: bytes) -> np.ndarray:
    magic, dims, maxval, pixels = buf.split(b"\n", 3)
    if magic != b"P6" or maxval != b"255":
        raise ValueError("not an 8-bit P6 pixmap")
    w, h = (int(x) for x in dims.split())
    return np.frombuffer(pixels, dtype=np.uint8, count=w * h * 3).reshape(h, w, 3)


def render_ribbon(track: PredictionTrack, path: str | Path, palette=DEFAULT_PALETTE,
                  width: int | None = 600) -> Path:
    path = Path(path)
    path.write_bytes(encode_ppm(ribbon_image(track, palette, width)))
    return path
