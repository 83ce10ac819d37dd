"""Synthetic step-structured videos and their on-disk format.

Every step renders as an oriented, tinted grating with Gaussian pixel
noise. Two "confuser" pairs of steps share one appearance each, so a frame
on its own cannot tell them apart; what disambiguates them is the step that
preceded them::

    unit (anchor 0 -> confuser a)     unit (anchor 1 -> confuser b)

A video is a random sequence of such units. Seeing the anchor requires
looking further back than a short clip once a confuser segment is a few
frames old.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import ConfigError

log = logging.getLogger(__name__)

MAGIC = b"GLSV"
VERSION = 1
_HEADER = struct.Struct("<4sIIIII")


class FormatError(ValueError):
    """Corrupt or truncated dataset file."""

    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: byte {offset}: {message}")
        self.path = path
        self.offset = offset


@dataclass(frozen=True)
class GeneratorSpec:
    num_classes: int = 6
    H: int = 32
    W: int = 32
    C: int = 3
    s: int = 4
    min_duration: int = 0  # 0 -> 2*s
    max_duration: int = 0  # 0 -> 6*s
    units_per_video: int = 4
    noise_std: float = 0.08

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if min(self.H, self.W, self.C, self.s, self.units_per_video) < 1:
            raise ConfigError("H, W, C, s and units_per_video must be positive")
        if self.min_duration < 0 or self.max_duration < 0:
            raise ConfigError("duration bounds must be positive")
        if self.duration_range[0] > self.duration_range[1]:
            raise ConfigError(f"min_duration > max_duration: {self.duration_range}")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")

    @property
    def duration_range(self) -> tuple[int, int]:
        return (self.min_duration or 2 * self.s, self.max_duration or 6 * self.s)

    @property
    def n_confuser_pairs(self) -> int:
        return min(2, (self.num_classes - 2) // 2)

    @property
    def n_anchors(self) -> int:
        return self.num_classes - 2 * self.n_confuser_pairs

    def confuser_pairs(self) -> list[tuple[int, int]]:
        a = self.n_anchors
        return [(a + 2 * j, a + 2 * j + 1) for j in range(self.n_confuser_pairs)]

    def appearance_of(self, step: int) -> int:
        """Steps in one confuser pair map to the same appearance id."""
        if step < self.n_anchors:
            return step
        return self.n_anchors + (step - self.n_anchors) // 2

    def units(self) -> list[tuple[int, ...]]:
        out: list[tuple[int, ...]] = []
        for a, b in self.confuser_pairs():
            out += [(0, a), (1, b)]
        first_free = 2 if self.n_confuser_pairs else 0
        out += [(k,) for k in range(first_free, self.n_anchors)]
        return out


@dataclass(frozen=True)
class StepSchedule:
    segments: tuple[tuple[int, int], ...]  # (step_id, duration)
    grammar_id: int = 0

    @property
    def length(self) -> int:
        return sum(d for _, d in self.segments)

    def labels(self) -> np.ndarray:
        return np.concatenate([np.full(d, k, dtype=np.int64) for k, d in self.segments])

    @classmethod
    def from_labels(cls, labels: Sequence[int], grammar_id: int = 0) -> StepSchedule:
        labels = np.asarray(labels)
        if labels.size == 0:
            return cls((), grammar_id)
        cuts = np.flatnonzero(np.diff(labels)) + 1
        starts = np.concatenate([[0], cuts])
        ends = np.concatenate([cuts, [labels.size]])
        return cls(tuple((int(labels[a]), int(b - a)) for a, b in zip(starts, ends)), grammar_id)


@dataclass
class LabeledVideo:
    frames: np.ndarray  # [T, H, W, C] in [0, 1]
    labels: np.ndarray  # [T] step ids
    schedule: StepSchedule
    seed: int
    video_id: str = ""

    def __len__(self) -> int:
        return len(self.labels)


def sample_schedule(spec: GeneratorSpec, rng: np.random.Generator) -> StepSchedule:
    units = spec.units()
    lo, hi = spec.duration_range
    steps: list[int] = []
    for _ in range(spec.units_per_video):
        unit = units[rng.integers(len(units))]
        while steps and steps[-1] == unit[0]:
            unit = units[rng.integers(len(units))]
        steps.extend(unit)
    segments = tuple((k, int(rng.integers(lo, hi + 1))) for k in steps)
    return StepSchedule(segments, grammar_id=0)


def _appearance_params(app: int, n_app: int):
    theta = np.pi * app / n_app
    freq = 1.5 + 1.0 * (app % 3)
    hue = 2 * np.pi * app / n_app
    tint = 0.5 + 0.45 * np.cos(hue + np.array([0.0, 2.1, 4.2]))
    return theta, freq, tint


def render_frame(app: int, spec: GeneratorSpec, rng: np.random.Generator) -> np.ndarray:
    """One noisy frame of appearance ``app``; the phase drifts randomly per frame."""
    n_app = spec.n_anchors + spec.n_confuser_pairs
    theta, freq, tint = _appearance_params(app, n_app)
    yy, xx = np.mgrid[0 : spec.H, 0 : spec.W] / max(spec.H, spec.W)
    phase = rng.uniform(0, 2 * np.pi)
    wave = np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    channels = np.resize(tint, spec.C)
    img = 0.5 + 0.4 * wave[..., None] * channels + 0.1 * (channels - 0.5)
    img = img + rng.normal(0.0, spec.noise_std, img.shape)
    return np.clip(img, 0.0, 1.0)


def generate_video(spec: GeneratorSpec, seed: int, video_id: str = "") -> LabeledVideo:
    """Deterministic in ``(spec, seed)``; pixels are float32-exact."""
    rng = np.random.default_rng(seed)
    schedule = sample_schedule(spec, rng)
    labels = schedule.labels()
    frames = np.stack([render_frame(spec.appearance_of(int(k)), spec, rng) for k in labels])
    frames = frames.astype(np.float32).astype(np.float64)
    return LabeledVideo(frames, labels, schedule, seed, video_id or f"video_{seed:08d}")


SPLIT_STRIDE = 10_000_000


def generate_split(spec: GeneratorSpec, n_train: int, n_val: int, n_test: int, seed: int = 0,
                   max_attempts: int = 100):
    """Train/val/test video lists drawn from disjoint seed ranges.

    The training split is redrawn from fresh seeds until every class occurs.
    """
    if min(n_train, n_val, n_test) < 1:
        raise ConfigError("every split needs at least one video")
    base = seed * 3 * SPLIT_STRIDE
    for attempt in range(max_attempts):
        lo = base + attempt * n_train
        train = [generate_video(spec, lo + i, f"train_{i:04d}") for i in range(n_train)]
        present = set(np.concatenate([v.labels for v in train]).tolist())
        if len(present) == spec.num_classes:
            break
        log.info("training split missing classes %s, redrawing", set(range(spec.num_classes)) - present)
    else:
        raise ConfigError(f"no training split covering all classes after {max_attempts} attempts")
    val = [generate_video(spec, base + SPLIT_STRIDE + i, f"val_{i:04d}") for i in range(n_val)]
    test = [generate_video(spec, base + 2 * SPLIT_STRIDE + i, f"test_{i:04d}") for i in range(n_test)]
    return train, val, test


# --- storage --------------------------------------------------------------


def encode_frames(frames: np.ndarray) -> bytes:
    T, H, W, C = frames.shape
    return _HEADER.pack(MAGIC, VERSION, T, H, W, C) + np.asarray(frames, dtype="<f4").tobytes()


def decode_frames(buf: bytes, path="<bytes>") -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FormatError(path, len(buf), f"truncated header ({len(buf)} of {_HEADER.size} bytes)")
    magic, version, T, H, W, C = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(path, 0, f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(path, 4, f"unsupported version {version}")
    need = T * H * W * C * 4
    have = len(buf) - _HEADER.size
    if have != need:
        raise FormatError(path, len(buf), f"pixel payload is {have} bytes, header implies {need}")
    px = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(T, H, W, C)
    return px.astype(np.float64)


def write_labels(path: Path, labels: Iterable[int]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_index", "step_id"])
        for i, k in enumerate(labels):
            w.writerow([i, int(k)])


def read_labels(path: Path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["frame_index", "step_id"]:
        raise FormatError(path, 0, "labels CSV must start with header frame_index,step_id")
    out = []
    for n, row in enumerate(rows[1:], 1):
        if len(row) != 2 or int(row[0]) != n - 1:
            raise FormatError(path, 0, f"row {n}: expected '{n - 1},<step_id>', got {row}")
        out.append(int(row[1]))
    return np.array(out, dtype=np.int64)


def save_video(video: LabeledVideo, directory: Path) -> None:
    (directory / f"{video.video_id}.glsv").write_bytes(encode_frames(video.frames))
    write_labels(directory / f"{video.video_id}.labels.csv", video.labels)


def load_video(directory: Path, video_id: str, seed: int = -1, grammar_id: int = 0) -> LabeledVideo:
    path = directory / f"{video_id}.glsv"
    frames = decode_frames(path.read_bytes(), path)
    labels = read_labels(directory / f"{video_id}.labels.csv")
    if len(labels) != len(frames):
        raise FormatError(path, 0, f"{len(labels)} labels for {len(frames)} frames")
    return LabeledVideo(frames, labels, StepSchedule.from_labels(labels, grammar_id), seed, video_id)


SPLITS = ("train", "val", "test")


def save_dataset(path: str | Path, splits: dict[str, Sequence[LabeledVideo]]) -> Path:
    """Write each video's frames and labels plus ``manifest.txt``.

    Manifest lines are ``split video_id seed grammar_id``.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lines = []
    for split in SPLITS:
        for v in splits.get(split, ()):
            save_video(v, path)
            lines.append(f"{split} {v.video_id} {v.seed} {v.schedule.grammar_id}\n")
    (path / "manifest.txt").write_text("".join(lines), encoding="utf-8")
    return path


def load_dataset(path: str | Path) -> dict[str, list[LabeledVideo]]:
    path = Path(path)
    manifest = path / "manifest.txt"
    out: dict[str, list[LabeledVideo]] = {s: [] for s in SPLITS}
    offset = 0
    for line in manifest.read_bytes().splitlines(keepends=True):
        parts = line.decode("utf-8").split()
        if len(parts) != 4 or parts[0] not in out:
            raise FormatError(manifest, offset, f"bad manifest line {line!r}")
        split, vid, seed, grammar = parts
        out[split].append(load_video(path, vid, int(seed), int(grammar)))
        offset += len(line)
    return out


def video_from_arrays(frames, labels, video_id: str = "") -> LabeledVideo:
    frames = np.asarray(frames, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    return LabeledVideo(frames, labels, StepSchedule.from_labels(labels), -1, video_id)

