import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gated_streams import data as D
from gated_streams.config import ConfigError

SPEC = D.GeneratorSpec(H=16, W=16, s=2)


def test_same_seed_same_video():
    a, b = D.generate_video(SPEC, 11), D.generate_video(SPEC, 11)
    assert a.frames.tobytes() == b.frames.tobytes()
    np.testing.assert_array_equal(a.labels, b.labels)


def test_different_seeds_differ():
    assert D.generate_video(SPEC, 1).frames.tobytes() != D.generate_video(SPEC, 2).frames.tobytes()


def test_frames_are_float32_exact_and_in_range():
    v = D.generate_video(SPEC, 3)
    assert v.frames.shape == (len(v), 16, 16, 3)
    assert v.frames.min() >= 0.0 and v.frames.max() <= 1.0
    np.testing.assert_array_equal(v.frames.astype(np.float32).astype(np.float64), v.frames)


def test_labels_match_schedule():
    v = D.generate_video(SPEC, 4)
    assert len(v.labels) == v.schedule.length
    assert D.StepSchedule.from_labels(v.labels).segments == v.schedule.segments


def test_durations_within_bounds():
    lo, hi = SPEC.duration_range
    assert (lo, hi) == (4, 12)
    for seed in range(20):
        for _, d in D.generate_video(SPEC, seed).schedule.segments:
            assert lo <= d <= hi


def test_confusers_share_an_appearance():
    spec = D.GeneratorSpec()
    assert spec.confuser_pairs() == [(2, 3), (4, 5)]
    for a, b in spec.confuser_pairs():
        assert spec.appearance_of(a) == spec.appearance_of(b)
        # same appearance and same rng state render the same frame
        fa = D.render_frame(spec.appearance_of(a), spec, np.random.default_rng(0))
        fb = D.render_frame(spec.appearance_of(b), spec, np.random.default_rng(0))
        np.testing.assert_array_equal(fa, fb)
    apps = {spec.appearance_of(k) for k in range(spec.num_classes)}
    assert len(apps) == 4


def test_confusers_follow_their_anchor():
    spec = D.GeneratorSpec()
    partner = {a: 0 for a, _ in spec.confuser_pairs()} | {b: 1 for _, b in spec.confuser_pairs()}
    for seed in range(30):
        steps = [k for k, _ in D.generate_video(spec, seed).schedule.segments]
        assert steps[0] in (0, 1)
        for prev, cur in zip(steps, steps[1:]):
            assert prev != cur
            if cur in partner:
                assert prev == partner[cur]


def test_split_properties():
    train, val, test = D.generate_split(SPEC, 4, 2, 2, seed=0)
    seeds = [v.seed for v in train + val + test]
    assert len(set(seeds)) == len(seeds)
    assert set(np.concatenate([v.labels for v in train]).tolist()) == set(range(SPEC.num_classes))
    again = D.generate_split(SPEC, 4, 2, 2, seed=0)
    assert [v.frames.tobytes() for v in test] == [v.frames.tobytes() for v in again[2]]


def test_split_needs_videos():
    with pytest.raises(ConfigError):
        D.generate_split(SPEC, 0, 1, 1)


def test_spec_validation():
    with pytest.raises(ConfigError):
        D.GeneratorSpec(min_duration=10, max_duration=5)
    with pytest.raises(ConfigError):
        D.GeneratorSpec(num_classes=1)


def test_dataset_round_trip_is_bitwise(tmp_path):
    train, val, test = D.generate_split(SPEC, 3, 1, 1, seed=2)
    D.save_dataset(tmp_path / "a", {"train": train, "val": val, "test": test})
    loaded = D.load_dataset(tmp_path / "a")
    for split, orig in zip(D.SPLITS, (train, val, test)):
        for x, y in zip(orig, loaded[split]):
            assert x.frames.tobytes() == y.frames.tobytes()
            np.testing.assert_array_equal(x.labels, y.labels)
            assert (x.seed, x.video_id) == (y.seed, y.video_id)
    D.save_dataset(tmp_path / "b", loaded)
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_labels_csv_row_count(tmp_path):
    v = D.generate_video(SPEC, 5, "v")
    D.save_video(v, tmp_path)
    lines = (tmp_path / "v.labels.csv").read_text().splitlines()
    assert lines[0] == "frame_index,step_id" and len(lines) == len(v) + 1


def test_bad_magic_reports_offset(tmp_path):
    buf = bytearray(D.encode_frames(np.zeros((1, 2, 2, 3))))
    buf[:4] = b"XXXX"
    with pytest.raises(D.FormatError) as err:
        D.decode_frames(bytes(buf), "clip.glsv")
    assert err.value.offset == 0 and "clip.glsv" in str(err.value)


def test_truncated_payload(tmp_path):
    buf = D.encode_frames(np.zeros((2, 2, 2, 3)))
    with pytest.raises(D.FormatError, match="payload"):
        D.decode_frames(buf[:-3])


def test_label_frame_mismatch(tmp_path):
    v = D.generate_video(SPEC, 6, "v")
    D.save_video(v, tmp_path)
    D.write_labels(tmp_path / "v.labels.csv", v.labels[:-1])
    with pytest.raises(D.FormatError):
        D.load_video(tmp_path, "v")


def test_bad_manifest_line(tmp_path):
    (tmp_path / "manifest.txt").write_text("train only_two\n")
    with pytest.raises(D.FormatError):
        D.load_dataset(tmp_path)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=60))
def test_schedule_from_labels_round_trip(labels):
    np.testing.assert_array_equal(D.StepSchedule.from_labels(labels).labels(), labels)
