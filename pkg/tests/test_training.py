import math

import numpy as np
import pytest

from gated_streams import training as TR
from gated_streams.config import ConfigError, GatingMode, ModelConfig
from gated_streams.data import GeneratorSpec, generate_split
from gated_streams.model import GatedStreamTransformer
from gated_streams.tensor import Tensor

CFG = ModelConfig(H=16, W=16, Q=8, K=16, A=2, L=1, n_st=2, n_lt=2, s=2, num_classes=6)
SPEC = GeneratorSpec(H=16, W=16, s=2, units_per_video=2)


@pytest.fixture(scope="module")
def split():
    return generate_split(SPEC, 3, 1, 1, seed=0)


def adam_reference(grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8, x=0.0):
    # hand-written scalar recurrence
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    return x


class TestAdam:
    def step_with(self, p, grads, cfg, state=None):
        state = state or TR.AdamState.zeros_like({"p": p})
        for g in grads:
            p.grad = np.full(p.shape, g)
            TR.adam_step({"p": p}, state, cfg)
        return state

    def test_zero_gradient_leaves_parameters(self):
        p = Tensor(np.array([1.5, -2.0]), requires_grad=True)
        state = TR.AdamState.zeros_like({"p": p})
        state.m["p"][:] = 1.0
        state.v["p"][:] = 1.0
        p.grad = np.zeros(2)
        cfg = TR.TrainConfig()
        TR.adam_step({"p": p}, state, cfg)
        assert state.m["p"][0] == pytest.approx(0.9) and state.v["p"][0] == pytest.approx(0.999)
        # with empty moments a zero gradient must not move anything
        q = Tensor(np.array([1.5, -2.0]), requires_grad=True)
        self.step_with(q, [0.0, 0.0], cfg)
        np.testing.assert_array_equal(q.data, [1.5, -2.0])

    def test_constant_gradient_moves_by_learning_rate(self):
        cfg = TR.TrainConfig(learning_rate=1e-2)
        for g in (3.0, -0.25):
            p = Tensor(np.array([0.0]), requires_grad=True)
            state = self.step_with(p, [g] * 499, cfg)
            before = p.data.copy()
            self.step_with(p, [g], cfg, state)
            assert state.step == 500
            assert (p.data - before)[0] == pytest.approx(-cfg.learning_rate * np.sign(g), rel=1e-6)

    def test_three_steps_match_hand_recurrence(self):
        cfg = TR.TrainConfig(learning_rate=0.1)
        p = Tensor(np.array([0.5]), requires_grad=True)
        state = self.step_with(p, [0.3, -1.2, 2.0], cfg)
        assert state.step == 3
        assert p.data[0] == pytest.approx(adam_reference([0.3, -1.2, 2.0], lr=0.1, x=0.5), abs=1e-15)

    def test_nan_gradient_names_parameter(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        p.grad = np.array([0.0, np.nan])
        with pytest.raises(FloatingPointError, match="'gate'"):
            TR.adam_step({"gate": p}, TR.AdamState.zeros_like({"gate": p}), TR.TrainConfig())


class TestTrainConfig:
    @pytest.mark.parametrize("kw", [{"learning_rate": 0.0}, {"batch_size": 0}, {"epochs": -1}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            TR.TrainConfig(**kw)

    def test_text_round_trip(self):
        from gated_streams.config import parse_kv
        text = TR.TrainConfig(learning_rate=3e-4, mirror=True).to_text()
        kv = parse_kv(text)
        assert kv["learning_rate"] == "0.0003" and kv["mirror"] == "true"


class TestBatches:
    def test_window_shapes(self, split):
        train, _, _ = split
        st, lt, y = TR.make_batch(train, [(0, 0), (1, 5)], CFG)
        assert st.shape == (2, CFG.n_st, 16, 16, 3) and lt.shape == (2, CFG.n_lt, 16, 16, 3)
        assert y.tolist() == [train[0].labels[0], train[1].labels[5]]

    def test_every_window_listed_once(self, split):
        train, _, _ = split
        windows = TR.all_windows(train)
        assert len(windows) == sum(len(v) for v in train)

    def test_augmentation_is_shared_across_frames(self):
        cfg = TR.TrainConfig(crop=True, mirror=True, color_jitter=True)
        frame = np.random.default_rng(0).random((16, 16, 3))
        clips = [np.stack([frame] * 3), np.stack([frame] * 2)]
        out = TR.augment(clips, np.random.default_rng(1), cfg)
        for c in out:
            for f in c:
                np.testing.assert_array_equal(f, out[0][0])
        assert out[0].shape == clips[0].shape


def test_first_batch_loss_near_uniform(split):
    train, _, _ = split
    model = GatedStreamTransformer(CFG, seed=0)
    st, lt, y = TR.make_batch(train, TR.all_windows(train)[:16], CFG)
    loss = TR.loss_and_grad(model, st, lt, y)
    assert abs(loss - math.log(CFG.num_classes)) < 0.2 * math.log(CFG.num_classes)


@pytest.mark.parametrize("mode", [GatingMode.FEATURE, GatingMode.FIXED_PARAM])
def test_every_parameter_moves_after_one_step(split, mode):
    train, _, _ = split
    model = GatedStreamTransformer(CFG.replace(gating_mode=mode), seed=0)
    before = {k: p.data.copy() for k, p in model.params.items()}
    st, lt, y = TR.make_batch(train, TR.all_windows(train)[::7][:16], model.config)
    TR.loss_and_grad(model, st, lt, y)
    TR.adam_step(model.params, TR.AdamState.zeros_like(model.params), TR.TrainConfig())
    dead = [k for k, p in model.params.items() if not np.any(p.data != before[k])]
    assert not dead


def test_training_is_deterministic(split, tmp_path):
    train, val, _ = split
    cfg = TR.TrainConfig(epochs=2, windows_per_epoch=48, seed=3, eval_batch_size=128)
    for tag in ("a", "b"):
        model = GatedStreamTransformer(CFG, seed=0)
        TR.train(model, train, val, cfg, tmp_path / f"{tag}.csv", tmp_path / f"{tag}.glsc")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.glsc").read_bytes() == (tmp_path / "b.glsc").read_bytes()
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header == "epoch,train_loss,val_accuracy"


def test_best_epoch_parameters_are_restored(split):
    train, val, _ = split
    model = GatedStreamTransformer(CFG, seed=0)
    res = TR.train(model, train, val, TR.TrainConfig(epochs=3, windows_per_epoch=32))
    from gated_streams.evaluation import evaluate
    assert evaluate(model, val)[0].accuracy == res.best_val_accuracy
    assert res.best_val_accuracy == max(r["val_accuracy"] for r in res.history)


def test_empty_dataset_rejected():
    with pytest.raises(ConfigError):
        TR.train(GatedStreamTransformer(CFG), [], [], TR.TrainConfig())


class TestAblation:
    def test_grid_matches_four_modes_and_four_rates(self):
        grid = TR.ablation_grid()
        assert len(grid) == 16
        assert [m.value for m in dict.fromkeys(m for m, _ in grid)] == [
            "OnlyShortTerm", "NoGating", "FixedParam", "Feature"]
        assert sorted({s for _, s in grid}) == [2, 4, 8, 16]

    def test_empty_grid_rejected(self, split):
        with pytest.raises(ConfigError):
            TR.run_ablation([], *split, CFG, TR.TrainConfig())

    def test_csv_has_one_row_per_cell(self, split, tmp_path):
        grid = TR.ablation_grid(modes=("OnlyShortTerm", "Feature"), rates=(2, 4))
        rows = TR.run_ablation(grid, *split, CFG, TR.TrainConfig(epochs=1, windows_per_epoch=16),
                               out_csv=tmp_path / "ab.csv")
        lines = (tmp_path / "ab.csv").read_text().splitlines()
        assert lines[0] == "gating_mode,s,accuracy,precision,recall,jaccard"
        assert len(lines) == 1 + len(grid) == 1 + len(rows)
        assert lines[1].startswith("OnlyShortTerm,2,")
