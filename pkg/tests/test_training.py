import unittest
from dataclasses import replace

import numpy as np

from fewseg.cache import PredictionCache
from fewseg.enums import FusionMode, Phase, TrainingEvent
from fewseg.events import EpochCompleted, StepCompleted, WarmupEpochCompleted
from fewseg.exceptions import ConfigError, StateError
from fewseg.refinement import ConfidenceMap
from fewseg.state import sgd_step
from fewseg.training import TrainConfig, Trainer, apply_freeze_policy, train, training_step, warmup_backbone

from tests.tiny_model import tiny_sampler, tiny_split, tiny_state

SMALL = TrainConfig(
    epochs=2,
    lr=0.01,
    batch_episodes=2,
    episodes_per_epoch=4,
    warmup_epochs=1,
    warmup_scenes=4,
)


def assert_same_parameters(first, second) -> None:
    assert list(first) == list(second)
    for name in first:
        np.testing.assert_array_equal(first[name], second[name], err_msg=name)


class TestTrainConfig(unittest.TestCase):
    def test_defaults(self) -> None:
        cfg = TrainConfig()
        assert (cfg.lr, cfg.batch_episodes, cfg.k) == (0.0025, 4, 1)
        assert cfg.steps_per_epoch == 100
        assert not cfg.trains_attention
        assert replace(cfg, episodes_per_epoch=5, batch_episodes=2).steps_per_epoch == 3
        assert replace(cfg, k=2).trains_attention
        assert not replace(cfg, k=2, fusion=FusionMode.FEATURE_AVG).trains_attention

    def test_validation(self) -> None:
        for options, key in (
            ({"lr": 0.0}, "train.lr"),
            ({"k": 0}, "train.k"),
            ({"batch_episodes": 0}, "train.batch_episodes"),
            ({"fusion": FusionMode.MASK_AVG}, "train.fusion"),
        ):
            with self.assertRaises(ConfigError) as caught:
                TrainConfig(**options)
            assert caught.exception.key == key


class TestFreezePolicy(unittest.TestCase):
    def test_one_shot_freezes_attention(self) -> None:
        state = apply_freeze_policy(tiny_state(), SMALL)
        assert state.is_frozen("backbone")
        assert state.is_frozen("attention")
        assert not state["attention.conv1.weight"].requires_grad

    def test_k_shot_attention_and_trainable_backbone(self) -> None:
        state = apply_freeze_policy(tiny_state(), replace(SMALL, k=2, backbone_frozen=False))
        assert not state.is_frozen("attention")
        assert not state.is_frozen("backbone")
        assert state.is_frozen("backbone.stage4")
        assert state["backbone.stem.weight"].requires_grad
        assert not state["backbone.stage4.block0.conv1.weight"].requires_grad


class TestTrainingStep(unittest.TestCase):
    def setUp(self) -> None:
        self.sampler = tiny_sampler()
        self.batch = list(self.sampler.episodes(Phase.TRAIN, 2))
        self.state = apply_freeze_policy(tiny_state(), SMALL)

    def test_zero_learning_rate_changes_nothing(self) -> None:
        before = self.state.snapshot()
        loss, state, entries = training_step(
            self.batch, self.state, PredictionCache(), SMALL, np.random.default_rng(0), lr=0.0,
        )
        assert state is self.state
        assert loss > 0.0
        assert sorted(entries) == [(Phase.TRAIN, 0), (Phase.TRAIN, 1)]
        assert_same_parameters(before, self.state.snapshot())
        assert all(tensor.grad is None for _, tensor in self.state.named_parameters())

    def test_frozen_groups_keep_their_bits(self) -> None:
        before = self.state.snapshot()
        training_step(self.batch, self.state, PredictionCache(), SMALL, np.random.default_rng(0))
        after = self.state.snapshot()

        for name in before:
            if name.startswith(("backbone.", "attention.")):
                np.testing.assert_array_equal(before[name], after[name], err_msg=name)
        assert not np.array_equal(before["iom.classifier.weight"], after["iom.classifier.weight"])

    def test_first_epoch_predictions_wait_for_rotation(self) -> None:
        cache = PredictionCache()
        _, _, entries = training_step(self.batch, self.state, cache, SMALL, np.random.default_rng(0))

        assert len(cache) == 0
        assert sorted(cache.pending()) == sorted(entries)
        for map in entries.values():
            assert map.shape == (2, 4, 4)
            assert not map.probs.requires_grad

        cache.rotate()
        assert sorted(cache.keys()) == sorted(entries)

    def test_batch_loss_is_a_mean(self) -> None:
        single = apply_freeze_policy(tiny_state(p_r=1.0), SMALL)
        double = apply_freeze_policy(tiny_state(p_r=1.0), SMALL)
        episode = self.batch[0]

        loss_single, _, _ = training_step([episode], single, PredictionCache(), SMALL, np.random.default_rng(0))
        loss_double, _, _ = training_step([episode, episode], double, PredictionCache(), SMALL, np.random.default_rng(0))

        assert np.isclose(loss_single, loss_double, rtol=1e-12)
        first, second = single.snapshot(), double.snapshot()
        for name in first:
            np.testing.assert_allclose(first[name], second[name], rtol=1e-10, atol=1e-14)

    def test_rejects_test_episodes(self) -> None:
        test_episode = self.sampler.episode(Phase.TEST, 0)
        with self.assertRaises(ConfigError):
            training_step([test_episode], self.state, PredictionCache(), SMALL, np.random.default_rng(0))
        with self.assertRaises(ConfigError):
            training_step([], self.state, PredictionCache(), SMALL, np.random.default_rng(0))

    def test_overfits_one_episode(self) -> None:
        cfg = replace(SMALL, lr=0.1)
        state = apply_freeze_policy(tiny_state(seed=3, p_r=1.0), cfg)
        episode = [self.batch[0]]
        rng = np.random.default_rng(0)

        losses = [training_step(episode, state, PredictionCache(), cfg, rng)[0] for _ in range(200)]
        assert np.all(np.isfinite(losses))
        assert min(losses[-10:]) < 0.1 * losses[0]

    def test_sgd_needs_gradients(self) -> None:
        with self.assertRaises(StateError):
            sgd_step(self.state, 0.1)


class TestWarmup(unittest.TestCase):
    def test_head_is_removed_and_freezing_restored(self) -> None:
        state = apply_freeze_policy(tiny_state(), SMALL)
        frozen = state.frozen_groups()
        before = state.snapshot()
        seen = []

        curve = warmup_backbone(state, tiny_sampler(), SMALL, on_epoch=seen.append)

        assert len(curve) == 1 and curve[0] > 0.0
        assert seen == [WarmupEpochCompleted(epoch=1, mean_loss=curve[0])]
        assert "warmup" not in state.groups()
        assert state.frozen_groups() == frozen
        assert list(state.snapshot()) == list(before)
        assert not np.array_equal(before["backbone.stem.weight"], state["backbone.stem.weight"].data)
        np.testing.assert_array_equal(before["comparison.conv.weight"], state["comparison.conv.weight"].data)

    def test_disabled_warmup(self) -> None:
        state = tiny_state()
        before = state.snapshot()
        assert warmup_backbone(state, tiny_sampler(), replace(SMALL, warmup_epochs=0)) == []
        assert_same_parameters(before, state.snapshot())


class TestTrainer(unittest.TestCase):
    def test_training_is_deterministic(self) -> None:
        first, first_curve = train(SMALL, tiny_split(), tiny_state(), sampler=tiny_sampler())
        second, second_curve = train(SMALL, tiny_split(), tiny_state(), sampler=tiny_sampler())

        assert first_curve == second_curve
        assert len(first_curve) == SMALL.epochs * SMALL.steps_per_epoch
        assert_same_parameters(first.snapshot(), second.snapshot())

    def test_frozen_backbone_without_warmup(self) -> None:
        state = tiny_state()
        before = state.snapshot()
        train(replace(SMALL, warmup_epochs=0), tiny_split(), state, sampler=tiny_sampler())

        for name, tensor in state.named_parameters("backbone"):
            np.testing.assert_array_equal(before[name], tensor.data, err_msg=name)
        assert not np.array_equal(before["encoder.conv.weight"], state["encoder.conv.weight"].data)

    def test_events_and_cache(self) -> None:
        trainer = Trainer(replace(SMALL, val_episodes=2), tiny_split(), tiny_state(), sampler=tiny_sampler())
        steps, epochs, warmups = [], [], []

        @trainer.listen(TrainingEvent.STEP_COMPLETED)
        def on_step(event: StepCompleted) -> None:
            steps.append((event.epoch, event.step))

        @trainer.listen(TrainingEvent.EPOCH_COMPLETED)
        def on_epoch(event: EpochCompleted) -> None:
            epochs.append(event)

        trainer.add_listener(TrainingEvent.WARMUP_EPOCH_COMPLETED, warmups.append)
        trainer.run()

        assert steps == [(1, 1), (1, 2), (2, 1), (2, 2)]
        assert [event.epoch for event in epochs] == [1, 2]
        assert all(event.val_mean_iou is not None and 0.0 <= event.val_mean_iou <= 1.0 for event in epochs)
        assert len(warmups) == 1
        assert trainer.epoch == 2
        assert sorted(trainer.cache.keys()) == [(Phase.TRAIN, index) for index in range(4)]
        assert trainer.cache.pending() == {}

    def test_listener_management(self) -> None:
        trainer = Trainer(SMALL, tiny_split(), tiny_state(), sampler=tiny_sampler())
        seen = []

        def broken(event: StepCompleted) -> None:
            raise RuntimeError("listener failure")

        trainer.add_listener(TrainingEvent.STEP_COMPLETED, broken)
        trainer.add_listener(TrainingEvent.STEP_COMPLETED, seen.append)
        trainer.add_listener(TrainingEvent.EPOCH_COMPLETED, seen.append)
        with self.assertRaises(TypeError):
            trainer.add_listener(TrainingEvent.EPOCH_COMPLETED, "not callable")  # type: ignore

        assert trainer.get_listeners(TrainingEvent.STEP_COMPLETED) == [broken, seen.append]
        assert [name for name, _ in trainer.walk_listeners()] == [
            TrainingEvent.STEP_COMPLETED, TrainingEvent.EPOCH_COMPLETED,
        ]

        with self.assertLogs("fewseg.internal.events_handler", level="ERROR"):
            trainer.call_listeners(StepCompleted(epoch=1, step=1, loss=0.5))
        assert seen == [StepCompleted(epoch=1, step=1, loss=0.5)]

        assert trainer.remove_listener(TrainingEvent.STEP_COMPLETED, broken)
        assert not trainer.remove_listener(TrainingEvent.STEP_COMPLETED, broken)
        assert not trainer.remove_listener(TrainingEvent.WARMUP_EPOCH_COMPLETED, broken)
        assert trainer.clear_listeners(TrainingEvent.EPOCH_COMPLETED) == [seen.append]
        assert trainer.get_listeners(TrainingEvent.EPOCH_COMPLETED) == []

        def failing(event: StepCompleted) -> None:
            raise StateError("encoder.conv.weight")

        trainer.add_listener(TrainingEvent.STEP_COMPLETED, failing)
        with self.assertRaises(StateError):
            trainer.call_listeners(StepCompleted(epoch=1, step=2, loss=0.5))

    def test_cached_masks_feed_the_next_epoch(self) -> None:
        cfg = replace(SMALL, warmup_epochs=0, epochs=1)
        trainer = Trainer(cfg, tiny_split(), tiny_state(p_r=0.0), sampler=tiny_sampler())
        trainer.run()

        key = (Phase.TRAIN, 0)
        cached = trainer.cache.get(key)
        assert isinstance(cached, ConfidenceMap) and not cached.empty
        np.testing.assert_allclose(cached.probs.data.sum(axis=0), 1.0)

        batch = trainer.episodes[:2]
        rng = np.random.default_rng(0)
        refined, _, _ = training_step(batch, trainer.state, trainer.cache, cfg, rng, lr=0.0)
        scratch, _, _ = training_step(batch, trainer.state, PredictionCache(), cfg, rng, lr=0.0)
        assert refined != scratch

    def test_k_shot_training_updates_attention(self) -> None:
        cfg = replace(SMALL, k=2, warmup_epochs=0, epochs=1)
        state = tiny_state()
        before = state["attention.conv2.weight"].data.copy()
        train(cfg, tiny_split(), state, sampler=tiny_sampler())
        assert not np.array_equal(before, state["attention.conv2.weight"].data)


if __name__ == "__main__":
    unittest.main()
