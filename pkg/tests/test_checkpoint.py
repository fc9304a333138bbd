import os
import shutil
import struct
import tempfile
import unittest
from dataclasses import replace

import numpy as np

from fewseg.cache import PredictionCache
from fewseg.checkpoint import (
    FORMAT_VERSION,
    MAGIC,
    architecture_mismatch,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
)
from fewseg.enums import Phase
from fewseg.exceptions import CheckpointError
from fewseg.refinement import ConfidenceMap
from fewseg.segmenter import ModelConfig
from fewseg.tensor import Tensor
from fewseg.training import TrainConfig, Trainer

from tests.tiny_model import tiny_config, tiny_sampler, tiny_split, tiny_state

RESUMABLE = TrainConfig(
    epochs=2,
    lr=0.01,
    batch_episodes=2,
    episodes_per_epoch=4,
    warmup_epochs=1,
    warmup_scenes=4,
)


class TestCheckpoint(unittest.TestCase):
    def setUp(self) -> None:
        self.directory = tempfile.mkdtemp()

    def tearDown(self) -> None:
        shutil.rmtree(self.directory)

    def path(self, name: str) -> str:
        return os.path.join(self.directory, name)

    def test_round_trip_is_byte_exact(self) -> None:
        state = tiny_state(seed=5)
        state.freeze("attention")
        save_checkpoint(state, self.path("a.ckpt"), fingerprint="0123456789abcdef")

        loaded = load_checkpoint(self.path("a.ckpt"), tiny_config())
        save_checkpoint(loaded, self.path("b.ckpt"), fingerprint="0123456789abcdef")

        with open(self.path("a.ckpt"), "rb") as first, open(self.path("b.ckpt"), "rb") as second:
            assert first.read() == second.read()

        original = state.snapshot()
        for name, tensor in loaded.named_parameters():
            np.testing.assert_array_equal(tensor.data, original[name])
        assert loaded.frozen_groups() == ["attention", "backbone"]
        assert not loaded["attention.conv1.weight"].requires_grad

    def test_header(self) -> None:
        save_checkpoint(tiny_state(), self.path("a.ckpt"), fingerprint="feedface")
        with open(self.path("a.ckpt"), "rb") as fp:
            assert fp.read(len(MAGIC)) == MAGIC
            assert struct.unpack("<I", fp.read(4))[0] == FORMAT_VERSION

        checkpoint = read_checkpoint(self.path("a.ckpt"))
        assert checkpoint.fingerprint == "feedface"
        assert checkpoint.epoch is None
        assert checkpoint.cache == {}
        assert checkpoint.state.config == tiny_config()

    def test_cache_is_stored(self) -> None:
        cache = PredictionCache()
        rng = np.random.default_rng(0)
        for index in (3, 1):
            foreground = rng.uniform(size=(4, 4))
            cache.add((Phase.TRAIN, index), ConfidenceMap(Tensor(np.stack([1.0 - foreground, foreground]))))
        cache.rotate()

        save_checkpoint(tiny_state(), self.path("a.ckpt"), epoch=7, cache=cache)
        checkpoint = read_checkpoint(self.path("a.ckpt"))

        assert checkpoint.epoch == 7
        assert sorted(checkpoint.cache) == [(Phase.TRAIN, 1), (Phase.TRAIN, 3)]
        for key, map in checkpoint.cache.items():
            np.testing.assert_array_equal(map.probs.data, cache.get(key).probs.data)

    def test_architecture_mismatch(self) -> None:
        save_checkpoint(tiny_state(), self.path("a.ckpt"))
        config = tiny_config()
        wider = ModelConfig(
            backbone=replace(config.backbone, embed_dim=16),
            iom=replace(config.iom, channels=16),
        )
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path("a.ckpt"), wider)

        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path("a.ckpt"), replace(config, iom=replace(config.iom, aspp_rates=(2, 4))))

        # backbone.frozen is not compared.
        thawed = ModelConfig(backbone=replace(config.backbone, frozen=False), iom=config.iom)
        load_checkpoint(self.path("a.ckpt"), thawed)

    def test_runtime_knobs_are_not_architecture(self) -> None:
        save_checkpoint(tiny_state(), self.path("a.ckpt"))
        config = tiny_config()
        other = replace(config, iom=replace(config.iom, inference_iterations=2, p_r=0.3))

        state = load_checkpoint(self.path("a.ckpt"), other)
        assert state.config.iom.inference_iterations == 2
        assert state.config.iom.p_r == 0.3
        assert state.config.iom.channels == config.iom.channels
        assert architecture_mismatch(config, other) is None
        assert architecture_mismatch(config, replace(config, iom=replace(config.iom, num_vanilla_resblocks=2))) == (
            "iom.num_vanilla_resblocks is 1, expected 2"
        )

    def test_resume_ignores_runtime_knobs(self) -> None:
        first = Trainer(replace(RESUMABLE, epochs=1), tiny_split(), tiny_state(), sampler=tiny_sampler(),
                        checkpoint_path=self.path("run.ckpt"))
        first.run()

        resumed = Trainer(RESUMABLE, tiny_split(), tiny_state(p_r=0.2), sampler=tiny_sampler())
        resumed.resume(self.path("run.ckpt"))
        assert resumed.epoch == 1

    def test_corrupt_files(self) -> None:
        save_checkpoint(tiny_state(), self.path("a.ckpt"))
        with open(self.path("a.ckpt"), "rb") as fp:
            payload = fp.read()

        cases = {
            "truncated": payload[:-8],
            "short": payload[:6],
            "magic": b"NOTACKPT" + payload[8:],
            "version": payload[:8] + struct.pack("<I", FORMAT_VERSION + 1) + payload[12:],
            "trailing": payload + b"\x00" * 8,
            "header": payload[:20] + b"[" + payload[21:],
        }
        for name, data in cases.items():
            with open(self.path(name), "wb") as fp:
                fp.write(data)
            with self.assertRaises(CheckpointError, msg=name):
                read_checkpoint(self.path(name))

        with self.assertRaises(CheckpointError):
            read_checkpoint(self.path("missing.ckpt"))

    def test_resume_matches_uninterrupted_run(self) -> None:
        straight = Trainer(RESUMABLE, tiny_split(), tiny_state(p_r=0.5), sampler=tiny_sampler())
        straight.run()

        first = Trainer(replace(RESUMABLE, epochs=1), tiny_split(), tiny_state(p_r=0.5), sampler=tiny_sampler(),
                        checkpoint_path=self.path("run.ckpt"))
        first.run()
        assert read_checkpoint(self.path("run.ckpt")).epoch == 1

        resumed = Trainer(RESUMABLE, tiny_split(), tiny_state(seed=9, p_r=0.5), sampler=tiny_sampler())
        resumed.resume(self.path("run.ckpt"))
        assert resumed.epoch == 1
        assert len(resumed.cache) == RESUMABLE.episodes_per_epoch
        resumed.run()

        expected = straight.state.snapshot()
        for name, tensor in resumed.state.named_parameters():
            np.testing.assert_array_equal(tensor.data, expected[name], err_msg=name)
        assert resumed.loss_curve == straight.loss_curve[RESUMABLE.steps_per_epoch:]

    def test_resume_needs_an_epoch_checkpoint(self) -> None:
        save_checkpoint(tiny_state(), self.path("final.ckpt"))
        trainer = Trainer(RESUMABLE, tiny_split(), tiny_state(), sampler=tiny_sampler())
        with self.assertRaises(CheckpointError):
            trainer.resume(self.path("final.ckpt"))


if __name__ == "__main__":
    unittest.main()
