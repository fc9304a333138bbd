import math
import unittest

import numpy as np

from fewseg.enums import AnnotationMode, FusionMode, Phase
from fewseg.evaluation import EvalReport, evaluate, evaluate_episode, foreground_baseline, multi_scale_predict, scaled_size
from fewseg.exceptions import ConfigError, ShapeError
from fewseg.metrics import EpisodeResult, IoUAccumulator, episode_result, fb_iou, iou, mean_iou
from fewseg.ops import resize_array
from fewseg.protocols import SupportsPredict
from fewseg.refinement import ConfidenceMap
from fewseg.segmenter import Segmenter, one_hot_map
from fewseg.tensor import Tensor

from tests.tiny_model import tiny_sampler, tiny_split, tiny_state


class Oracle:
    """Predicts the ground truth, resampled to the query image it is given."""

    def predict_maps(self, episode, *, fusion, iterations=None):
        _, height, width = episode.query_image.shape
        probs = resize_array(one_hot_map(episode.query_mask).probs.data, height, width)
        return [ConfidenceMap(Tensor(probs))]


class Everything:
    def predict_maps(self, episode, *, fusion, iterations=None):
        _, height, width = episode.query_image.shape
        return [ConfidenceMap(Tensor(np.stack([np.zeros((height, width)), np.ones((height, width))])))]


class TestIoU(unittest.TestCase):
    def test_hand_cases(self) -> None:
        pred = np.zeros((4, 4), dtype=np.uint8)
        gt = np.zeros((4, 4), dtype=np.uint8)
        assert iou(pred, gt) == 1.0

        gt[:2, :2] = 1
        assert iou(pred, gt) == 0.0
        assert iou(gt, gt) == 1.0

        pred[:2, :4] = 1
        assert iou(pred, gt) == 0.5

        with self.assertRaises(ShapeError):
            iou(pred, np.zeros((4, 5), dtype=np.uint8))

    def test_episode_result_counts_background(self) -> None:
        pred = np.zeros((4, 4), dtype=np.uint8)
        pred[:2, :4] = 1
        gt = np.zeros((4, 4), dtype=np.uint8)
        gt[:2, :2] = 1

        result = episode_result(3, pred, gt)
        assert result == EpisodeResult(3, 4, 8, 8, 12)

    def test_mean_iou_sums_before_dividing(self) -> None:
        rows = [(0, 1, 2), (0, 3, 4), (1, 0, 5)]
        per_class, mean = mean_iou(rows)
        assert per_class == {0: 4 / 6, 1: 0.0}
        assert math.isclose(mean, (4 / 6) / 2)

    def test_mean_iou_weighs_classes_equally(self) -> None:
        rows = [(0, 1, 1)] * 9 + [(1, 0, 1)]
        assert mean_iou(rows)[1] == 0.5
        assert mean_iou([]) == ({}, 0.0)

    def test_fb_iou(self) -> None:
        results = [EpisodeResult(0, 2, 4, 6, 8), EpisodeResult(1, 2, 4, 2, 8)]
        assert fb_iou(results) == 0.5 * (4 / 8 + 8 / 16)

    def test_accumulator_order_does_not_matter(self) -> None:
        rng = np.random.default_rng(0)
        rows = [EpisodeResult(int(rng.integers(3)), int(i), int(u), int(b), int(b) + 1)
                for i, u, b in rng.integers(1, 20, size=(12, 3))]

        first, second = IoUAccumulator(), IoUAccumulator()
        for row in rows[:5]:
            first.add(row)
        for row in rows[5:]:
            second.add(row)
        second.merge(first)

        reference = IoUAccumulator()
        for row in reversed(rows):
            reference.add(row)

        assert len(second) == 12
        assert second.mean_iou() == reference.mean_iou()
        assert math.isclose(second.fb_iou(), reference.fb_iou())


class TestEvaluation(unittest.TestCase):
    def test_protocol(self) -> None:
        assert isinstance(Oracle(), SupportsPredict)
        assert isinstance(Segmenter(tiny_state()), SupportsPredict)
        assert not isinstance(object(), SupportsPredict)

    def test_oracle_scores_perfectly(self) -> None:
        report = evaluate(Oracle(), tiny_split(), Phase.TEST, 6, seed=3, image_size=32, min_area=8)
        assert report.mean_iou == 1.0
        assert report.fb_iou == 1.0
        assert report.episodes_evaluated == 6
        assert sum(report.class_episodes.values()) == 6
        assert set(report.per_class_iou) <= {0, 1}

    def test_all_foreground_matches_baseline(self) -> None:
        sampler = tiny_sampler(seed=4)
        report = evaluate(Everything(), tiny_split(), Phase.TEST, 8, sampler=sampler)
        baseline = foreground_baseline(sampler.episodes(Phase.TEST, 8))
        assert math.isclose(report.mean_iou, baseline)
        assert 0.0 < baseline < 0.7

    def test_multi_scale_keeps_resolution(self) -> None:
        episode = tiny_sampler().episode(Phase.TEST, 0)
        final = multi_scale_predict(Oracle(), episode, (1.0, 2.0, 0.5))
        assert final.shape == (2, 32, 32)
        np.testing.assert_allclose(final.probs.data.sum(axis=0), 1.0)

        result = evaluate_episode(Oracle(), episode, scales=(1.0, 2.0))
        assert result.intersection / result.union > 0.95

    def test_scaled_size(self) -> None:
        assert scaled_size(64, 64, 1.0) == (64, 64)
        assert scaled_size(64, 64, 1.25) == (80, 80)
        assert scaled_size(64, 48, 0.7) == (48, 32)
        with self.assertRaises(ConfigError):
            scaled_size(32, 32, 0.25)

    def test_rejects_bad_options(self) -> None:
        split = tiny_split()
        with self.assertRaises(ConfigError):
            evaluate(Oracle(), split, Phase.TEST, 0)
        with self.assertRaises(ConfigError):
            evaluate(Oracle(), split, "validation", 1)
        with self.assertRaises(ConfigError):
            evaluate(Oracle(), split, Phase.TEST, 1, fusion_mode="vote")
        with self.assertRaises(ConfigError):
            evaluate(Oracle(), split, Phase.TEST, 1, annotation_mode="scribble")
        with self.assertRaises(ConfigError):
            evaluate(Oracle(), split, Phase.TEST, 1, scales=(0.25,), image_size=32)

    def test_thread_count_does_not_change_report(self) -> None:
        model = Segmenter(tiny_state(seed=2))
        options = dict(k=2, fusion_mode=FusionMode.ATTENTION, sampler=tiny_sampler(seed=5), iterations=1)
        serial = evaluate(model, tiny_split(), Phase.TEST, 4, threads=1, **options)
        parallel = evaluate(model, tiny_split(), Phase.TEST, 4, threads=3, **options)
        assert serial.to_dict() == parallel.to_dict()

    def test_box_annotation_runs(self) -> None:
        model = Segmenter(tiny_state())
        report = evaluate(model, tiny_split(), Phase.TEST, 2, annotation_mode=AnnotationMode.BBOX,
                          sampler=tiny_sampler(), iterations=0)
        assert report.options["annotation"] == AnnotationMode.BBOX
        assert 0.0 <= report.mean_iou <= 1.0

    def test_report_rendering(self) -> None:
        results = [EpisodeResult(0, 1, 2, 3, 4), EpisodeResult(1, 2, 2, 5, 5)]
        report = EvalReport.from_results(results, "abc123", {"k": 1})
        payload = report.to_dict()

        assert payload["fingerprint"] == "abc123"
        assert payload["episodes"] == 2
        assert payload["classes"] == [
            {"class_id": 0, "iou": 0.5, "episodes": 1},
            {"class_id": 1, "iou": 1.0, "episodes": 1},
        ]
        assert payload["mean_iou"] == 0.75

        table = report.table()
        assert "fingerprint abc123" in table
        assert "meanIoU  0.7500" in table


if __name__ == "__main__":
    unittest.main()
