# Copyright (C) fewseg developers 2024-2026

from __future__ import annotations

from typing import TYPE_CHECKING, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple
from dataclasses import dataclass
from fewseg.backbone import extract_features
from fewseg.cache import EpisodeKey, PredictionCache
from fewseg.checkpoint import architecture_mismatch, read_checkpoint, save_checkpoint
from fewseg.enums import FusionMode, Phase
from fewseg.episodes import ClassSplit, Episode, EpisodeSampler, downsample_labels
from fewseg.evaluation import evaluate
from fewseg.events import EpochCompleted, StepCompleted, WarmupEpochCompleted
from fewseg.exceptions import CheckpointError, ConfigError
from fewseg.internal.events_handler import BE, EventsHandler, Listener, ListenersMixin
from fewseg.internal.helpers import DROPOUT_STREAM, WARMUP_STREAM, derive_rng
from fewseg.ops import conv2d, cross_entropy_spatial, softmax_channels
from fewseg.refinement import ConfidenceMap, iom_step, mask_dropout
from fewseg.segmenter import Segmenter
from fewseg.state import ModelState, sgd_step
from fewseg.tensor import Tensor

import logging
import numpy as np

if TYPE_CHECKING:
    from fewseg.imageio import PathLike
    from fewseg.types import TrainingEventT


__all__ = (
    "TrainConfig",
    "LossPoint",
    "apply_freeze_policy",
    "training_step",
    "warmup_backbone",
    "Trainer",
    "train",
)

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """The episodic training schedule.

    Attributes
    ----------
    epochs: :class:`int`
        Passes over the episode set.
    lr: :class:`float`
        The SGD learning rate.
    batch_episodes: :class:`int`
        Episodes per optimisation step.
    k: :class:`int`
        Support examples per training episode.
    episodes_per_epoch: :class:`int`
        The size of the fixed episode set.
    seed: :class:`int`
        Seeds the episode set, the warm-up scenes and the mask dropout draws.
    backbone_frozen: :class:`bool`
        Whether the backbone is frozen after warm-up.
    warmup_epochs: :class:`int`
        Backbone warm-up epochs; ``0`` skips the warm-up.
    warmup_scenes: :class:`int`
        Scenes in the warm-up set.
    warmup_lr: :class:`float`
        The warm-up learning rate.
    val_episodes: :class:`int`
        Held-out training-class episodes scored after every epoch; ``0`` disables validation.
    fusion: :class:`str`
        The feature-level :class:`FusionMode` used when ``k`` is above one.
    """

    epochs: int = 60
    lr: float = 0.0025
    batch_episodes: int = 4
    k: int = 1
    episodes_per_epoch: int = 400
    seed: int = 0
    backbone_frozen: bool = True
    warmup_epochs: int = 4
    warmup_scenes: int = 200
    warmup_lr: float = 0.01
    val_episodes: int = 0
    fusion: str = FusionMode.ATTENTION

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ConfigError("must not be negative", "train.epochs")
        if not self.lr > 0:
            raise ConfigError("must be positive, got %r" % self.lr, "train.lr")
        if self.batch_episodes < 1:
            raise ConfigError("must be positive", "train.batch_episodes")
        if self.k < 1:
            raise ConfigError("must be positive", "train.k")
        if self.episodes_per_epoch < 1:
            raise ConfigError("must be positive", "train.episodes_per_epoch")
        if self.warmup_epochs < 0 or self.warmup_scenes < 0:
            raise ConfigError("must not be negative", "train.warmup_epochs")
        if not self.warmup_lr > 0:
            raise ConfigError("must be positive, got %r" % self.warmup_lr, "train.warmup_lr")
        if self.val_episodes < 0:
            raise ConfigError("must not be negative", "train.val_episodes")
        if self.fusion not in (FusionMode.ATTENTION, FusionMode.FEATURE_AVG):
            raise ConfigError(
                "training needs a feature-level fusion (attention or feature_avg), got %r" % self.fusion,
                "train.fusion",
            )

    @property
    def steps_per_epoch(self) -> int:
        return -(-self.episodes_per_epoch // self.batch_episodes)

    @property
    def trains_attention(self) -> bool:
        return self.k > 1 and self.fusion == FusionMode.ATTENTION


class LossPoint(NamedTuple):
    """One row of the loss curve."""

    epoch: int
    step: int
    loss: float


def apply_freeze_policy(state: ModelState, cfg: TrainConfig) -> ModelState:
    """Freezes every parameter group that cannot receive gradient in episodic training.

    The backbone follows ``cfg.backbone_frozen``; a trainable backbone
    still has its stage 4 frozen when the block selection does not read
    it. The attention head is frozen unless ``k > 1`` episodes are fused
    by attention.
    """
    if cfg.backbone_frozen:
        state.freeze("backbone")
    else:
        state.unfreeze("backbone")
        if not state.config.backbone.selection.needs_stage4():
            state.freeze("backbone.stage4")

    if cfg.trains_attention:
        state.unfreeze("attention")
    else:
        if cfg.k == 1 and cfg.fusion == FusionMode.ATTENTION:
            _LOGGER.warning("Training with k=1: the attention head receives no gradient and stays at its initial values")
        state.freeze("attention")
    return state


def training_step(
    batch: Sequence[Episode],
    state: ModelState,
    cache: PredictionCache,
    cfg: TrainConfig,
    rng: np.random.Generator,
    *,
    lr: Optional[float] = None,
) -> Tuple[float, ModelState, Dict[EpisodeKey, ConfidenceMap]]:
    """Runs one optimisation step over a batch of training episodes.

    Every episode is compared (and fused when it has several supports),
    its previous prediction is read from ``cache`` or taken as empty and
    passed through :func:`mask_dropout`, and one refinement pass is
    supervised with the spatial cross entropy against the query mask
    reduced to feature resolution. The batch loss is the mean of the
    episode losses; one :func:`sgd_step` follows.

    Parameters
    ----------
    batch: Sequence[:class:`Episode`]
        Training-phase episodes.
    state: :class:`ModelState`
        Updated in place.
    cache: :class:`PredictionCache`
        Receives the new predictions, readable from the next epoch on.
    cfg: :class:`TrainConfig`
        The schedule.
    rng: :class:`numpy.random.Generator`
        Consumed once per episode, in batch order, by :func:`mask_dropout`
        with the reset probability ``state.config.iom.p_r``.
    lr: Optional[:class:`float`]
        Overrides ``cfg.lr``.

    Returns
    -------
    Tuple[:class:`float`, :class:`ModelState`, Dict[:data:`EpisodeKey`, :class:`ConfidenceMap`]]
        The batch loss, the state, and the detached predictions made.

    Raises
    ------
    ConfigError
        The batch is empty or holds a test-phase episode.
    StateError
        A trainable parameter received no gradient.
    """
    if not batch:
        raise ConfigError("a training batch needs at least one episode", "train.batch_episodes")
    for episode in batch:
        if episode.phase != Phase.TRAIN:
            raise ConfigError(
                "episode %r of class %d belongs to the %s split" % (episode.key, episode.class_id, episode.phase),
                "phase",
            )

    segmenter = Segmenter(state)
    state.zero_grad()
    scale = 1.0 / len(batch)
    total = 0.0
    entries: Dict[EpisodeKey, ConfidenceMap] = {}

    for episode in batch:
        feature = segmenter.fused_feature(episode.support, episode.query_image, cfg.fusion)
        _, height, width = feature.map.shape

        previous = cache.get(episode.key)
        if previous is None:
            previous = ConfidenceMap.empty_like(height, width)
        prediction = iom_step(feature, mask_dropout(previous, state.config.iom.p_r, rng), state)

        loss = cross_entropy_spatial(prediction.probs, downsample_labels(episode.query_mask))
        loss.backward(scale)
        total += loss.item()

        entries[episode.key] = prediction.detach()
        cache.add(episode.key, prediction)

    sgd_step(state, cfg.lr if lr is None else lr)
    return total * scale, state, entries


def warmup_backbone(
    state: ModelState,
    sampler: EpisodeSampler,
    cfg: TrainConfig,
    *,
    on_epoch: Optional[Callable[[WarmupEpochCompleted], None]] = None,
) -> List[float]:
    """Pre-trains the backbone by per-pixel classification of training-class scenes.

    A temporary 1x1 head on the stage-4 output predicts, at feature
    resolution, background or one of the training classes against the
    scene label map reduced by 8x8 block majority. Only the backbone and
    the head are trained; the head is removed and the earlier frozen
    groups are restored afterwards.

    Returns
    -------
    List[:class:`float`]
        The mean loss of every warm-up epoch.
    """
    if cfg.warmup_epochs == 0 or cfg.warmup_scenes == 0:
        return []

    split = sampler.split
    lookup = np.zeros(split.num_classes + 1, dtype=np.int64)
    for position, class_id in enumerate(split.train_classes):
        lookup[class_id + 1] = position + 1

    backbone = state.config.backbone
    state.add_conv(
        "warmup.head", backbone.stage_channels[3], len(split.train_classes) + 1, 1, derive_rng(cfg.seed, WARMUP_STREAM)
    )
    previous = state.frozen_groups()
    state.unfreeze(*previous)
    state.freeze(*[group for group in state.groups() if group not in ("backbone", "warmup")])

    scenes = [sampler.scene(index) for index in range(cfg.warmup_scenes)]
    targets = [downsample_labels(lookup[scene.label_map()]) for scene in scenes]
    _LOGGER.info("Warming up the backbone on %d scenes for %d epoch(s)", len(scenes), cfg.warmup_epochs)

    curve: List[float] = []
    try:
        for epoch in range(1, cfg.warmup_epochs + 1):
            losses: List[float] = []
            for start in range(0, len(scenes), cfg.batch_episodes):
                chunk = range(start, min(start + cfg.batch_episodes, len(scenes)))
                state.zero_grad()
                for index in chunk:
                    pair = extract_features(Tensor(scenes[index].image), backbone, state, include_stage4=True)
                    assert pair.f4 is not None
                    probs = softmax_channels(conv2d(pair.f4, state.conv("warmup.head")))
                    loss = cross_entropy_spatial(probs, targets[index])
                    loss.backward(1.0 / len(chunk))
                    losses.append(loss.item())
                sgd_step(state, cfg.warmup_lr)

            curve.append(float(np.mean(losses)))
            _LOGGER.info("Warm-up epoch %d/%d, loss %.4f", epoch, cfg.warmup_epochs, curve[-1])
            if on_epoch is not None:
                on_epoch(WarmupEpochCompleted(epoch=epoch, mean_loss=curve[-1]))
    finally:
        state.remove("warmup")
        state.unfreeze(*state.frozen_groups())
        state.freeze(*previous)
    return curve


class Trainer(ListenersMixin):
    """Runs episodic training over a fixed set of training episodes.

    The episode set holds indices ``0 .. episodes_per_epoch - 1`` of the
    training stream and is the same every epoch, so the prediction made
    for an episode in one epoch is its cached previous mask in the next.

    Events are dispatched synchronously to listeners registered with
    :meth:`listen` or :meth:`add_listener`.

    Parameters
    ----------
    cfg: :class:`TrainConfig`
        The schedule.
    split: :class:`ClassSplit`
        The class partition; only its training classes are seen.
    state: :class:`ModelState`
        The parameters, updated in place.
    sampler: Optional[:class:`EpisodeSampler`]
        The episode stream; a default sampler seeded with ``cfg.seed`` when ``None``.
    checkpoint_path: Optional[:class:`str`]
        Where an epoch checkpoint is written after every epoch.
    fingerprint: :class:`str`
        The run configuration fingerprint stamped into checkpoints.
    threads: :class:`int`
        Worker threads for validation.
    """

    def __init__(
        self,
        cfg: TrainConfig,
        split: ClassSplit,
        state: ModelState,
        *,
        sampler: Optional[EpisodeSampler] = None,
        checkpoint_path: Optional[PathLike] = None,
        fingerprint: str = "",
        threads: int = 1,
    ) -> None:
        self.cfg = cfg
        self.split = split
        self.state = state
        self.sampler = sampler if sampler is not None else EpisodeSampler(split, seed=cfg.seed)
        self.checkpoint_path = checkpoint_path
        self.fingerprint = fingerprint
        self.threads = threads
        self.cache = PredictionCache()
        self.epoch = 0
        self.loss_curve: List[LossPoint] = []
        self.__events_handler = EventsHandler()
        self.__episodes: Optional[List[Episode]] = None

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__} epoch={self.epoch}/{self.cfg.epochs} state={self.state!r}>"

    def _get_events_handler(self) -> EventsHandler:
        return self.__events_handler

    def listen(self, event: TrainingEventT) -> Callable[[Listener[BE]], Listener[BE]]:
        """A decorator for registering an event listener.

        Parameters
        ----------
        event: :class:`types.TrainingEventT`
            The event to listen to.
        """
        def __wrap(func: Listener[BE]) -> Listener[BE]:
            self.add_listener(event, func)
            return func
        return __wrap

    @property
    def episodes(self) -> List[Episode]:
        """The fixed episode set, generated on first use."""
        if self.__episodes is None:
            self.__episodes = list(self.sampler.episodes(Phase.TRAIN, self.cfg.episodes_per_epoch, self.cfg.k))
        return self.__episodes

    def resume(self, path: PathLike) -> None:
        """Continues from an epoch checkpoint written by this trainer.

        Raises
        ------
        CheckpointError
            The file is not an epoch checkpoint or was written for another architecture.
        """
        checkpoint = read_checkpoint(path)
        if checkpoint.epoch is None:
            raise CheckpointError(str(path), "not an epoch checkpoint, it cannot be resumed")
        mismatch = architecture_mismatch(checkpoint.state.config, self.state.config)
        if mismatch is not None:
            raise CheckpointError(str(path), "written for another architecture: " + mismatch)
        if self.fingerprint and checkpoint.fingerprint != self.fingerprint:
            _LOGGER.warning(
                "Resuming from %s written by run %s into run %s", path, checkpoint.fingerprint, self.fingerprint
            )

        for name, tensor in checkpoint.state.named_parameters():
            self.state[name].copy_(tensor)
        self.state.unfreeze(*self.state.frozen_groups())
        self.state.freeze(*checkpoint.state.frozen_groups())
        self.cache.load(checkpoint.cache)
        self.epoch = checkpoint.epoch
        _LOGGER.info("Resumed from %s after epoch %d with %d cached predictions", path, self.epoch, len(self.cache))

    def warmup(self) -> List[float]:
        return warmup_backbone(self.state, self.sampler, self.cfg, on_epoch=self.call_listeners)

    def run_epoch(self) -> float:
        """Trains one epoch and returns its mean step loss."""
        epoch = self.epoch + 1
        episodes = self.episodes
        losses: List[float] = []

        for step in range(1, self.cfg.steps_per_epoch + 1):
            batch = episodes[(step - 1) * self.cfg.batch_episodes:step * self.cfg.batch_episodes]
            rng = derive_rng(self.cfg.seed, DROPOUT_STREAM, epoch, step)
            loss, _, _ = training_step(batch, self.state, self.cache, self.cfg, rng)
            losses.append(loss)
            self.loss_curve.append(LossPoint(epoch, step, loss))
            self.call_listeners(StepCompleted(epoch=epoch, step=step, loss=loss))

        self.cache.rotate()
        self.epoch = epoch
        return float(np.mean(losses))

    def validate(self) -> Optional[float]:
        """The meanIoU on training-class episodes outside the training set, if enabled."""
        if self.cfg.val_episodes == 0:
            return None

        report = evaluate(
            Segmenter(self.state), self.split, Phase.TRAIN, self.cfg.val_episodes,
            k=self.cfg.k, fusion_mode=self.cfg.fusion,
            sampler=self.sampler, start=self.cfg.episodes_per_epoch, threads=self.threads,
        )
        return report.mean_iou

    def run(self) -> Tuple[ModelState, List[LossPoint]]:
        """Trains until ``cfg.epochs`` epochs are complete.

        A fresh trainer warms the backbone up first; a resumed one picks
        up after its last completed epoch.
        """
        if self.epoch == 0:
            self.warmup()
        apply_freeze_policy(self.state, self.cfg)

        while self.epoch < self.cfg.epochs:
            mean_loss = self.run_epoch()
            val_mean_iou = self.validate()
            if val_mean_iou is None:
                _LOGGER.info("Epoch %d/%d, loss %.4f", self.epoch, self.cfg.epochs, mean_loss)
            else:
                _LOGGER.info(
                    "Epoch %d/%d, loss %.4f, validation meanIoU %.4f",
                    self.epoch, self.cfg.epochs, mean_loss, val_mean_iou,
                )

            if self.checkpoint_path is not None:
                save_checkpoint(
                    self.state, self.checkpoint_path,
                    fingerprint=self.fingerprint, epoch=self.epoch, cache=self.cache,
                )
            self.call_listeners(EpochCompleted(epoch=self.epoch, mean_loss=mean_loss, val_mean_iou=val_mean_iou))

        return self.state, self.loss_curve


def train(
    cfg: TrainConfig,
    split: ClassSplit,
    state: ModelState,
    *,
    sampler: Optional[EpisodeSampler] = None,
    checkpoint_path: Optional[PathLike] = None,
    fingerprint: str = "",
) -> Tuple[ModelState, List[LossPoint]]:
    """Warms up and trains ``state`` on the training classes of ``split``.

    The run is a pure function of its arguments: equal inputs give
    bit-identical parameters.

    Returns
    -------
    Tuple[:class:`ModelState`, List[:class:`LossPoint`]]
        The trained state (the same object) and the per-step loss curve.
    """
    return Trainer(cfg, split, state, sampler=sampler, checkpoint_path=checkpoint_path, fingerprint=fingerprint).run()
