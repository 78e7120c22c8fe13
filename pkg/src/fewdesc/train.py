"""Episodic meta-training of the threshold predictor.

Episodes are sampled from a pool of labeled descriptor sets, the loss is the
mean query cross-entropy, and gradients are hand-derived with respect to the
threshold network's parameters only: the support selection and the
per-descriptor discriminative scores are constants of an episode (the hard
top-K and the max make them non-differentiable), so no gradient flows into
the descriptors themselves.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .core import (
    DescriptorSet,
    Episode,
    InvalidConfigError,
    InvalidInputError,
    NumericalFailureError,
    PoolExhaustedError,
)
from .cds import MODES, CdsSelection, SupportPool, select_top_k
from .query import (
    SCORE_FORMS,
    LEAKY_SLOPE,
    ThresholdMlp,
    _forward,
    _loss_from_forward,
    episode_scores,
)

__all__ = [
    "EpisodePool",
    "TrainConfig",
    "MlpGradients",
    "AdamState",
    "sample_episode",
    "loss_and_gradients",
    "adam_update",
    "learning_rate_at",
    "meta_train",
    "evaluate",
]


@dataclass
class EpisodePool:
    """Labeled descriptor sets grouped by class, the source of episodes.

    ``classes`` maps a label to a (num_images, per_image, d) array. The
    insertion order of labels is the sampling order and must therefore be
    deterministic for reproducible runs. ``background_mask`` is ground truth
    attached by the synthetic generator (True where a within-image position
    holds a shared-background descriptor); real data leaves it None.
    """

    classes: dict[str, np.ndarray]
    split: str = "train"
    background_mask: np.ndarray | None = None

    def __post_init__(self):
        if self.split not in ("train", "val", "test"):
            raise InvalidConfigError(f"split must be train/val/test, got {self.split!r}")
        if not self.classes:
            raise InvalidInputError("episode pool has no classes")
        cleaned: dict[str, np.ndarray] = {}
        shapes = set()
        for label, arr in self.classes.items():
            a = np.asarray(arr, dtype=np.float64)
            if a.ndim != 3 or a.shape[0] < 1:
                raise InvalidInputError(f"class {label!r} must be (images, per_image, d), got {a.shape}")
            if not np.all(np.isfinite(a)):
                raise InvalidInputError(f"class {label!r} contains non-finite values")
            shapes.add(a.shape[1:])
            cleaned[str(label)] = a
        if len(shapes) > 1:
            raise InvalidInputError(f"classes disagree on (per_image, d): {sorted(shapes)}")
        self.classes = cleaned

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(self.classes.keys())

    @property
    def per_image(self) -> int:
        return int(next(iter(self.classes.values())).shape[1])

    @property
    def dim(self) -> int:
        return int(next(iter(self.classes.values())).shape[2])


@dataclass(frozen=True)
class TrainConfig:
    """Episode geometry, selection settings and optimizer hyperparameters.

    ``sharpness`` is the steepness of the query weights map. Defaults follow
    the usual episodic protocol: 15 queries per class, Adam at 1e-3 decayed
    by 0.1 every 10 epochs for 30 epochs, one update per episode.
    """

    way: int = 5
    shot: int = 5
    queries: int = 15
    k_fraction: float = 0.02
    sharpness: float = 20.0
    score_form: str = "weighted-sim"
    mode: str = "raw"
    hidden_dim: int | None = None
    learning_rate: float = 1e-3
    lr_decay: float = 0.1
    lr_decay_every: int = 10
    epochs: int = 30
    episodes_per_epoch: int = 200
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.way < 2:
            raise InvalidConfigError("way must be at least 2")
        if self.shot < 1 or self.queries < 1:
            raise InvalidConfigError("shot and queries must be positive")
        if not 0.0 < self.k_fraction <= 1.0:
            raise InvalidConfigError(f"k_fraction must lie in (0, 1], got {self.k_fraction}")
        if self.sharpness < 0.0:
            raise InvalidConfigError("sharpness must be nonnegative")
        if self.score_form not in SCORE_FORMS:
            raise InvalidConfigError(f"score_form must be one of {SCORE_FORMS}")
        if self.mode not in MODES:
            raise InvalidConfigError(f"mode must be one of {MODES}")
        if self.learning_rate <= 0.0:
            raise InvalidConfigError("learning rate must be positive")
        if not 0.0 < self.lr_decay <= 1.0 or self.lr_decay_every < 1:
            raise InvalidConfigError("invalid learning-rate decay settings")
        if self.epochs < 1 or self.episodes_per_epoch < 0:
            raise InvalidConfigError("epochs must be >= 1 and episodes_per_epoch >= 0")
        if self.seed < 0:
            raise InvalidConfigError("seed must be nonnegative")


def sample_episode(pool: EpisodePool, cfg: TrainConfig, rng: np.random.Generator) -> Episode:
    """Draw an n-way k-shot episode: classes, then support/query images, all
    without replacement. Fully determined by the generator state."""
    need = cfg.shot + cfg.queries
    eligible = [label for label in pool.labels if pool.classes[label].shape[0] >= need]
    if len(eligible) < cfg.way:
        raise PoolExhaustedError(
            f"need {cfg.way} classes with >= {need} images, pool offers {len(eligible)}"
        )
    picked = rng.choice(len(eligible), size=cfg.way, replace=False)
    m = pool.per_image
    support, query_sets, query_labels = [], [], []
    for slot, class_idx in enumerate(picked):
        images = pool.classes[eligible[int(class_idx)]]
        rows = rng.choice(images.shape[0], size=need, replace=False)
        sup = images[rows[: cfg.shot]]
        support.append(DescriptorSet(sup.reshape(cfg.shot * m, -1), cfg.shot, m))
        for r in rows[cfg.shot :]:
            query_sets.append(DescriptorSet(images[int(r)], 1, m))
            query_labels.append(slot)
    return Episode(cfg.way, cfg.shot, tuple(support), tuple(query_sets), tuple(query_labels))


@dataclass
class MlpGradients:
    """Loss gradients, one array per network parameter."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def max_abs(self) -> float:
        return max(
            float(np.max(np.abs(self.w1))), float(np.max(np.abs(self.b1))),
            float(np.max(np.abs(self.w2))), float(np.abs(self.b2)),
        )


def loss_and_gradients(episode: Episode, selection: CdsSelection, mlp: ThresholdMlp,
                       cfg: TrainConfig) -> tuple[float, MlpGradients]:
    """Episode loss and its analytic gradients w.r.t. the network parameters.

    Matches ``episode_scores(...).loss`` exactly; the backward pass runs
    through posterior -> class scores -> weights -> thresholds -> affine
    layers. Selection and per-descriptor discriminative scores are constants.
    """
    fwd, _ = _forward(episode, selection, mlp, cfg.sharpness, cfg.score_form)
    loss = _loss_from_forward(fwd)

    q_count, m, n = fwd.n_queries, fwd.per_image, fwd.sims.shape[2]
    grad_scores = fwd.posteriors.copy()
    grad_scores[np.arange(q_count), fwd.labels] -= 1.0
    grad_scores /= q_count

    weights = fwd.weights
    thresholds = fwd.thresholds
    dweight_dthresh = -cfg.sharpness * weights * (1.0 - weights)

    if cfg.score_form == "weighted-sim":
        dloss_dweight = np.einsum("qn,qmn->qm", grad_scores, fwd.sims).reshape(-1)
        dthresh = dloss_dweight * dweight_dthresh
    else:
        flat_q = np.repeat(np.arange(q_count), m)
        upstream = grad_scores[flat_q, fwd.share_argmax.reshape(-1)]
        dthresh = upstream * (weights + thresholds * dweight_dthresh)

    draw = dthresh * thresholds * (1.0 - thresholds)
    dw2 = draw @ fwd.hidden
    db2 = np.asarray(draw.sum())
    dhidden = np.outer(draw, mlp.w2)
    dz = dhidden * np.where(fwd.z > 0.0, 1.0, LEAKY_SLOPE)
    dw1 = dz.T @ fwd.inputs
    db1 = dz.sum(axis=0)

    grads = MlpGradients(dw1, db1, dw2, db2)
    for g in (dw1, db1, dw2, db2):
        if not np.all(np.isfinite(g)):
            raise NumericalFailureError("non-finite gradient in episode update")
    return loss, grads


@dataclass
class AdamState:
    """First/second moment estimates plus the step counter."""

    mean: MlpGradients
    var: MlpGradients
    step: int = 0

    @classmethod
    def for_mlp(cls, mlp: ThresholdMlp) -> "AdamState":
        def zeros() -> MlpGradients:
            return MlpGradients(
                np.zeros_like(mlp.w1), np.zeros_like(mlp.b1),
                np.zeros_like(mlp.w2), np.zeros_like(mlp.b2),
            )

        return cls(mean=zeros(), var=zeros())


def adam_update(mlp: ThresholdMlp, grads: MlpGradients, state: AdamState,
                lr: float, cfg: TrainConfig) -> None:
    """One in-place Adam step with bias correction."""
    state.step += 1
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
    corr1 = 1.0 - b1 ** state.step
    corr2 = 1.0 - b2 ** state.step
    for name in ("w1", "b1", "w2", "b2"):
        g = getattr(grads, name)
        mean = getattr(state.mean, name)
        var = getattr(state.var, name)
        mean *= b1
        mean += (1.0 - b1) * g
        var *= b2
        var += (1.0 - b2) * g * g
        update = lr * (mean / corr1) / (np.sqrt(var / corr2) + eps)
        setattr(mlp, name, getattr(mlp, name) - update)


def learning_rate_at(cfg: TrainConfig, epoch: int) -> float:
    """Effective rate for a 1-based epoch: base * decay^floor((epoch-1)/every)."""
    if epoch < 1:
        raise InvalidConfigError("epoch numbering starts at 1")
    return cfg.learning_rate * cfg.lr_decay ** ((epoch - 1) // cfg.lr_decay_every)


def meta_train(pool: EpisodePool, cfg: TrainConfig,
               log_fn=None) -> tuple[ThresholdMlp, list[str]]:
    """Run episodic training and return the trained network plus the log.

    One Adam step per sampled episode. The log holds one tab-separated line
    per epoch: epoch, mean loss, current learning rate, wall-clock seconds.
    A fixed seed makes the whole run (sampling, init, updates) reproducible.
    """
    rng = np.random.default_rng(cfg.seed)
    hidden = cfg.hidden_dim if cfg.hidden_dim is not None else pool.dim
    mlp = ThresholdMlp.init(pool.dim, hidden, rng)
    state = AdamState.for_mlp(mlp)
    log: list[str] = []
    for epoch in range(1, cfg.epochs + 1):
        lr = learning_rate_at(cfg, epoch)
        started = time.perf_counter()
        losses = []
        for episode_idx in range(cfg.episodes_per_epoch):
            episode = sample_episode(pool, cfg, rng)
            support = SupportPool.from_episode(episode, cfg.mode)
            selection = select_top_k(support, cfg.k_fraction)
            try:
                loss, grads = loss_and_gradients(episode, selection, mlp, cfg)
            except NumericalFailureError as err:
                raise NumericalFailureError(
                    f"{err} (epoch {epoch}, episode {episode_idx}, seed {cfg.seed})"
                ) from err
            adam_update(mlp, grads, state, lr, cfg)
            losses.append(loss)
        mean_loss = float(np.mean(losses)) if losses else math.nan
        line = f"{epoch}\t{mean_loss:.6f}\t{lr:.6g}\t{time.perf_counter() - started:.3f}"
        log.append(line)
        if log_fn is not None:
            log_fn(line)
    return mlp, log


def _episode_accuracy(episode: Episode, mlp: ThresholdMlp, cfg: TrainConfig) -> float:
    support = SupportPool.from_episode(episode, cfg.mode)
    selection = select_top_k(support, cfg.k_fraction)
    ev = episode_scores(episode, selection, mlp, cfg.sharpness, cfg.score_form)
    predicted = ev.posteriors.argmax(axis=1)
    return float(np.mean(predicted == np.asarray(episode.query_labels)))


def evaluate(pool: EpisodePool, mlp: ThresholdMlp, cfg: TrainConfig,
             episodes: int, repeats: int = 1, seed: int | None = None) -> tuple[float, float]:
    """Mean query accuracy over sampled episodes, with a 95% interval.

    Returns (mean accuracy, half-width). The half-width is
    1.96 * stddev(per-repeat means) / sqrt(repeats), zero for a single
    repeat. Parameters are never modified.
    """
    if episodes < 1 or repeats < 1:
        raise InvalidConfigError("episodes and repeats must be positive")
    base_seed = cfg.seed if seed is None else seed
    repeat_means = []
    for rep in range(repeats):
        rng = np.random.default_rng([base_seed, rep])
        accs = [
            _episode_accuracy(sample_episode(pool, cfg, rng), mlp, cfg)
            for _ in range(episodes)
        ]
        repeat_means.append(float(np.mean(accs)))
    mean = float(np.mean(repeat_means))
    if repeats == 1:
        return mean, 0.0
    half = 1.96 * float(np.std(repeat_means, ddof=1)) / math.sqrt(repeats)
    return mean, half
