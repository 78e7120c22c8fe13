"""Query-descriptor scoring against the selected support descriptors.

For every query descriptor the pipeline computes its summed cosine similarity
to each class's selected support set, a discriminative score (largest share
of the similarity mass), a learned per-descriptor threshold from a small
two-layer network, and a soft selection weight: a steep logistic in
(score - threshold). Class scores, posteriors and the cross-entropy loss
follow from the weighted similarities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    DegenerateDescriptorError,
    Episode,
    InvalidConfigError,
    InvalidInputError,
    as_descriptor,
    sigmoid,
    unit_rows,
)
from .cds import CdsSelection, _cosines_to_row

__all__ = [
    "LEAKY_SLOPE",
    "SCORE_FORMS",
    "ThresholdMlp",
    "QueryEvaluation",
    "class_similarity",
    "query_disc_score",
    "pooled_context",
    "predict_threshold",
    "weights_map",
    "episode_scores",
]

LEAKY_SLOPE = 0.01  # negative-side slope of the hidden activation

SCORE_FORMS = ("weighted-sim", "literal")


@dataclass
class ThresholdMlp:
    """Two-layer threshold predictor: 2d inputs -> hidden -> scalar.

    The input is a query descriptor concatenated with a context vector (both
    L2-normalized), the hidden activation is leaky ReLU, and the caller maps
    the unbounded raw output through a sigmoid to get a threshold in (0, 1).
    ``b2`` is kept as a 0-d array so parameters, gradients and optimizer state
    all share one layout.
    """

    w1: np.ndarray  # (hidden, 2d)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: np.ndarray  # ()

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = np.asarray(self.b2, dtype=np.float64).reshape(())
        if self.w1.ndim != 2:
            raise InvalidInputError(f"w1 must be 2-D (hidden, 2d), got shape {self.w1.shape}")
        hidden, in_dim = self.w1.shape
        if in_dim % 2 != 0 or in_dim < 2:
            raise InvalidInputError(f"w1 input width must be an even 2d, got {in_dim}")
        if self.b1.shape != (hidden,) or self.w2.shape != (hidden,):
            raise InvalidInputError("b1 and w2 must both have shape (hidden,)")
        for name, p in (("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2)):
            if not np.all(np.isfinite(p)):
                raise InvalidInputError(f"{name} contains non-finite values")

    @classmethod
    def init(cls, dim: int, hidden: int | None = None, rng: np.random.Generator | None = None) -> "ThresholdMlp":
        """Seeded uniform init in +-1/sqrt(fan_in) per layer; hidden defaults to dim."""
        if dim < 1:
            raise InvalidConfigError("descriptor dimension must be positive")
        hidden = dim if hidden is None else int(hidden)
        if hidden < 1:
            raise InvalidConfigError("hidden width must be positive")
        rng = np.random.default_rng() if rng is None else rng
        fan1 = 2 * dim
        lim1 = 1.0 / np.sqrt(fan1)
        lim2 = 1.0 / np.sqrt(hidden)
        return cls(
            w1=rng.uniform(-lim1, lim1, size=(hidden, fan1)),
            b1=rng.uniform(-lim1, lim1, size=hidden),
            w2=rng.uniform(-lim2, lim2, size=hidden),
            b2=rng.uniform(-lim2, lim2, size=()),
        )

    @classmethod
    def zeros(cls, dim: int, hidden: int | None = None) -> "ThresholdMlp":
        hidden = dim if hidden is None else int(hidden)
        return cls(np.zeros((hidden, 2 * dim)), np.zeros(hidden), np.zeros(hidden), np.zeros(()))

    @property
    def input_dim(self) -> int:
        return int(self.w1.shape[1])

    @property
    def descriptor_dim(self) -> int:
        return self.input_dim // 2

    @property
    def hidden_dim(self) -> int:
        return int(self.w1.shape[0])

    def clone(self) -> "ThresholdMlp":
        return ThresholdMlp(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def forward_parts(self, x: np.ndarray):
        """Pre-activations, hidden activations and raw outputs for rows of x."""
        z = x @ self.w1.T + self.b1
        h = np.where(z > 0.0, z, LEAKY_SLOPE * z)
        raw = h @ self.w2 + self.b2
        return z, h, raw


def class_similarity(lq, selection: CdsSelection) -> np.ndarray:
    """Summed cosine similarity of one query descriptor to each class's selection.

    A sum rather than a mean: selection sizes are equal across classes, so the
    values stay comparable.
    """
    vec = as_descriptor(lq)
    if vec.shape[0] != selection.dim:
        raise InvalidInputError(f"dimension mismatch: query d={vec.shape[0]}, selection d={selection.dim}")
    sims = np.empty(selection.way)
    for c, rows in enumerate(selection.descriptors):
        sims[c] = _cosines_to_row(rows, vec).sum()
    return sims


def _normalized_share(sims: np.ndarray) -> tuple[np.ndarray, bool]:
    """Each class's share of the similarity mass; uniform when the mass is zero."""
    denom = sims.sum()
    if denom == 0.0:
        n = sims.shape[0]
        return np.full(n, 1.0 / n), True
    return sims / denom, False


def query_disc_score(sims) -> float:
    """Largest class share of one query descriptor's similarity mass.

    A zero similarity mass (all sums canceling) degrades to the uniform value
    1/n instead of raising, so training never sees NaNs.
    """
    arr = np.asarray(sims, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 2:
        raise InvalidInputError("need similarities for at least 2 classes")
    share, _ = _normalized_share(arr)
    return float(share.max())


def pooled_context(selection: CdsSelection) -> np.ndarray:
    """Mean of all selected support descriptors across classes (a d-vector)."""
    return selection.pooled().mean(axis=0)


def predict_threshold(mlp: ThresholdMlp, lq, selection: CdsSelection) -> float:
    """Threshold in (0, 1) for one query descriptor.

    The network sees the L2-normalized query descriptor concatenated with the
    L2-normalized pooled context, which keeps the whole pipeline invariant to
    positive rescaling of the descriptors.
    """
    vec = as_descriptor(lq)
    if 2 * vec.shape[0] != mlp.input_dim:
        raise InvalidInputError(f"network expects input 2d={mlp.input_dim}, query has d={vec.shape[0]}")
    if vec.shape[0] != selection.dim:
        raise InvalidInputError(f"dimension mismatch: query d={vec.shape[0]}, selection d={selection.dim}")
    ctx = pooled_context(selection)
    x = np.concatenate([unit_rows(vec[None, :])[0], unit_rows(ctx[None, :])[0]])
    _, _, raw = mlp.forward_parts(x[None, :])
    return float(sigmoid(raw[0]))


def weights_map(disc, threshold, sharpness: float):
    """Soft selection weight: logistic of sharpness * (disc - threshold).

    Large sharpness turns this into a hard gate: weight -> 1 where the
    descriptor's score clears its threshold, -> 0 where it does not.
    """
    if sharpness < 0.0:
        raise InvalidConfigError(f"sharpness must be nonnegative, got {sharpness}")
    return sigmoid(sharpness * (np.asarray(disc, dtype=np.float64) - np.asarray(threshold, dtype=np.float64)))


@dataclass(frozen=True)
class QueryEvaluation:
    """Everything the query pipeline produces for one episode.

    Arrays are stacked over the Q query images and their m descriptors:
    ``sims`` (Q, m, n), ``disc``/``thresholds``/``weights``/``degenerate``
    (Q, m), ``scores``/``posteriors`` (Q, n). ``degenerate`` marks descriptors
    whose similarity mass was zero and were assigned the uniform share.
    ``loss`` is the mean cross-entropy over query images.
    """

    sims: np.ndarray
    disc: np.ndarray
    thresholds: np.ndarray
    weights: np.ndarray
    degenerate: np.ndarray
    scores: np.ndarray
    posteriors: np.ndarray
    loss: float


class _EpisodeForward:
    """Intermediates of one episode evaluation, kept for backpropagation."""

    __slots__ = (
        "inputs", "z", "hidden", "raw", "thresholds", "weights",
        "sims", "disc", "share_argmax", "scores", "posteriors",
        "labels", "n_queries", "per_image",
    )


def _check_episode_inputs(episode: Episode, selection: CdsSelection, mlp: ThresholdMlp,
                          sharpness: float, score_form: str) -> None:
    if score_form not in SCORE_FORMS:
        raise InvalidConfigError(f"score_form must be one of {SCORE_FORMS}, got {score_form!r}")
    if sharpness < 0.0:
        raise InvalidConfigError(f"sharpness must be nonnegative, got {sharpness}")
    if selection.way != episode.way:
        raise InvalidInputError(f"selection covers {selection.way} classes, episode has {episode.way}")
    if selection.dim != episode.dim:
        raise InvalidInputError(f"dimension mismatch: selection d={selection.dim}, episode d={episode.dim}")
    if mlp.input_dim != 2 * episode.dim:
        raise InvalidInputError(f"network expects input 2d={mlp.input_dim}, episode has d={episode.dim}")
    if not episode.query_sets:
        raise InvalidInputError("episode has no query images")


def _forward(episode: Episode, selection: CdsSelection, mlp: ThresholdMlp,
             sharpness: float, score_form: str) -> tuple[_EpisodeForward, np.ndarray]:
    _check_episode_inputs(episode, selection, mlp, sharpness, score_form)
    n = episode.way
    m = episode.per_image
    n_queries = len(episode.query_sets)

    sel_raw = selection.pooled()
    sel_sizes = [rows.shape[0] for rows in selection.descriptors]
    bounds = np.cumsum([0] + sel_sizes)
    ctx_unit = unit_rows(pooled_context(selection)[None, :])[0]

    q_raw = np.vstack([q.values for q in episode.query_sets])  # (Q*m, d)
    q_units = unit_rows(q_raw)
    ss_query = np.einsum("ij,ij->i", q_raw, q_raw)
    ss_sel = np.einsum("ij,ij->i", sel_raw, sel_raw)
    if np.any(ss_sel == 0.0):
        raise DegenerateDescriptorError("zero-norm descriptor among the selected support rows")
    # sqrt of the product keeps exactly parallel pairs at exactly +-1
    pair = np.clip((q_raw @ sel_raw.T) / np.sqrt(np.outer(ss_query, ss_sel)), -1.0, 1.0)
    sims = np.stack([pair[:, bounds[c]:bounds[c + 1]].sum(axis=1) for c in range(n)], axis=1)  # (Q*m, n)

    mass = sims.sum(axis=1)
    degenerate = mass == 0.0
    share = np.empty_like(sims)
    share[degenerate] = 1.0 / n
    safe = ~degenerate
    share[safe] = sims[safe] / mass[safe, None]
    disc = share.max(axis=1)
    share_argmax = share.argmax(axis=1)

    inputs = np.hstack([q_units, np.broadcast_to(ctx_unit, q_units.shape)])  # (Q*m, 2d)
    z, hidden, raw = mlp.forward_parts(inputs)
    thresholds = sigmoid(raw)
    weights = sigmoid(sharpness * (disc - thresholds))

    if score_form == "weighted-sim":
        scores = np.einsum("qmn,qm->qn", sims.reshape(n_queries, m, n), weights.reshape(n_queries, m))
    else:
        contrib = (thresholds * weights).reshape(n_queries, m)
        scores = np.zeros((n_queries, n))
        flat_q = np.repeat(np.arange(n_queries), m)
        np.add.at(scores, (flat_q, share_argmax), contrib.reshape(-1))

    shifted = scores - scores.max(axis=1, keepdims=True)
    expo = np.exp(shifted)
    posteriors = expo / expo.sum(axis=1, keepdims=True)

    fwd = _EpisodeForward()
    fwd.inputs = inputs
    fwd.z = z
    fwd.hidden = hidden
    fwd.raw = raw
    fwd.thresholds = thresholds
    fwd.weights = weights
    fwd.sims = sims.reshape(n_queries, m, n)
    fwd.disc = disc.reshape(n_queries, m)
    fwd.share_argmax = share_argmax.reshape(n_queries, m)
    fwd.scores = scores
    fwd.posteriors = posteriors
    fwd.labels = np.asarray(episode.query_labels, dtype=np.int64)
    fwd.n_queries = n_queries
    fwd.per_image = m
    return fwd, degenerate.reshape(n_queries, m)


def _loss_from_forward(fwd: _EpisodeForward) -> float:
    shifted = fwd.scores - fwd.scores.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(fwd.n_queries), fwd.labels]
    return float(np.mean(log_norm - picked))


def episode_scores(episode: Episode, selection: CdsSelection, mlp: ThresholdMlp,
                   sharpness: float = 20.0, score_form: str = "weighted-sim") -> QueryEvaluation:
    """Evaluate the query pipeline on one episode.

    ``score_form`` picks how per-descriptor quantities combine into a class
    score: "weighted-sim" sums weight * similarity over all descriptors for
    every class; "literal" sums threshold * weight over the descriptors whose
    best class share points at that class.
    """
    fwd, degenerate = _forward(episode, selection, mlp, sharpness, score_form)
    loss = _loss_from_forward(fwd)

    def freeze(a: np.ndarray) -> np.ndarray:
        out = np.array(a, copy=True)
        out.flags.writeable = False
        return out

    q, m = fwd.n_queries, fwd.per_image
    return QueryEvaluation(
        sims=freeze(fwd.sims),
        disc=freeze(fwd.disc),
        thresholds=freeze(fwd.thresholds.reshape(q, m)),
        weights=freeze(fwd.weights.reshape(q, m)),
        degenerate=freeze(degenerate),
        scores=freeze(fwd.scores),
        posteriors=freeze(fwd.posteriors),
        loss=loss,
    )
