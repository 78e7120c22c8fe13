"""Descriptor containers and the similarity kernels the rest of the pipeline uses.

A local descriptor is a 1-D float64 vector. Sets of descriptors are stored
row-wise in ``(count, d)`` arrays, image-major: row ``i * per_image + j`` is
the j-th descriptor of image i. All arithmetic is done in 64-bit floats so
that downstream gradient checks have precision headroom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FewdescError",
    "InvalidInputError",
    "InvalidConfigError",
    "DegenerateDescriptorError",
    "DegenerateClassError",
    "PoolExhaustedError",
    "NumericalFailureError",
    "DescriptorSet",
    "Episode",
    "as_descriptor",
    "check_nonzero_rows",
    "unit_rows",
    "cosine",
    "softmax",
    "sigmoid",
    "mean_descriptorwise",
]


class FewdescError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(FewdescError, ValueError):
    """Malformed argument: wrong shape, non-finite values, label out of range."""


class InvalidConfigError(FewdescError, ValueError):
    """A configuration value outside its documented range."""


class DegenerateDescriptorError(FewdescError):
    """A zero-norm descriptor where cosine similarity is required."""


class DegenerateClassError(FewdescError):
    """A class pool too small for within-class statistics."""


class PoolExhaustedError(FewdescError):
    """The episode pool cannot supply the requested way/shot/query counts."""


class NumericalFailureError(FewdescError):
    """A computation produced non-finite values."""


def as_descriptor(values) -> np.ndarray:
    """Validate one descriptor and return it as a float64 vector."""
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1 or vec.size < 1:
        raise InvalidInputError(f"descriptor must be a nonempty 1-D vector, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise InvalidInputError("descriptor contains non-finite values")
    return vec


def check_nonzero_rows(values: np.ndarray, context: str = "") -> None:
    """Reject zero-norm descriptors. Call sites are the data ingestion points."""
    norms = np.linalg.norm(values, axis=-1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        where = f" ({context})" if context else ""
        raise DegenerateDescriptorError(f"zero-norm descriptor at row {int(bad[0])}{where}")


def unit_rows(values: np.ndarray) -> np.ndarray:
    """L2-normalize each row; a zero row raises DegenerateDescriptorError."""
    norms = np.linalg.norm(values, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        row = int(np.flatnonzero(norms[:, 0] == 0.0)[0])
        raise DegenerateDescriptorError(f"zero-norm descriptor at row {row}")
    return values / norms


def _freeze(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class DescriptorSet:
    """Descriptors extracted from one or more images of equal geometry.

    ``values`` has shape ``(image_count * per_image, d)``; ``per_image`` is the
    number of descriptors each image contributes (the flattened feature-map
    size). Rows are image-major. Instances are immutable; the array is copied
    and marked read-only at construction.
    """

    values: np.ndarray
    image_count: int
    per_image: int

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[1] < 1:
            raise InvalidInputError(f"descriptor array must be 2-D (count, d), got shape {vals.shape}")
        if self.image_count < 1 or self.per_image < 1:
            raise InvalidInputError("image_count and per_image must be positive")
        if vals.shape[0] != self.image_count * self.per_image:
            raise InvalidInputError(
                f"expected {self.image_count * self.per_image} rows "
                f"({self.image_count} images x {self.per_image}), got {vals.shape[0]}"
            )
        if not np.all(np.isfinite(vals)):
            raise InvalidInputError("descriptor array contains non-finite values")
        object.__setattr__(self, "values", _freeze(vals))

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])

    def image(self, index: int) -> np.ndarray:
        """Rows of one image, shape (per_image, d)."""
        if not 0 <= index < self.image_count:
            raise InvalidInputError(f"image index {index} out of range")
        start = index * self.per_image
        return self.values[start : start + self.per_image]


@dataclass(frozen=True)
class Episode:
    """One n-way k-shot task: per-class support sets plus labeled query images.

    ``query_labels`` are 0-based indices into the support class order.
    """

    way: int
    shot: int
    support: tuple[DescriptorSet, ...]
    query_sets: tuple[DescriptorSet, ...]
    query_labels: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "support", tuple(self.support))
        object.__setattr__(self, "query_sets", tuple(self.query_sets))
        object.__setattr__(self, "query_labels", tuple(int(y) for y in self.query_labels))
        if self.way < 1 or self.shot < 1:
            raise InvalidInputError("way and shot must be positive")
        if len(self.support) != self.way:
            raise InvalidInputError(f"expected {self.way} support sets, got {len(self.support)}")
        if len(self.query_sets) != len(self.query_labels):
            raise InvalidInputError("one label per query image required")
        dims = {s.dim for s in self.support} | {q.dim for q in self.query_sets}
        if len(dims) > 1:
            raise InvalidInputError(f"mixed descriptor dimensions in episode: {sorted(dims)}")
        per = {s.per_image for s in self.support} | {q.per_image for q in self.query_sets}
        if len(per) > 1:
            raise InvalidInputError(f"mixed per-image descriptor counts in episode: {sorted(per)}")
        for s in self.support:
            if s.image_count != self.shot:
                raise InvalidInputError(f"support set has {s.image_count} images, expected shot={self.shot}")
        for q in self.query_sets:
            if q.image_count != 1:
                raise InvalidInputError("each query set must hold exactly one image")
        for y in self.query_labels:
            if not 0 <= y < self.way:
                raise InvalidInputError(f"query label {y} outside 0..{self.way - 1}")

    @property
    def dim(self) -> int:
        return self.support[0].dim

    @property
    def per_image(self) -> int:
        return self.support[0].per_image


def cosine(a, b) -> float:
    """Cosine similarity of two descriptors, clamped to [-1, 1] against rounding.

    The denominator is sqrt(<a,a> * <b,b>): sqrt(fl(x*x)) == x exactly in
    round-to-nearest, so parallel and opposite pairs come out as exactly
    +1.0 / -1.0 instead of one ulp off.
    """
    va = as_descriptor(a)
    vb = as_descriptor(b)
    if va.shape != vb.shape:
        raise InvalidInputError(f"dimension mismatch: {va.shape[0]} vs {vb.shape[0]}")
    na2 = float(va @ va)
    nb2 = float(vb @ vb)
    if na2 == 0.0 or nb2 == 0.0:
        raise DegenerateDescriptorError("cosine similarity undefined for zero-norm descriptor")
    denom = math.sqrt(na2 * nb2)
    if not math.isfinite(denom):
        raise InvalidInputError("descriptor magnitudes overflow the cosine denominator")
    value = float(va @ vb) / denom
    return min(1.0, max(-1.0, value))


def softmax(scores) -> np.ndarray:
    """Exponentiate-and-normalize with max subtraction for stability.

    Output entries are positive, sum to 1 within 1e-12, and preserve argmax.
    """
    x = np.asarray(scores, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise InvalidInputError("softmax requires a nonempty 1-D vector")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("softmax input contains non-finite values")
    e = np.exp(x - x.max())
    return e / e.sum()


def sigmoid(x):
    """Numerically stable logistic; never overflows for finite input."""
    arr = np.asarray(x, dtype=np.float64)
    z = np.exp(-np.abs(arr))
    out = np.where(arr >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))
    return float(out) if out.ndim == 0 else out


def mean_descriptorwise(dset: DescriptorSet) -> DescriptorSet:
    """Collapse a k-image set to one mean image, averaging at each position.

    Output row j is the arithmetic mean of the j-th descriptor over the k
    images. With k = 1 the input is returned unchanged. The mean may have
    zero norm (e.g. opposite descriptors); that is only rejected when cosine
    similarity is eventually taken.
    """
    if dset.image_count == 1:
        return dset
    stacked = dset.values.reshape(dset.image_count, dset.per_image, dset.dim)
    return DescriptorSet(stacked.mean(axis=0), image_count=1, per_image=dset.per_image)
