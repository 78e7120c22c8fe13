"""Synthetic episode pools: class-specific descriptor clusters plus a shared
background cluster.

Each image contributes ``per_image`` descriptors. The last
ceil(background_ratio * per_image) positions hold draws from one background
cluster shared by every class; the rest sit around the image's class center.
Class centers are mutually orthogonal unit vectors whenever the dimension
allows, so a pool with zero noise and zero background is perfectly separable.
The pool records which positions are background so tests can compare selection
behavior against the ground truth.
"""

from __future__ import annotations

import math

import numpy as np

from ..core import InvalidConfigError, check_nonzero_rows
from ..train import EpisodePool

__all__ = ["generate_synthetic_pool", "spread_directions"]


def spread_directions(count: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` unit vectors, mutually orthogonal while dim allows.

    The first min(count, dim) directions come from a QR factorization of a
    random Gaussian matrix (exactly orthonormal); any remainder beyond the
    dimension is filled with independent random unit vectors, which is as
    spread as Gram-Schmidt can deliver once the basis is exhausted.
    """
    if count < 1 or dim < 1:
        raise InvalidConfigError("count and dim must be positive")
    ortho = min(count, dim)
    q, r = np.linalg.qr(rng.standard_normal((dim, ortho)))
    # fix signs so the factorization is unique given the input
    q = q * np.sign(np.diag(r))
    directions = [q[:, i] for i in range(ortho)]
    for _ in range(count - ortho):
        v = rng.standard_normal(dim)
        directions.append(v / np.linalg.norm(v))
    return np.stack(directions)


def generate_synthetic_pool(classes: int, images_per_class: int, dim: int, per_image: int,
                            background_ratio: float, noise: float, seed: int,
                            split: str = "train") -> EpisodePool:
    """Deterministic synthetic pool; pure in all arguments.

    Descriptors are center + noise * standard normal, where the center is the
    class direction for class positions and the single shared background
    direction for background positions. The background direction joins the
    orthogonalization when there is room (dim >= classes + 1).
    """
    if classes < 2:
        raise InvalidConfigError("need at least 2 classes")
    if images_per_class < 1 or dim < 1 or per_image < 1:
        raise InvalidConfigError("images_per_class, dim and per_image must be positive")
    if not 0.0 <= background_ratio < 1.0:
        raise InvalidConfigError(f"background_ratio must lie in [0, 1), got {background_ratio}")
    if noise < 0.0:
        raise InvalidConfigError("noise must be nonnegative")

    rng = np.random.default_rng(seed)
    directions = spread_directions(classes + 1, dim, rng)
    centers, background_center = directions[:classes], directions[classes]

    # tiny slack so ratios meant to hit an integer exactly are not pushed up a
    # whole descriptor by float rounding
    n_background = math.ceil(background_ratio * per_image - 1e-12)
    n_class = per_image - n_background

    pools: dict[str, np.ndarray] = {}
    for c in range(classes):
        class_part = centers[c] + noise * rng.standard_normal((images_per_class, n_class, dim))
        bg_part = background_center + noise * rng.standard_normal((images_per_class, n_background, dim))
        block = np.concatenate([class_part, bg_part], axis=1)
        label = f"class{c:03d}"
        check_nonzero_rows(block.reshape(-1, dim), context=f"synthetic {label}")
        pools[label] = block

    mask = np.zeros(per_image, dtype=bool)
    mask[n_class:] = True
    return EpisodePool(pools, split=split, background_mask=mask)
