"""Gating query descriptors with a learned threshold.

Samples one episode, scores its query descriptors against the selected
support sets, and shows the three per-descriptor quantities that drive the
soft gate: the discriminative score (largest class share of the similarity
mass), the predicted threshold, and the resulting weight. Sweeping the
sharpness shows the gate tightening from nearly uniform to hard 0/1.
"""

import numpy as np

from fewdesc import (
    SupportPool,
    ThresholdMlp,
    TrainConfig,
    episode_scores,
    generate_synthetic_pool,
    sample_episode,
    select_top_k,
    weights_map,
)

pool = generate_synthetic_pool(
    classes=6, images_per_class=8, dim=16, per_image=8,
    background_ratio=0.5, noise=0.2, seed=3,
)
cfg = TrainConfig(way=3, shot=2, queries=2, k_fraction=0.25, seed=0)
episode = sample_episode(pool, cfg, np.random.default_rng(1))
selection = select_top_k(SupportPool.from_episode(episode, "raw"), cfg.k_fraction)
mlp = ThresholdMlp.init(pool.dim, rng=np.random.default_rng(5))

ev = episode_scores(episode, selection, mlp, sharpness=20.0)
print("first query image, one row per descriptor (background positions last):")
print("  disc   threshold  weight")
for disc, thresh, weight in zip(ev.disc[0], ev.thresholds[0], ev.weights[0]):
    print(f"  {disc:.3f}  {thresh:.3f}      {weight:.4f}")

print("\ntrue label:", episode.query_labels[0],
      " posterior:", np.round(ev.posteriors[0], 3),
      " loss:", round(ev.loss, 4))

print("\nweight of a fixed (disc=0.55, threshold=0.5) descriptor as sharpness grows:")
for lam in (1.0, 5.0, 20.0, 100.0, 1e4):
    print(f"  sharpness {lam:>7g} -> weight {weights_map(0.55, 0.5, lam):.6f}")

print("\nwith sharpness 1e4 the gate is effectively binary:")
ev_hard = episode_scores(episode, selection, mlp, sharpness=1e4)
weights = ev_hard.weights.reshape(-1)
print(f"  {np.sum(weights > 0.999)} descriptors kept, "
      f"{np.sum(weights < 0.001)} dropped, of {weights.size}")
