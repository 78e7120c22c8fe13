"""Sweeping the selection fraction.

Evaluates one trained network across a grid of top-K percentages on a noisy
pool, the same sweep the `ablate-topk` CLI command performs. On noisy data
the kept fraction trades off cluster coverage against background leakage;
on cleanly separable pools the curve flattens out at the top.
"""

import numpy as np

from fewdesc import TrainConfig, evaluate, generate_synthetic_pool, meta_train

pool = generate_synthetic_pool(
    classes=10, images_per_class=25, dim=12, per_image=12,
    background_ratio=0.5, noise=0.9, seed=4,
)
cfg = TrainConfig(
    way=5, shot=5, queries=10, k_fraction=0.1, epochs=5,
    episodes_per_epoch=80, seed=0,
)
mlp, _ = meta_train(pool, cfg)

print("k_percent\taccuracy")
results = []
for percent in (1, 2, 5, 10, 25, 50, 100):
    sweep_cfg = TrainConfig(
        way=5, shot=5, queries=10, k_fraction=percent / 100.0, seed=3,
    )
    acc, _ = evaluate(pool, mlp, sweep_cfg, episodes=150)
    results.append((percent, acc))
    print(f"{percent}\t{acc:.4f}")

best = max(results, key=lambda kv: kv[1])
print(f"\nbest fraction on this pool: {best[0]}% (accuracy {best[1]:.4f})")
