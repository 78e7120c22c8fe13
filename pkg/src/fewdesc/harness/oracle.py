"""Brute-force reference implementation and the equivalence suite.

Everything in this module is deliberately naive: plain Python lists, explicit
loops, ``math`` functions, and no code shared with the library. The suite
generates small random episodes, runs both routes end to end, and reports the
maximum absolute deviation for every pipeline quantity plus any disagreement
in the selected descriptor indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..core import DescriptorSet, Episode
from .. import cds as cds_module
from ..query import LEAKY_SLOPE, ThresholdMlp, episode_scores, predict_threshold

__all__ = ["OracleReport", "run_oracle_suite", "random_case", "DEFAULT_TOLERANCE"]

DEFAULT_TOLERANCE = 1e-12

QUANTITIES = (
    "intra_similarity",
    "inter_similarity",
    "intra_softmax",
    "inter_softmax",
    "cds",
    "class_similarity",
    "query_disc",
    "threshold",
    "weight",
    "class_score",
    "posterior",
    "loss",
)


# ---------------------------------------------------------------------------
# naive reference, pure Python
# ---------------------------------------------------------------------------

def _dot(a, b):
    total = 0.0
    for x, y in zip(a, b):
        total += x * y
    return total


def _norm(a):
    return math.sqrt(_dot(a, a))


def _cos(a, b):
    value = _dot(a, b) / (_norm(a) * _norm(b))
    return min(1.0, max(-1.0, value))


def _softmax(values):
    top = max(values)
    exps = [math.exp(v - top) for v in values]
    total = sum(exps)
    return [e / total for e in exps]


def _sigmoid(x):
    if x >= 0.0:
        z = math.exp(-x)
        return 1.0 / (1.0 + z)
    z = math.exp(x)
    return z / (1.0 + z)


def _normalize(vec):
    n = _norm(vec)
    return [x / n for x in vec]


def _argmax(values):
    best, where = values[0], 0
    for i, v in enumerate(values):
        if v > best:
            best, where = v, i
    return where


def _class_mean(images):
    """images: list of images, each a list of m descriptors (lists)."""
    k = len(images)
    m = len(images[0])
    d = len(images[0][0])
    out = []
    for j in range(m):
        acc = [0.0] * d
        for img in images:
            for t in range(d):
                acc[t] += img[j][t]
        out.append([a / k for a in acc])
    return out


def naive_support_pools(support_images, mode):
    """support_images: per class, list of images (each a list of descriptors)."""
    pools = []
    for images in support_images:
        if mode == "class-mean" and len(images) > 1:
            pools.append([list(v) for v in _class_mean(images)])
        else:
            pools.append([list(v) for img in images for v in img])
    return pools


def naive_cds(pools):
    n = len(pools)
    intra, inter = [], []
    for c, pool in enumerate(pools):
        others = [v for cc in range(n) if cc != c for v in pools[cc]]
        intra_c, inter_c = [], []
        for i, desc in enumerate(pool):
            acc = 0.0
            for j, other in enumerate(pool):
                if j != i:
                    acc += _cos(desc, other)
            intra_c.append(acc / (len(pool) - 1))
            acc = 0.0
            for other in others:
                acc += _cos(desc, other)
            inter_c.append(acc / len(others))
        intra.append(intra_c)
        inter.append(inter_c)
    intra_soft = [_softmax(v) for v in intra]
    inter_soft = [_softmax(v) for v in inter]
    scores = [
        [_sigmoid(a / b) for a, b in zip(di, de)]
        for di, de in zip(intra_soft, inter_soft)
    ]
    return {
        "intra": intra,
        "inter": inter,
        "intra_softmax": intra_soft,
        "inter_softmax": inter_soft,
        "cds": scores,
    }


def naive_top_k(cds_values, k_fraction):
    keep = max(1, int(math.floor(k_fraction * len(cds_values) + 0.5)))
    order = sorted(range(len(cds_values)), key=lambda i: (-cds_values[i], i))
    return order[:keep]


def naive_mlp_raw(w1, b1, w2, b2, x):
    hidden = []
    for row, bias in zip(w1, b1):
        z = _dot(row, x) + bias
        hidden.append(z if z > 0.0 else LEAKY_SLOPE * z)
    return _dot(w2, hidden) + b2


def naive_episode(support_images, query_images, query_labels, mode, k_fraction,
                  mlp_lists, sharpness, score_form):
    """Full pipeline on Python lists. Returns every intermediate quantity."""
    pools = naive_support_pools(support_images, mode)
    n = len(pools)
    stats = naive_cds(pools)
    selection = [naive_top_k(stats["cds"][c], k_fraction) for c in range(n)]
    selected = [[pools[c][i] for i in selection[c]] for c in range(n)]

    flat = [v for rows in selected for v in rows]
    d = len(flat[0])
    context = [sum(v[t] for v in flat) / len(flat) for t in range(d)]
    context_unit = _normalize(context)
    w1, b1, w2, b2 = mlp_lists

    sims_all, disc_all, thresh_all, weight_all, part_all = [], [], [], [], []
    scores_all, posterior_all = [], []
    losses = []
    for img, label in zip(query_images, query_labels):
        sims_img, disc_img, thresh_img, weight_img, part_img = [], [], [], [], []
        for lq in img:
            sims = [sum(_cos(lq, v) for v in selected[c]) for c in range(n)]
            total = sum(sims)
            if total == 0.0:
                share = [1.0 / n] * n
            else:
                share = [s / total for s in sims]
            disc = max(share)
            x = _normalize(lq) + context_unit
            thresh = _sigmoid(naive_mlp_raw(w1, b1, w2, b2, x))
            weight = _sigmoid(sharpness * (disc - thresh))
            sims_img.append(sims)
            disc_img.append(disc)
            thresh_img.append(thresh)
            weight_img.append(weight)
            part_img.append(_argmax(share))
        if score_form == "weighted-sim":
            scores = [
                sum(weight_img[i] * sims_img[i][c] for i in range(len(img)))
                for c in range(n)
            ]
        else:
            scores = [0.0] * n
            for i in range(len(img)):
                scores[part_img[i]] += thresh_img[i] * weight_img[i]
        posterior = _softmax(scores)
        losses.append(-math.log(posterior[label]))
        sims_all.append(sims_img)
        disc_all.append(disc_img)
        thresh_all.append(thresh_img)
        weight_all.append(weight_img)
        part_all.append(part_img)
        scores_all.append(scores)
        posterior_all.append(posterior)

    return {
        "pools": pools,
        "stats": stats,
        "selection": selection,
        "sims": sims_all,
        "disc": disc_all,
        "threshold": thresh_all,
        "weight": weight_all,
        "scores": scores_all,
        "posterior": posterior_all,
        "loss": sum(losses) / len(losses),
    }


# ---------------------------------------------------------------------------
# suite
# ---------------------------------------------------------------------------

@dataclass
class OracleReport:
    """Worst-case deviations between the library and the naive reference."""

    cases: int
    tolerance: float = DEFAULT_TOLERANCE
    max_deviation: dict[str, float] = field(default_factory=dict)
    selection_mismatches: int = 0

    def record(self, name: str, deviation: float) -> None:
        self.max_deviation[name] = max(self.max_deviation.get(name, 0.0), deviation)

    @property
    def ok(self) -> bool:
        if self.selection_mismatches:
            return False
        return all(v <= self.tolerance for v in self.max_deviation.values())

    def failing(self) -> list[str]:
        bad = [k for k, v in self.max_deviation.items() if v > self.tolerance]
        if self.selection_mismatches:
            bad.append("selection")
        return bad

    def lines(self) -> list[str]:
        out = [f"oracle suite: {self.cases} cases, tolerance {self.tolerance:g}"]
        for name in QUANTITIES:
            dev = self.max_deviation.get(name, 0.0)
            mark = "ok" if dev <= self.tolerance else "FAIL"
            out.append(f"  {name:<18} max deviation {dev:.3e}  {mark}")
        mark = "ok" if self.selection_mismatches == 0 else "FAIL"
        out.append(f"  {'selection':<18} index mismatches {self.selection_mismatches}  {mark}")
        out.append("PASS" if self.ok else "FAIL: " + ", ".join(self.failing()))
        return out


def random_case(rng: np.random.Generator) -> dict:
    """One random small episode plus pipeline settings.

    Descriptors are half-normal (nonnegative), like rectified feature
    activations. That keeps every query's similarity mass bounded away from
    zero, so the share-of-mass quantities stay well-conditioned and the two
    routes can be compared at 1e-12 absolute.
    """
    n = int(rng.integers(2, 6))
    k = int(rng.integers(1, 3))
    m = int(rng.integers(2, 7))
    d = int(rng.integers(2, 9))
    q = int(rng.integers(1, 4))
    support = np.abs(rng.standard_normal((n, k, m, d)))
    queries = np.abs(rng.standard_normal((n, q, m, d)))
    return {
        "n": n, "k": k, "m": m, "d": d, "q": q,
        "support": support,
        "queries": queries,
        "mode": "raw" if rng.integers(2) == 0 else "class-mean",
        "k_fraction": float(rng.uniform(0.05, 1.0)),
        "sharpness": float(rng.uniform(0.5, 30.0)),
        "score_form": "weighted-sim" if rng.integers(2) == 0 else "literal",
        "hidden": int(rng.integers(2, 9)),
    }


def _episode_from_case(case) -> Episode:
    n, k, m = case["n"], case["k"], case["m"]
    support = tuple(
        DescriptorSet(case["support"][c].reshape(k * m, -1), k, m) for c in range(n)
    )
    query_sets, labels = [], []
    for c in range(n):
        for j in range(case["q"]):
            query_sets.append(DescriptorSet(case["queries"][c][j], 1, m))
            labels.append(c)
    return Episode(n, k, support, tuple(query_sets), tuple(labels))


def _max_dev(a, b) -> float:
    arr_a = np.asarray(a, dtype=np.float64)
    arr_b = np.asarray(b, dtype=np.float64)
    if arr_a.shape != arr_b.shape:
        return math.inf
    if arr_a.size == 0:
        return 0.0
    return float(np.max(np.abs(arr_a - arr_b)))


def run_oracle_suite(seed: int = 0, cases: int = 100,
                     tolerance: float = DEFAULT_TOLERANCE) -> OracleReport:
    """Compare the library against the naive reference on random episodes."""
    if cases < 1:
        raise ValueError("cases must be positive")
    rng = np.random.default_rng(seed)
    report = OracleReport(cases=cases, tolerance=tolerance)

    for _ in range(cases):
        case = random_case(rng)
        episode = _episode_from_case(case)
        mlp = ThresholdMlp.init(case["d"], case["hidden"], rng)

        pool = cds_module.SupportPool.from_episode(episode, case["mode"])
        components = cds_module.cds_components(pool)
        lib_cds = cds_module.contrastive_scores(pool)
        selection = cds_module.select_top_k(pool, case["k_fraction"])
        evaluation = episode_scores(
            episode, selection, mlp, case["sharpness"], case["score_form"]
        )

        support_lists = [
            [[list(case["support"][c][i][j]) for j in range(case["m"])]
             for i in range(case["k"])]
            for c in range(case["n"])
        ]
        query_lists = [
            [list(v) for v in q.values]
            for q in episode.query_sets
        ]
        mlp_lists = (mlp.w1.tolist(), mlp.b1.tolist(), mlp.w2.tolist(), float(mlp.b2))
        naive = naive_episode(
            support_lists, query_lists, list(episode.query_labels), case["mode"],
            case["k_fraction"], mlp_lists, case["sharpness"], case["score_form"],
        )

        stats = naive["stats"]
        for c in range(case["n"]):
            report.record("intra_similarity", _max_dev(components.intra[c], stats["intra"][c]))
            report.record("inter_similarity", _max_dev(components.inter[c], stats["inter"][c]))
            report.record("intra_softmax", _max_dev(components.intra_softmax[c], stats["intra_softmax"][c]))
            report.record("inter_softmax", _max_dev(components.inter_softmax[c], stats["inter_softmax"][c]))
            report.record("cds", _max_dev(lib_cds[c], stats["cds"][c]))
            if list(selection.indices[c]) != naive["selection"][c]:
                report.selection_mismatches += 1
            # the per-descriptor entry points must agree with the batched path
            for i in range(pool.classes[c].shape[0]):
                report.record(
                    "intra_similarity",
                    abs(cds_module.intra_similarity(c, i, pool) - stats["intra"][c][i]),
                )
                report.record(
                    "inter_similarity",
                    abs(cds_module.inter_similarity(c, i, pool) - stats["inter"][c][i]),
                )

        report.record("class_similarity", _max_dev(evaluation.sims, naive["sims"]))
        report.record("query_disc", _max_dev(evaluation.disc, naive["disc"]))
        report.record("threshold", _max_dev(evaluation.thresholds, naive["threshold"]))
        report.record("weight", _max_dev(evaluation.weights, naive["weight"]))
        report.record("class_score", _max_dev(evaluation.scores, naive["scores"]))
        report.record("posterior", _max_dev(evaluation.posteriors, naive["posterior"]))
        report.record("loss", abs(evaluation.loss - naive["loss"]))
        report.record(
            "threshold",
            abs(predict_threshold(mlp, episode.query_sets[0].values[0], selection)
                - naive["threshold"][0][0]),
        )
    return report
