"""Finite-difference verification of the analytic gradients.

The numeric route only ever calls the forward evaluation, so it stays
independent of the backward pass it checks. Errors are relative with a small
absolute floor: |a - n| / max(|a|, |n|, 1e-3), which keeps finite-difference
noise on near-zero entries from drowning the signal.

Central differences are meaningless across the hidden activation's slope
discontinuity, so drawn cases whose pre-activations sit within a few steps of
zero are redrawn (deterministically, from the same generator).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..cds import CdsSelection, SupportPool, select_top_k
from ..core import Episode
from ..query import ThresholdMlp, episode_scores, _forward
from ..train import MlpGradients, TrainConfig, loss_and_gradients
from .oracle import _episode_from_case, random_case

__all__ = [
    "DEFAULT_STEP",
    "DEFAULT_TOLERANCE",
    "GradCheckReport",
    "draw_check_case",
    "finite_difference_gradients",
    "gradient_errors",
    "run_gradient_check",
]

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4
ERROR_FLOOR = 1e-3
KINK_MARGIN = 20.0  # min |pre-activation| in units of the step size


def finite_difference_gradients(episode: Episode, selection: CdsSelection, mlp: ThresholdMlp,
                                cfg: TrainConfig, step: float = DEFAULT_STEP) -> MlpGradients:
    """Central differences of the episode loss over every network parameter."""

    def loss_with(probe: ThresholdMlp) -> float:
        return episode_scores(episode, selection, probe, cfg.sharpness, cfg.score_form).loss

    grads = {}
    for name in ("w1", "b1", "w2", "b2"):
        base = getattr(mlp, name)
        grad = np.zeros_like(base)
        flat_base = np.atleast_1d(base)
        flat_grad = np.atleast_1d(grad)
        for idx in range(flat_base.size):
            probe = mlp.clone()
            bumped = np.atleast_1d(getattr(probe, name))
            original = flat_base.reshape(-1)[idx]
            bumped.reshape(-1)[idx] = original + step
            setattr(probe, name, bumped.reshape(base.shape))
            plus = loss_with(probe)
            bumped.reshape(-1)[idx] = original - step
            setattr(probe, name, bumped.reshape(base.shape))
            minus = loss_with(probe)
            flat_grad.reshape(-1)[idx] = (plus - minus) / (2.0 * step)
        grads[name] = flat_grad.reshape(base.shape)
    return MlpGradients(grads["w1"], grads["b1"], grads["w2"], grads["b2"])


def gradient_errors(analytic: MlpGradients, numeric: MlpGradients,
                    floor: float = ERROR_FLOOR) -> float:
    """Worst relative error across all parameter entries."""
    worst = 0.0
    for name in ("w1", "b1", "w2", "b2"):
        a = np.atleast_1d(getattr(analytic, name)).astype(np.float64)
        n = np.atleast_1d(getattr(numeric, name)).astype(np.float64)
        scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / scale)))
    return worst


@dataclass
class GradCheckReport:
    cases: int
    step: float = DEFAULT_STEP
    tolerance: float = DEFAULT_TOLERANCE
    per_case: list[float] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max(self.per_case) if self.per_case else 0.0

    @property
    def ok(self) -> bool:
        return self.max_error < self.tolerance

    def lines(self) -> list[str]:
        out = [f"gradient check: {self.cases} cases, step {self.step:g}, tolerance {self.tolerance:g}"]
        for i, err in enumerate(self.per_case):
            out.append(f"  case {i:>3}  max relative error {err:.3e}")
        out.append(f"max relative error {self.max_error:.3e}")
        out.append("PASS" if self.ok else "FAIL")
        return out


def draw_check_case(rng: np.random.Generator, step: float = DEFAULT_STEP):
    """One random episode safe to difference: no pre-activation near the kink."""
    while True:
        case = random_case(rng)
        episode = _episode_from_case(case)
        mlp = ThresholdMlp.init(case["d"], case["hidden"], rng)
        cfg = TrainConfig(
            way=case["n"], shot=case["k"], queries=case["q"],
            k_fraction=case["k_fraction"], sharpness=case["sharpness"],
            score_form=case["score_form"], mode=case["mode"],
        )
        selection = select_top_k(SupportPool.from_episode(episode, cfg.mode), cfg.k_fraction)
        fwd, _ = _forward(episode, selection, mlp, cfg.sharpness, cfg.score_form)
        if float(np.min(np.abs(fwd.z))) > KINK_MARGIN * step:
            return episode, selection, mlp, cfg


def run_gradient_check(seed: int = 0, cases: int = 20, step: float = DEFAULT_STEP,
                       tolerance: float = DEFAULT_TOLERANCE) -> GradCheckReport:
    """Analytic vs central-difference gradients on random small episodes."""
    if cases < 1:
        raise ValueError("cases must be positive")
    rng = np.random.default_rng(seed)
    report = GradCheckReport(cases=cases, step=step, tolerance=tolerance)
    for _ in range(cases):
        episode, selection, mlp, cfg = draw_check_case(rng, step)
        loss, analytic = loss_and_gradients(episode, selection, mlp, cfg)
        check = episode_scores(episode, selection, mlp, cfg.sharpness, cfg.score_form).loss
        if not math.isclose(loss, check, rel_tol=0.0, abs_tol=0.0):
            raise AssertionError("loss paths diverged; gradients cannot be trusted")
        numeric = finite_difference_gradients(episode, selection, mlp, cfg, step=step)
        report.per_case.append(gradient_errors(analytic, numeric))
    return report
