"""Leak-free sequential selection of a method's ``alpha``.

At the current time the caller hands over only the checkpoints *before*
it. Each candidate is built from that history, so it is a forecast of the
current parameters, and ``evaluator`` scores it on the current validation
split. Lower scores are better.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from .checkpoints import Checkpoint, Trajectory
from .errors import AllCandidatesFailed, EmptyHistory, InsufficientHistory, NonFiniteError
from .methods import MethodSpec


@dataclass(frozen=True)
class SearchSpace:
    kind: Literal["grid", "random"] = "grid"
    lo: float = 0.0
    hi: float = 1.0
    count: int = 11
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("grid", "random"):
            raise ValueError(f"unknown search space kind {self.kind!r}")
        if not self.lo <= self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")
        if self.count < 1:
            raise ValueError("count must be >= 1")

    def candidates(self) -> np.ndarray:
        if self.kind == "grid":
            if self.count == 1:
                return np.array([float(self.lo)])
            return np.linspace(self.lo, self.hi, self.count)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(self.seed), 31337])))
        return rng.uniform(self.lo, self.hi, self.count)

    @property
    def cell(self) -> float:
        """Grid spacing (0 for a single candidate or a random space)."""
        if self.kind != "grid" or self.count == 1:
            return 0.0
        return (self.hi - self.lo) / (self.count - 1)

    def contains(self, alpha: float) -> bool:
        return bool(np.any(self.candidates() == alpha))

    @classmethod
    def taylor_default(cls, seed: int = 0) -> "SearchSpace":
        return cls("random", -1.0, 1.0, 30, seed)

    @classmethod
    def downscale_default(cls) -> "SearchSpace":
        return cls("grid", 0.9, 1.0, 51)


@dataclass(frozen=True)
class ValScore:
    alpha: float
    score: float
    failed: bool = False


def _pick(scores: list[ValScore], neutral: float | None) -> ValScore:
    ok = [s for s in scores if not s.failed]
    if not ok:
        raise AllCandidatesFailed(f"all {len(scores)} candidates produced non-finite scores")
    best = min(s.score for s in ok)
    tied = [s for s in ok if s.score == best]
    anchor = 0.0 if neutral is None else neutral
    key = (lambda s: (abs(s.alpha - anchor), s.alpha)) if neutral is not None else (lambda s: s.alpha)
    return min(tied, key=key)


def select_alpha(
    history: Trajectory,
    method: MethodSpec,
    space: SearchSpace,
    evaluator: Callable[[Checkpoint], float],
    threads: int = 1,
) -> tuple[float, list[ValScore]]:
    """Pick the candidate ``alpha`` whose forecast scores best on current validation data.

    Args:
        history: checkpoints strictly before the current timestamp.
        method: tunable method; candidates are ``method.build(history, alpha)``.
        space: candidate values, scored in the order they are generated.
        evaluator: loss of a candidate checkpoint on the current validation split.
        threads: evaluate candidates concurrently; results keep candidate order.

    Returns:
        ``(alpha_star, scores)``. Ties go to the candidate nearest the method's
        no-op value (1 for downscaling, 0 for Taylor), then to the smaller alpha.
        Candidates that fail to build or score non-finite are marked failed and
        skipped.
    """
    if history is None or len(history) == 0:
        raise EmptyHistory("no checkpoints before the current time")
    if not method.tunable:
        raise ValueError(f"method {method.kind!r} has no tunable alpha")
    if len(history) < method.min_history:
        raise InsufficientHistory(
            f"tuning {method.kind} needs {method.min_history} past checkpoints, have {len(history)}"
        )

    def score(alpha: float) -> ValScore:
        try:
            cand = method.build(history, float(alpha))
        except NonFiniteError:
            return ValScore(float(alpha), math.inf, failed=True)
        val = float(evaluator(cand))
        return ValScore(float(alpha), val, failed=not math.isfinite(val))

    alphas = space.candidates()
    if threads > 1 and len(alphas) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = list(pool.map(score, alphas))
    else:
        scores = [score(a) for a in alphas]
    return _pick(scores, method.neutral_alpha).alpha, scores
