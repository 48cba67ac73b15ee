"""Parameter interpolation: convex merging of past checkpoints.

Weights are indexed by trajectory slot with slot 0 reserved for the zero
vector, so ``alphas = (1 - a, 0, ..., 0, a)`` is exactly downscaling and a
one-hot last slot is the recent model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .checkpoints import Checkpoint, Trajectory, as_vector, unflatten
from .errors import EmptyTrajectory, WeightError

WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class MergeWeights:
    alphas: tuple[float, ...]

    def __post_init__(self):
        a = tuple(float(x) for x in self.alphas)
        object.__setattr__(self, "alphas", a)
        if not a:
            raise WeightError("empty weight vector")
        arr = np.asarray(a)
        if not np.all(np.isfinite(arr)):
            raise WeightError("weights must be finite")
        if np.any(arr < 0):
            raise WeightError(f"negative weight in {a}")
        total = float(np.sum(arr))
        if abs(total - 1.0) > WEIGHT_TOL:
            raise WeightError(f"weights sum to {total!r}, expected 1 within {WEIGHT_TOL}")

    def __len__(self) -> int:
        return len(self.alphas)

    @classmethod
    def one_hot(cls, n: int, slot: int | None = None) -> "MergeWeights":
        """Weights of length ``n + 1`` with all mass on ``slot`` (default: last)."""
        a = [0.0] * (n + 1)
        a[n if slot is None else slot] = 1.0
        return cls(tuple(a))


@dataclass(frozen=True)
class DownscaleConfig:
    alpha: float

    def __post_init__(self):
        if not (0.0 <= float(self.alpha) <= 1.0):
            raise ValueError(f"downscale alpha must lie in [0, 1], got {self.alpha}")


def uniform_weights(n: int) -> MergeWeights:
    if n < 1:
        raise ValueError("n must be >= 1")
    return MergeWeights((0.0,) + (1.0 / n,) * n)


def ema_weights(n: int, decay: float) -> MergeWeights:
    """Exponentially decaying weights; checkpoint ``i`` gets ``decay ** (n - i)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 < decay < 1.0:
        raise ValueError(f"decay must lie in (0, 1), got {decay}")
    raw = decay ** np.arange(n - 1, -1, -1, dtype=np.float64)
    w = raw / raw.sum()
    return MergeWeights((0.0,) + tuple(w.tolist()))


def merge(traj: Trajectory, w: MergeWeights | Sequence[float]) -> Checkpoint:
    """Weighted sum of the trajectory's checkpoints (plus the zero slot).

    Accumulates in float64 and casts to the storage dtype. Zero-weight slots
    are skipped entirely so a one-hot merge returns the chosen checkpoint
    bit-for-bit. The result carries the last checkpoint's timestamp.
    """
    if not isinstance(w, MergeWeights):
        w = MergeWeights(tuple(w))
    if len(w) != len(traj) + 1:
        raise WeightError(f"{len(w)} weights for {len(traj)} checkpoints (need len + 1)")
    acc = None
    for alpha, c in zip(w.alphas[1:], traj):
        if alpha == 0.0:
            continue
        term = alpha * as_vector(c)
        acc = term if acc is None else acc + term
    if acc is None:
        acc = np.zeros(traj.last.size)
    return unflatten(acc, traj.last)


def downscale(c: Checkpoint, cfg: DownscaleConfig | float) -> Checkpoint:
    alpha = cfg.alpha if isinstance(cfg, DownscaleConfig) else float(DownscaleConfig(cfg).alpha)
    return unflatten(float(alpha) * as_vector(c), c)


def recent(traj: Trajectory) -> Checkpoint:
    if len(traj) == 0:
        raise EmptyTrajectory("no checkpoints")
    return traj.last
