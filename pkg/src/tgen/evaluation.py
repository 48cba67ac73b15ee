"""Forward-transfer metrics and trajectory analytics.

CSV layouts (written by the CLI): forward-transfer cells ``t,j,value``,
norm curves ``t,l2_norm`` and projections ``t,pc1,pc2``.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Literal, Mapping

import numpy as np
from scipy.stats import kendalltau

from .checkpoints import Trajectory, l2_norm
from .errors import DegenerateTrajectory, EmptyMatrix, MissingRow


@dataclass(frozen=True)
class FwtMatrix:
    """Performance ``M[t, j]`` of the model fixed at ``t`` on future data ``j``.

    Only cells with ``t < j <= t + delta`` are allowed. ``t_range`` is the
    inclusive span of training timestamps; it defaults to the span of the
    rows present.
    """

    values: Mapping[tuple[int, int], float]
    direction: Literal["higher_better", "lower_better"] = "higher_better"
    delta: int = 1
    t_range: tuple[int, int] | None = None

    def __post_init__(self):
        vals = {(int(t), int(j)): float(v) for (t, j), v in self.values.items()}
        object.__setattr__(self, "values", vals)
        if self.direction not in ("higher_better", "lower_better"):
            raise ValueError(f"unknown direction {self.direction!r}")
        if self.delta < 1:
            raise ValueError("delta must be >= 1")
        for (t, j), v in vals.items():
            if not t < j <= t + self.delta:
                raise ValueError(f"cell ({t}, {j}) outside horizon delta={self.delta}")
            if not np.isfinite(v):
                raise ValueError(f"cell ({t}, {j}) is not finite")
        if self.t_range is None and vals:
            ts = [t for t, _ in vals]
            object.__setattr__(self, "t_range", (min(ts), max(ts)))

    def rows(self) -> dict[int, list[float]]:
        out: dict[int, list[float]] = defaultdict(list)
        for (t, j) in sorted(self.values):
            out[t].append(self.values[(t, j)])
        return dict(out)


def avg_fwt(m: FwtMatrix) -> float:
    """Mean over every present cell; truncated rows simply contribute fewer cells."""
    if not m.values:
        raise EmptyMatrix("forward-transfer matrix has no cells")
    return float(np.mean([m.values[k] for k in sorted(m.values)]))


def worst_fwt(m: FwtMatrix) -> float:
    """Per-row worst cell (min, or max when lower is better), averaged over rows."""
    if not m.values:
        raise EmptyMatrix("forward-transfer matrix has no cells")
    rows = m.rows()
    lo, hi = m.t_range
    worst = max if m.direction == "lower_better" else min
    picks = []
    for t in range(lo, hi + 1):
        if t not in rows:
            raise MissingRow(f"no cells for training time {t} in t_range {m.t_range}")
        picks.append(worst(rows[t]))
    return float(np.mean(picks))


def norm_curve(traj: Trajectory) -> list[tuple[int, float]]:
    return [(c.timestamp, l2_norm(c)) for c in traj]


def norm_trend(traj: Trajectory) -> float:
    """Kendall tau between time and parameter norm."""
    curve = norm_curve(traj)
    if len(curve) < 2:
        return 0.0
    ts, ns = zip(*curve)
    tau = kendalltau(ts, ns).statistic
    return 0.0 if np.isnan(tau) else float(tau)


@dataclass(frozen=True, eq=False)
class Projection:
    points: np.ndarray  # (time, 2)
    explained_variance: tuple[float, float]
    mean: np.ndarray
    timestamps: tuple[int, ...] = field(default=())


def pca_project(traj: Trajectory) -> Projection:
    """Project checkpoints onto their top two principal directions.

    Uses a thin SVD of the centered (time x params) stack, which costs about
    the same as the Gram-matrix route but keeps small axes accurate to
    machine precision. Axis signs are chosen so the first clearly nonzero
    coordinate on each axis is non-negative.
    """
    if len(traj) < 3:
        raise ValueError(f"PCA needs at least 3 checkpoints, have {len(traj)}")
    x = traj.matrix()
    mean = x.mean(axis=0)
    xc = x - mean
    if not np.any(xc):
        raise DegenerateTrajectory("all checkpoints are identical")
    u, s, _ = np.linalg.svd(xc, full_matrices=False)
    evals = np.zeros(max(2, s.size))
    evals[: s.size] = s**2
    pts = np.zeros((x.shape[0], 2))
    k_avail = min(2, s.size)
    pts[:, :k_avail] = u[:, :k_avail] * s[:k_avail]
    total = float(evals.sum())
    for k in range(2):
        col = pts[:, k]
        nz = np.flatnonzero(np.abs(col) > 1e-12 * max(1.0, np.abs(col).max()))
        if nz.size and col[nz[0]] < 0:
            pts[:, k] = -col
    ev = (float(evals[0] / total), float(evals[1] / total))
    return Projection(points=pts, explained_variance=ev, mean=mean, timestamps=tuple(traj.timestamps))


# --- CSV rows -----------------------------------------------------------------

def fwt_rows(m: FwtMatrix) -> list[tuple[int, int, float]]:
    return [(t, j, m.values[(t, j)]) for (t, j) in sorted(m.values)]


def projection_rows(p: Projection) -> list[tuple[int, float, float]]:
    return [(t, float(a), float(b)) for t, (a, b) in zip(p.timestamps, p.points)]
