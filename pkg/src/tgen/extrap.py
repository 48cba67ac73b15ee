"""Parameter extrapolation: finite-difference Taylor steps and learned changes.

The learned-change objectives use unsquared L2 norms. They are optimized
through the smooth surrogate ``sqrt(|v|^2 + eps^2)`` with plain gradient
descent plus step halving on rejected moves, starting from a zero offset.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .checkpoints import Checkpoint, Trajectory, as_vector, check_congruent, unflatten
from .errors import InsufficientHistory


@dataclass(frozen=True)
class TaylorConfig:
    alpha: float = 1.0
    lookback: int = 1

    def __post_init__(self):
        if int(self.lookback) < 1:
            raise ValueError(f"lookback must be >= 1, got {self.lookback}")


@dataclass(frozen=True)
class LearnedChangeConfig:
    """Settings for :func:`fit_learned_offset` and :func:`fit_learned_coeff`.

    ``target="literal"`` sums ``tau + 1`` copies of each one-step increment,
    exactly as the objective is written. ``target="shifted"`` instead pairs
    offset index ``delta`` with the change ``theta[t + delta] - theta[t - 1]``,
    which is the reading under which a growing scale can be learned.
    ``seed`` is carried for manifest bookkeeping; the fit itself draws no
    random numbers.
    """

    lam: float = 0.0
    horizon: int = 0
    lr: float = 1e-2
    max_iters: int = 5000
    tol: float = 1e-10
    eps: float = 1e-8
    seed: int = 0
    target: Literal["literal", "shifted"] = "literal"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if self.lr <= 0 or self.tol <= 0 or self.eps <= 0:
            raise ValueError("lr, tol and eps must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.target not in ("literal", "shifted"):
            raise ValueError(f"unknown target mode {self.target!r}")


@dataclass(frozen=True)
class CoeffParams:
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and np.isfinite(self.beta)):
            raise ValueError("coefficient parameters must be finite")

    def scale(self, delta: float) -> float:
        return float(softplus(self.alpha * delta + self.beta))


@dataclass(frozen=True)
class LearnedChange:
    offset: Checkpoint
    params: CoeffParams | None
    objective: float
    initial_objective: float
    converged: bool
    iterations: int


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


# --- Taylor ------------------------------------------------------------------

def taylor_step(traj: Trajectory, cfg: TaylorConfig) -> Checkpoint:
    """``theta_t + alpha * (theta_t - theta_{t - dt}) / dt``, dt = lookback * step."""
    k = cfg.lookback
    if len(traj) < k + 1:
        raise InsufficientHistory(f"first-order step needs {k + 1} checkpoints, have {len(traj)}")
    if cfg.alpha == 0:
        return traj.last
    dt = k * traj.step
    cur = as_vector(traj[-1])
    prev = as_vector(traj[-1 - k])
    return unflatten(cur + cfg.alpha * (cur - prev) / dt, traj.last)


def taylor_order2(traj: Trajectory, cfg: TaylorConfig) -> Checkpoint:
    """Second-order step using backward first and second differences."""
    k = cfg.lookback
    if len(traj) < 2 * k + 1:
        raise InsufficientHistory(f"second-order step needs {2 * k + 1} checkpoints, have {len(traj)}")
    if cfg.alpha == 0:
        return traj.last
    dt = k * traj.step
    p0 = as_vector(traj[-1])
    p1 = as_vector(traj[-1 - k])
    p2 = as_vector(traj[-1 - 2 * k])
    d1 = (p0 - p1) / dt
    d2 = (p0 - 2.0 * p1 + p2) / dt**2
    a = cfg.alpha
    return unflatten(p0 + a * d1 + 0.5 * a * a * d2, traj.last)


# --- learned change objectives -------------------------------------------------

def change_targets(traj: Trajectory | np.ndarray, horizon: int, target: str = "literal"):
    """Build the (target vector, delta) pairs the objectives sum over.

    Returns ``(targets, deltas)`` with ``targets`` of shape (M, N). Accepts a
    trajectory or an already-stacked (time x N) matrix.
    """
    m = traj.matrix() if isinstance(traj, Trajectory) else np.asarray(traj, dtype=np.float64)
    if m.shape[0] < 2:
        raise InsufficientHistory(f"learned change needs >= 2 checkpoints, have {m.shape[0]}")
    rows, deltas = [], []
    for i in range(1, m.shape[0]):
        for d in range(horizon + 1):
            if target == "literal":
                rows.append(m[i] - m[i - 1])
            elif i + d < m.shape[0]:
                rows.append(m[i + d] - m[i - 1])
            else:
                continue
            deltas.append(d)
    return np.array(rows), np.array(deltas, dtype=np.float64)


def offset_objective(targets: np.ndarray, offset: np.ndarray, lam: float, eps: float):
    """Smoothed single-offset objective and its gradient w.r.t. ``offset``."""
    r = targets - offset[None, :]
    n = np.sqrt(np.einsum("ij,ij->i", r, r) + eps * eps)
    reg = np.sqrt(offset @ offset + eps * eps)
    value = float(n.sum() + lam * reg)
    grad = -(r / n[:, None]).sum(axis=0) + lam * offset / reg
    return value, grad


def coeff_objective(
    targets: np.ndarray,
    deltas: np.ndarray,
    offset: np.ndarray,
    alpha: float,
    beta: float,
    lam: float,
    eps: float,
):
    """Smoothed softplus-coefficient objective.

    Returns ``(value, grad_offset, grad_alpha, grad_beta)``.
    """
    z = alpha * deltas + beta
    s = softplus(z)
    r = targets - s[:, None] * offset[None, :]
    n = np.sqrt(np.einsum("ij,ij->i", r, r) + eps * eps)
    reg = np.sqrt(offset @ offset + eps * eps)
    value = float(n.sum() + lam * reg)
    u = r / n[:, None]
    g_off = -(s[:, None] * u).sum(axis=0) + lam * offset / reg
    g_s = -(u @ offset)
    ds = sigmoid(z)
    g_alpha = float(np.sum(g_s * ds * deltas))
    g_beta = float(np.sum(g_s * ds))
    return value, g_off, g_alpha, g_beta


def _descend(fun, x0: np.ndarray, cfg: LearnedChangeConfig):
    """Gradient descent that only accepts strictly decreasing moves.

    A rejected move halves the step; the run stops when an accepted
    decrease falls below ``tol`` or the step has been halved 60 times.
    """
    x = x0.copy()
    f, g = fun(x)
    f0 = f
    lr = cfg.lr
    lr_floor = cfg.lr * 2.0**-60
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        if not np.any(g):
            converged = True
            break
        cand = x - lr * g
        fc, gc = fun(cand)
        if np.isfinite(fc) and fc < f:
            dec = f - fc
            x, f, g = cand, fc, gc
            if dec < cfg.tol:
                converged = True
                break
        else:
            lr *= 0.5
            if lr < lr_floor:
                converged = True
                break
    return x, f, f0, converged, it


def fit_learned_offset(traj: Trajectory, cfg: LearnedChangeConfig = LearnedChangeConfig()) -> LearnedChange:
    targets, _ = change_targets(traj, cfg.horizon, cfg.target)

    def fun(x):
        return offset_objective(targets, x, cfg.lam, cfg.eps)

    x, f, f0, ok, it = _descend(fun, np.zeros(targets.shape[1]), cfg)
    offset = unflatten(x, traj.last)
    return LearnedChange(offset, None, f, f0, ok, it)


def fit_learned_coeff(traj: Trajectory, cfg: LearnedChangeConfig = LearnedChangeConfig()) -> LearnedChange:
    targets, deltas = change_targets(traj, cfg.horizon, cfg.target)
    n = targets.shape[1]

    def fun(x):
        v, g_off, g_a, g_b = coeff_objective(targets, deltas, x[:n], x[n], x[n + 1], cfg.lam, cfg.eps)
        return v, np.concatenate([g_off, [g_a, g_b]])

    x, f, f0, ok, it = _descend(fun, np.zeros(n + 2), cfg)
    offset = unflatten(x[:n], traj.last)
    return LearnedChange(offset, CoeffParams(float(x[n]), float(x[n + 1])), f, f0, ok, it)


def apply_learned(
    last: Checkpoint,
    offset: Checkpoint,
    params: CoeffParams | None = None,
    delta: int = 1,
) -> Checkpoint:
    """Forecast from ``last`` with a fitted offset.

    Without ``params`` the offset is one step of change and is added once;
    compose calls for longer horizons. With ``params`` the offset is scaled
    by ``softplus(alpha * delta + beta)``.
    """
    check_congruent(last, offset)
    if delta < 1:
        raise ValueError("delta must be >= 1")
    scale = 1.0 if params is None else params.scale(delta)
    return unflatten(as_vector(last) + scale * as_vector(offset), last)
