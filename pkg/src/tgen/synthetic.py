"""Desk-scale synthetic regression benchmark with drifting true parameters.

True parameters follow ``a + b t + c t^2 + d t^3``; inputs are standard
normal and targets are ``x @ theta*_t`` plus Gaussian noise (or, for the
classification variant, the sign of that product with random label flips).

Random streams
--------------
Every draw comes from ``numpy.random.Generator(PCG64(SeedSequence(key)))``
where ``key`` is a list of non-negative integers:

* data at timestamp ``t``, split ``s``: ``[seed, t, s]`` with train=0, val=1, test=2;
  draw order is inputs ``(n, dim)`` standard normal, then ``n`` noise values,
  then (classification only) ``n`` uniforms for label flips;
* coefficient signs: ``[seed, 7919]``, ``4 * dim`` uniforms in [0, 1), sign -1 below 0.5;
* MLP init: ``[spec.seed, 104729]``, standard normal ``w1`` then ``w2``;
* mini-batch order: ``[cfg.seed, 15485863, t]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from .checkpoints import Checkpoint, Trajectory, check_congruent
from .errors import BadPermutation, CongruenceError, DivergenceError, RankDeficient

SPLITS = {"train": 0, "val": 1, "test": 2}
_SIGN_STREAM = 7919
_INIT_STREAM = 104729
_BATCH_STREAM = 15485863

DEFAULT_COEFFS = (1.0, 0.5, 0.05, 0.005)


def rng_for(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(k) for k in key])))


@dataclass(frozen=True, eq=False)
class SyntheticTask:
    coeffs: np.ndarray  # (4, dim): rows a, b, c, d
    noise_sigma: float = 0.1
    n_train: int = 200
    n_val: int = 200
    n_test: int = 1000
    t_count: int = 20
    seed: int = 0
    kind: Literal["regression", "classification"] = "regression"
    flip_prob: float = 0.05

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.float64)
        if c.ndim == 1:
            c = c[:, None]
        if c.shape[0] != 4 or c.shape[1] < 1:
            raise ValueError(f"coeffs must have shape (4, dim), got {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if min(self.n_train, self.n_val, self.n_test, self.t_count) < 1:
            raise ValueError("sample counts and t_count must be >= 1")
        if self.kind not in ("regression", "classification"):
            raise ValueError(f"unknown task kind {self.kind!r}")

    @property
    def dim(self) -> int:
        return self.coeffs.shape[1]

    @classmethod
    def cubic(cls, dim: int = 2, seed: int = 0, magnitudes: Sequence[float] = DEFAULT_COEFFS, **kw) -> "SyntheticTask":
        """Default demo task: fixed magnitudes, per-entry signs drawn from ``seed``."""
        u = rng_for(seed, _SIGN_STREAM).random(4 * dim).reshape(4, dim)
        signs = np.where(u < 0.5, -1.0, 1.0)
        coeffs = np.asarray(magnitudes, dtype=np.float64)[:, None] * signs
        return cls(coeffs=coeffs, seed=seed, **kw)

    @classmethod
    def from_coeffs(cls, a, b=0.0, c=0.0, d=0.0, **kw) -> "SyntheticTask":
        a = np.atleast_1d(np.asarray(a, dtype=np.float64))
        rows = [np.broadcast_to(np.asarray(v, dtype=np.float64), a.shape) for v in (a, b, c, d)]
        return cls(coeffs=np.stack(rows), **kw)

    @classmethod
    def rotating(cls, radius: float = 1.5, rate: float = 0.1, center: float = 10.5, **kw) -> "SyntheticTask":
        """2-D drift along a circular arc, as a cubic in ``t``.

        Uses the third-order expansion of ``radius * (cos u, sin u)`` with
        ``u = rate * (t - center)``, so the target direction keeps turning
        while its norm is symmetric about ``center`` and has no overall trend.
        """
        P = np.polynomial.Polynomial
        u = P([-rate * center, rate])
        parts = (radius * (1 - u**2 / 2), radius * (u - u**3 / 6))
        coeffs = np.stack([np.pad(p.coef, (0, 4 - p.coef.size)) for p in parts], axis=1)
        return cls(coeffs=coeffs, **kw)

    def with_seed(self, seed: int) -> "SyntheticTask":
        return replace(self, seed=seed)

    def sample_count(self, split: str) -> int:
        return {"train": self.n_train, "val": self.n_val, "test": self.n_test}[split]


@dataclass(frozen=True, eq=False)
class TimestampData:
    x: np.ndarray
    y: np.ndarray
    theta_star: np.ndarray
    t: int = 0
    split: str = "train"

    def __post_init__(self):
        if self.y.shape[0] != self.x.shape[0]:
            raise ValueError("x and y disagree on sample count")
        if self.theta_star.shape[0] != self.x.shape[1]:
            raise ValueError("theta_star length must equal input dimension")


@dataclass(frozen=True)
class MlpSpec:
    hidden: int = 32
    activation: Literal["tanh"] = "tanh"
    init_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.hidden < 1:
            raise ValueError("hidden must be >= 1")
        if self.activation != "tanh":
            raise ValueError("only tanh is supported")


@dataclass(frozen=True)
class TrainConfig:
    loss: Literal["mse", "cross_entropy"] = "mse"
    lr: float = 1e-2
    iters: int = 2000
    batch: int = 64
    seed: int = 0
    init: Literal["from_previous", "from_base"] = "from_previous"

    def __post_init__(self):
        if self.lr <= 0 or self.iters < 1 or self.batch < 1:
            raise ValueError("lr, iters and batch must be positive")
        if self.loss not in ("mse", "cross_entropy"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.init not in ("from_previous", "from_base"):
            raise ValueError(f"unknown init {self.init!r}")


# --- data --------------------------------------------------------------------

def true_params(task: SyntheticTask, t: float) -> np.ndarray:
    a, b, c, d = task.coeffs
    t = float(t)
    return a + b * t + c * t**2 + d * t**3


def generate(task: SyntheticTask, t: int, split: str = "train", n: int | None = None) -> TimestampData:
    if split not in SPLITS:
        raise ValueError(f"split must be one of {sorted(SPLITS)}")
    if t < 0:
        raise ValueError("t must be >= 0")
    n = task.sample_count(split) if n is None else int(n)
    rng = rng_for(task.seed, t, SPLITS[split])
    theta = true_params(task, t)
    x = rng.standard_normal((n, task.dim))
    noise = rng.standard_normal(n)
    y = x @ theta
    if task.kind == "regression":
        if task.noise_sigma > 0:
            y = y + task.noise_sigma * noise
    else:
        flips = rng.random(n) < task.flip_prob
        y = ((y > 0) ^ flips).astype(np.float64)
    return TimestampData(x=x, y=y, theta_star=theta, t=int(t), split=split)


# --- linear model --------------------------------------------------------------

def fit_ols(data: TimestampData) -> np.ndarray:
    """Least squares through the normal equations in float64."""
    x = np.asarray(data.x, dtype=np.float64)
    n, dim = x.shape
    if n < dim or np.linalg.matrix_rank(x) < dim:
        raise RankDeficient(f"design matrix ({n} x {dim}) is rank deficient")
    gram = x.T @ x
    return np.linalg.solve(gram, x.T @ np.asarray(data.y, dtype=np.float64))


def linear_checkpoint(theta: np.ndarray, timestamp: int = 0) -> Checkpoint:
    return Checkpoint({"theta": np.asarray(theta, dtype=np.float64)}, timestamp=timestamp)


# --- MLP -----------------------------------------------------------------------

def init_mlp(spec: MlpSpec, dim: int, timestamp: int = 0) -> Checkpoint:
    rng = rng_for(spec.seed, _INIT_STREAM)
    w1 = spec.init_scale * rng.standard_normal((spec.hidden, dim))
    w2 = spec.init_scale * rng.standard_normal((1, spec.hidden))
    return Checkpoint(
        {"w1": w1, "b1": np.zeros(spec.hidden), "w2": w2, "b2": np.zeros(1)},
        timestamp=timestamp,
    )


def _mlp_arrays(c: Checkpoint, spec: MlpSpec | None = None, dim: int | None = None):
    try:
        w1, b1, w2, b2 = (np.asarray(c[k], dtype=np.float64) for k in ("w1", "b1", "w2", "b2"))
    except KeyError as exc:
        raise CongruenceError(f"not an MLP checkpoint, missing tensor {exc}") from None
    h = w1.shape[0]
    ok = w1.ndim == 2 and b1.shape == (h,) and w2.shape == (1, h) and b2.shape == (1,)
    if spec is not None:
        ok = ok and h == spec.hidden
    if dim is not None:
        ok = ok and w1.shape[1] == dim
    if not ok:
        raise CongruenceError(f"MLP checkpoint shapes do not match: {c!r}")
    return w1, b1, w2, b2


def mlp_forward(c: Checkpoint, x: np.ndarray) -> np.ndarray:
    w1, b1, w2, b2 = _mlp_arrays(c, dim=np.shape(x)[1])
    return np.tanh(x @ w1.T + b1) @ w2[0] + b2[0]


def _loss_and_residual(out: np.ndarray, y: np.ndarray, loss: str):
    if loss == "mse":
        r = out - y
        return float(np.mean(r * r)), 2.0 * r / y.size
    # binary cross-entropy on logits, labels in {0, 1}
    val = float(np.mean(np.logaddexp(0.0, out) - y * out))
    p = 0.5 * (1.0 + np.tanh(0.5 * out))
    return val, (p - y) / y.size


def training_loss(c: Checkpoint, data: TimestampData, loss: str = "mse") -> float:
    return _loss_and_residual(mlp_forward(c, data.x), data.y, loss)[0]


def train_mlp(
    data: TimestampData,
    spec: MlpSpec,
    cfg: TrainConfig,
    warm_start: Checkpoint | None = None,
) -> Checkpoint:
    """Mini-batch gradient descent on a one-hidden-layer tanh network.

    Starts from ``warm_start`` when given, else from ``init_mlp(spec)``.
    Raises DivergenceError as soon as a batch loss is non-finite.
    """
    dim = data.x.shape[1]
    start = warm_start if warm_start is not None else init_mlp(spec, dim)
    if warm_start is not None:
        check_congruent(init_mlp(spec, dim), warm_start)
    w1, b1, w2, b2 = (a.copy() for a in _mlp_arrays(start, spec, dim))
    x, y = data.x, data.y
    n = x.shape[0]
    rng = rng_for(cfg.seed, _BATCH_STREAM, data.t)
    full = cfg.batch >= n
    order = np.arange(n)
    cursor = n

    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(cfg.iters):
            if full:
                xb, yb = x, y
            else:
                if cursor + cfg.batch > n:
                    order = rng.permutation(n)
                    cursor = 0
                idx = order[cursor:cursor + cfg.batch]
                cursor += cfg.batch
                xb, yb = x[idx], y[idx]
            hid = np.tanh(xb @ w1.T + b1)
            out = hid @ w2[0] + b2[0]
            val, g_out = _loss_and_residual(out, yb, cfg.loss)
            if not np.isfinite(val):
                raise DivergenceError(f"training loss became {val} at t={data.t}")
            g_w2 = g_out @ hid
            g_b2 = g_out.sum()
            g_hid = np.outer(g_out, w2[0]) * (1.0 - hid * hid)
            g_w1 = g_hid.T @ xb
            g_b1 = g_hid.sum(axis=0)
            w1 -= cfg.lr * g_w1
            b1 -= cfg.lr * g_b1
            w2[0] -= cfg.lr * g_w2
            b2 -= cfg.lr * g_b2

    params = {"w1": w1, "b1": b1, "w2": w2, "b2": b2}
    if not all(np.all(np.isfinite(v)) for v in params.values()):
        raise DivergenceError(f"parameters became non-finite at t={data.t}")
    return Checkpoint(params, timestamp=data.t, dtype=start.dtype)


def run_continual(
    task: SyntheticTask,
    learner: Literal["ols"] | MlpSpec = "ols",
    cfg: TrainConfig = TrainConfig(),
) -> Trajectory:
    """Train one model per timestamp ``1..t_count`` and return the trajectory.

    OLS refits from scratch each step (it has no initialization to inherit).
    The MLP either warm-starts from the previous step or restarts from the
    shared base initialization, per ``cfg.init``.
    """
    cks = []
    prev = None
    for t in range(1, task.t_count + 1):
        data = generate(task, t, "train")
        if learner == "ols":
            cks.append(linear_checkpoint(fit_ols(data), timestamp=t))
            continue
        warm = prev if (cfg.init == "from_previous" and prev is not None) else None
        prev = train_mlp(data, learner, cfg, warm_start=warm)
        cks.append(prev)
    return Trajectory(tuple(cks), step=1)


def permute_hidden(c: Checkpoint, spec: MlpSpec, perm: Sequence[int]) -> Checkpoint:
    """Reorder hidden units; the network function is unchanged."""
    p = np.asarray(perm)
    if p.shape != (spec.hidden,) or not np.array_equal(np.sort(p), np.arange(spec.hidden)):
        raise BadPermutation(f"not a permutation of range({spec.hidden}): {list(perm)}")
    _mlp_arrays(c, spec)
    return Checkpoint(
        {"w1": c["w1"][p], "b1": c["b1"][p], "w2": c["w2"][:, p], "b2": c["b2"]},
        timestamp=c.timestamp,
        dtype=c.dtype,
    )


def predict(c: Checkpoint, x: np.ndarray, model_kind: str | MlpSpec = "linear") -> np.ndarray:
    if model_kind == "linear":
        if c.names() != ["theta"] or c["theta"].shape != (np.shape(x)[1],):
            raise CongruenceError(f"not a linear checkpoint for dim {np.shape(x)[1]}: {c!r}")
        return x @ np.asarray(c["theta"], dtype=np.float64)
    if isinstance(model_kind, MlpSpec):
        _mlp_arrays(c, model_kind, np.shape(x)[1])
    elif model_kind != "mlp":
        raise ValueError(f"unknown model kind {model_kind!r}")
    return mlp_forward(c, x)


def evaluate_forecast(
    pred: Checkpoint,
    future_data: TimestampData,
    model_kind: str | MlpSpec = "linear",
    loss: str = "mse",
) -> float:
    """Mean squared error (or mean binary cross-entropy) of ``pred`` on ``future_data``."""
    out = predict(pred, future_data.x, model_kind)
    return _loss_and_residual(out, future_data.y, loss)[0]


def model_kind_of(c: Checkpoint) -> str:
    return "linear" if c.names() == ["theta"] else "mlp"
