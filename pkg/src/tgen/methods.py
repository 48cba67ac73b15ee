"""Tagged method configurations that turn a checkpoint history into an estimate."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from . import extrap, interp
from .checkpoints import Checkpoint, Trajectory
from .errors import InsufficientHistory

KINDS = (
    "recent",
    "merge",
    "ema",
    "downscale",
    "taylor",
    "taylor2",
    "learned_offset",
    "learned_coeff",
)

# Hyperparameter that ``alpha`` stands for when tuning, and its no-op value.
_TUNABLE = {"downscale": 1.0, "taylor": 0.0, "taylor2": 0.0, "ema": None}


@dataclass(frozen=True)
class MethodSpec:
    """One estimation method plus its hyperparameters.

    ``alpha`` is the downscaling factor for ``downscale`` and the step size
    for ``taylor``/``taylor2``. ``decay`` drives ``ema``; when an ema method
    is tuned the candidate value replaces ``decay``.
    """

    kind: str
    alpha: float | None = None
    decay: float = 0.9
    lookback: int = 1
    learned: extrap.LearnedChangeConfig = field(default_factory=extrap.LearnedChangeConfig)
    name: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown method kind {self.kind!r}; expected one of {KINDS}")
        if self.alpha is None:
            default = {"downscale": 1.0, "taylor": 1.0, "taylor2": 1.0}.get(self.kind)
            object.__setattr__(self, "alpha", default)

    @property
    def id(self) -> str:
        return self.name or self.kind

    @property
    def tunable(self) -> bool:
        return self.kind in _TUNABLE

    @property
    def neutral_alpha(self) -> float | None:
        return _TUNABLE.get(self.kind)

    @property
    def min_history(self) -> int:
        if self.kind == "taylor":
            return self.lookback + 1
        if self.kind == "taylor2":
            return 2 * self.lookback + 1
        if self.kind in ("learned_offset", "learned_coeff"):
            return 2
        return 1

    def with_alpha(self, alpha: float) -> "MethodSpec":
        if self.kind == "ema":
            return replace(self, decay=float(alpha))
        if self.kind in ("downscale", "taylor", "taylor2"):
            return replace(self, alpha=float(alpha))
        raise ValueError(f"method {self.kind!r} has no tunable alpha")

    def build(self, history: Trajectory, alpha: float | None = None) -> Checkpoint:
        """Estimate the next parameters from ``history`` (oldest first)."""
        spec = self if alpha is None else self.with_alpha(alpha)
        if len(history) < spec.min_history:
            raise InsufficientHistory(
                f"{spec.kind} needs {spec.min_history} checkpoints, have {len(history)}"
            )
        k = spec.kind
        if k == "recent":
            return interp.recent(history)
        if k == "merge":
            return interp.merge(history, interp.uniform_weights(len(history)))
        if k == "ema":
            return interp.merge(history, interp.ema_weights(len(history), spec.decay))
        if k == "downscale":
            return interp.downscale(history.last, interp.DownscaleConfig(spec.alpha))
        if k == "taylor":
            return extrap.taylor_step(history, extrap.TaylorConfig(spec.alpha, spec.lookback))
        if k == "taylor2":
            return extrap.taylor_order2(history, extrap.TaylorConfig(spec.alpha, spec.lookback))
        if k == "learned_offset":
            fit = extrap.fit_learned_offset(history, spec.learned)
            return extrap.apply_learned(history.last, fit.offset)
        fit = extrap.fit_learned_coeff(history, spec.learned)
        return extrap.apply_learned(history.last, fit.offset, fit.params, delta=1)
