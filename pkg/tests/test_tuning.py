import numpy as np
import pytest

from tgen.checkpoints import Checkpoint, Trajectory, as_vector
from tgen.errors import AllCandidatesFailed, EmptyHistory, InsufficientHistory
from tgen.extrap import TaylorConfig, taylor_step
from tgen.methods import MethodSpec
from tgen.synthetic import SyntheticTask, evaluate_forecast, generate, run_continual
from tgen.tuning import SearchSpace, ValScore, _pick, select_alpha


def line(n, slope=(1.0, -0.5), start=(2.0, 3.0)):
    return Trajectory(
        tuple(Checkpoint({"p": np.asarray(start) + k * np.asarray(slope)}, k + 1) for k in range(n))
    )


def sqdist_to(target):
    tv = as_vector(target)
    return lambda c: float(np.sum((as_vector(c) - tv) ** 2))


def test_grid_and_random_spaces():
    g = SearchSpace("grid", 0.9, 1.0, 51)
    c = g.candidates()
    assert c[0] == 0.9 and c[-1] == 1.0 and len(c) == 51
    assert g.cell == pytest.approx(0.002)
    r1 = SearchSpace("random", -1, 1, 30, seed=4).candidates()
    r2 = SearchSpace("random", -1, 1, 30, seed=4).candidates()
    assert r1.tobytes() == r2.tobytes()
    assert np.all((r1 >= -1) & (r1 <= 1))
    assert not np.array_equal(r1, SearchSpace("random", -1, 1, 30, seed=5).candidates())
    with pytest.raises(ValueError):
        SearchSpace("grid", 1.0, 0.0, 3)


def test_recovers_exact_taylor_alpha():
    tr = line(6)
    history, target = tr[:5], tr[5]
    space = SearchSpace("grid", -1.0, 1.0, 21)
    alpha, scores = select_alpha(history, MethodSpec("taylor"), space, sqdist_to(target))
    assert alpha == 1.0
    assert [s.alpha for s in scores] == space.candidates().tolist()
    assert min(s.score for s in scores) == next(s.score for s in scores if s.alpha == alpha)


def test_candidates_come_only_from_history():
    tr = line(6)
    history = tr[:4]
    seen = []

    def evaluator(c):
        seen.append(c)
        return 0.0

    method = MethodSpec("taylor")
    space = SearchSpace("grid", -1, 1, 5)
    select_alpha(history, method, space, evaluator)
    assert len(seen) == 5
    for a, c in zip(space.candidates(), seen):
        assert c == taylor_step(history, TaylorConfig(a))
        assert c.timestamp <= history.last.timestamp


def test_single_candidate_returned_regardless():
    alpha, scores = select_alpha(line(3), MethodSpec("downscale"), SearchSpace("grid", 0.5, 0.5, 1), lambda c: 1e9)
    assert alpha == 0.5 and len(scores) == 1


def test_tie_break_neutral_then_smaller():
    assert _pick([ValScore(0.9, 1.0), ValScore(1.0, 1.0), ValScore(0.95, 2.0)], 1.0).alpha == 1.0
    assert _pick([ValScore(-0.5, 1.0), ValScore(0.5, 1.0)], 0.0).alpha == -0.5
    assert _pick([ValScore(0.3, 1.0), ValScore(-0.2, 1.0)], 0.0).alpha == -0.2
    assert _pick([ValScore(0.8, 1.0), ValScore(0.2, 1.0)], None).alpha == 0.2


def test_constant_evaluator_picks_neutral():
    alpha, _ = select_alpha(line(3), MethodSpec("taylor"), SearchSpace("grid", -1, 1, 9), lambda c: 3.0)
    assert alpha == 0.0


def test_failed_candidates_skipped():
    def evaluator(c):
        return float("nan") if as_vector(c)[0] > 5 else float(as_vector(c)[0])

    alpha, scores = select_alpha(line(3), MethodSpec("taylor"), SearchSpace("grid", -1, 10, 12), evaluator)
    assert any(s.failed for s in scores)
    assert alpha == -1.0


def test_all_failed():
    with pytest.raises(AllCandidatesFailed):
        select_alpha(line(3), MethodSpec("downscale"), SearchSpace("grid", 0, 1, 3), lambda c: float("inf"))


@pytest.mark.filterwarnings("ignore:overflow")
def test_non_finite_candidate_is_failed_not_raised():
    huge = Trajectory((Checkpoint({"p": [0.0]}, 1), Checkpoint({"p": [1e308]}, 2)))
    alpha, scores = select_alpha(huge, MethodSpec("taylor"), SearchSpace("grid", 0.0, 1.0, 2), lambda c: 0.0)
    assert scores[1].failed and alpha == 0.0


def test_history_requirements():
    with pytest.raises(InsufficientHistory):
        select_alpha(line(1), MethodSpec("taylor"), SearchSpace(), lambda c: 0.0)
    with pytest.raises(EmptyHistory):
        select_alpha(None, MethodSpec("taylor"), SearchSpace(), lambda c: 0.0)
    with pytest.raises(ValueError):
        select_alpha(line(3), MethodSpec("recent"), SearchSpace(), lambda c: 0.0)


def test_deterministic_and_threaded_equal():
    tr = line(5)
    space = SearchSpace("random", -1, 1, 30, seed=2)
    ev = sqdist_to(line(6)[5])
    a = select_alpha(tr, MethodSpec("taylor"), space, ev)
    b = select_alpha(tr, MethodSpec("taylor"), space, ev, threads=4)
    assert a == b


def test_ema_decay_tuning():
    tr = line(4)
    alpha, _ = select_alpha(tr, MethodSpec("ema"), SearchSpace("grid", 0.1, 0.9, 9), sqdist_to(tr[-1]))
    assert alpha == pytest.approx(0.1)


def stationary_task(seed):
    return SyntheticTask.cubic(dim=2, seed=seed, magnitudes=(2.0, 0, 0, 0), noise_sigma=0.05,
                               n_train=2000, n_val=20_000, t_count=4)


@pytest.mark.parametrize("seed", range(5))
def test_downscale_on_stationary_task_stays_near_one(seed):
    task = stationary_task(seed)
    tr = run_continual(task, "ols")
    space = SearchSpace.downscale_default()
    t = 3
    val = generate(task, t, "val")
    alpha, _ = select_alpha(tr[: t - 1], MethodSpec("downscale"), space, lambda c: evaluate_forecast(c, val))
    assert abs(alpha - 1.0) <= space.cell + 1e-12
