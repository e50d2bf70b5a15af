import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lvsciml.dynamics import DomainError, Trajectory, generate_truth, lv_invariant
from lvsciml.experiments import (
    DEFAULT_HIDDEN_UNITS, DEFAULT_SIGMAS, BreakdownReport, NoiseReport, SplitSpec, StudySetup, SweepReport,
    breakdown_sweep, default_axis_values, forecast_extended, hyperparam_sweep, load_report, noise_study, rmse,
    split_train_forecast,
)
from lvsciml.models import RolloutConfig, neural_ode, rollout, ude
from lvsciml.optim import Phase, TrainSchedule

TINY = StudySetup(
    node_hidden=(6,), ude_hidden=(5,),
    schedules=(("neuralode", TrainSchedule((Phase("adam", 15, {"lr": 1e-2}), Phase("lbfgs", 3)))),
               ("ude", TrainSchedule((Phase("adam", 15, {"lr": 1e-2}, 3), Phase("rmsprop", 5))))),
)


@pytest.mark.parametrize("fraction, n_train", [(0.9, 91), (0.35, 36), (0.5, 51), (0.3, 31), (0.31, 32), (0.29, 30)])
def test_split_sizes(truth, fraction, n_train):
    train, test = split_train_forecast(truth, SplitSpec(fraction))
    assert len(train) == n_train and len(test) == 101 - n_train


def test_split_full(truth):
    with pytest.raises(DomainError):
        split_train_forecast(truth, SplitSpec(1.0))
    train, test = split_train_forecast(truth, SplitSpec(1.0, allow_empty_test=True))
    assert test is None and train == truth


@pytest.mark.parametrize("fraction", [0.0, -0.1, 1.5, 0.005])
def test_split_degenerate(truth, fraction):
    with pytest.raises(DomainError):
        split_train_forecast(truth, SplitSpec(fraction))


@given(st.floats(0.02, 0.99), st.integers(3, 200))
def test_split_reconstructs(fraction, n):
    traj = Trajectory(np.linspace(0, 1, n), np.random.default_rng(n).normal(size=(n, 2)))
    spec = SplitSpec(fraction)
    if spec.n_train(n) < 2 or spec.n_train(n) == n:
        return
    train, test = split_train_forecast(traj, spec)
    assert len(train) == math.floor(fraction * (n - 1) + 1e-9) + 1
    assert np.array_equal(np.concatenate([train.times, test.times]), traj.times)
    assert np.array_equal(np.vstack([train.states, test.states]), traj.states)


def test_rmse_examples(truth):
    assert tuple(rmse(truth, truth)) == (0.0, 0.0, 0.0)
    shifted = Trajectory(truth.times, truth.states + [0.3, 0.0])
    r = rmse(shifted, truth)
    assert r.x == pytest.approx(0.3, rel=1e-12) and r.y == 0.0
    assert r.total == pytest.approx(0.3 / math.sqrt(2), rel=1e-12)


@given(st.integers(0, 10_000), st.integers(1, 50))
def test_rmse_identity(seed, n):
    rng = np.random.default_rng(seed)
    t = np.arange(n, dtype=float)
    r = rmse(Trajectory(t, rng.normal(size=(n, 2)) * 5), Trajectory(t, rng.normal(size=(n, 2))))
    assert r.total ** 2 == pytest.approx((r.x ** 2 + r.y ** 2) / 2, rel=1e-12)


def test_rmse_grid_mismatch(truth, truth5):
    with pytest.raises(DomainError):
        rmse(truth, truth5)


def test_forecast_grid():
    model = ude()
    p = model.init_params(0) * 0.01
    long = forecast_extended(model, p, t_end=20.0)
    assert len(long) == 201 and long.times[-1] == 20.0
    short = forecast_extended(model, p, t_end=10.0)
    window = rollout(model, p, [1.0, 1.0], RolloutConfig())
    assert short == window
    with pytest.raises(DomainError):
        forecast_extended(model, p, t_end=0.0)


def test_extended_truth_periodic():
    tr = generate_truth(t_span=(0.0, 20.0), n_points=201)
    v = np.array([lv_invariant(s) for s in tr.states])
    assert np.max(np.abs(v - v[0])) < 1e-5


def _roundtrip(report, cls):
    text = report.to_json()
    back = cls.from_json(text)
    assert back == report
    assert load_report(text) == report
    assert back.to_json() == text


def test_breakdown_sweep_small(tmp_path):
    rep = breakdown_sweep(fractions=(0.5, 0.9), seeds=(0, 1), setup=TINY)
    assert rep.fractions == (0.9, 0.5)
    assert len(rep.rows) == 2 * 2 * 2
    assert [r.fraction for r in rep.rows[:4]] == [0.9, 0.9, 0.5, 0.5]
    for k in ("neuralode", "ude"):
        broken = [f for f in rep.fractions if rep.is_broken(k, f)]
        assert rep.breakdown_fraction[k] == (max(broken) if broken else None)
    header = rep.to_csv(tmp_path / "b.csv").splitlines()[0]
    assert header == "kind,fraction,seed,train_loss,forecast_rmse,broken"
    _roundtrip(rep, BreakdownReport)


def test_breakdown_validation():
    with pytest.raises(DomainError):
        breakdown_sweep(fractions=(1.0,), setup=TINY)
    with pytest.raises(DomainError):
        breakdown_sweep(fractions=(0.5,), seeds=(), setup=TINY)


def test_breakdown_jobs_identical():
    a = breakdown_sweep(kinds="ude", fractions=(0.5, 0.4), seeds=(0, 1), setup=TINY, jobs=1)
    b = breakdown_sweep(kinds="ude", fractions=(0.5, 0.4), seeds=(0, 1), setup=TINY, jobs=2)
    assert a.to_json() == b.to_json()


def test_noise_study_small():
    rep = noise_study(sigmas=(0.05,), kinds="ude", seeds=(0, 1), setup=TINY)
    assert rep.sigmas == (0.0, 0.05)
    base = [r for r in rep.rows if r.sigma == 0.0]
    assert all(r.loss_increase_pct == 0.0 for r in base)
    assert [r.noise_seed for r in rep.rows] == [1000, 1001, 1000, 1001]
    noisy = [r for r in rep.rows if r.sigma == 0.05]
    for r, b in zip(noisy, base):
        assert r.loss_increase_pct == pytest.approx(100 * (r.final_loss - b.final_loss) / b.final_loss)
    assert rep.median("ude", 0.05) == float(np.median([r.rmse_total for r in noisy]))
    _roundtrip(rep, NoiseReport)


def test_noise_defaults_and_validation():
    assert DEFAULT_SIGMAS == (0.0, 0.05, 0.1, 0.3)
    with pytest.raises(DomainError):
        noise_study(sigmas=(-0.1,), setup=TINY)


def test_hpo_sweep_repeatable():
    rep = hyperparam_sweep("hidden_units", (4, 4), kind="ude", seeds=(0,), setup=TINY)
    assert rep.rows[0].final_loss == rep.rows[1].final_loss
    _roundtrip(rep, SweepReport)
    assert rep.to_csv().splitlines()[0] == "kind,axis,value,seed,final_loss"


def test_hpo_axes():
    assert default_axis_values("hidden_units") == DEFAULT_HIDDEN_UNITS == (5, 10, 25, 50, 100)
    assert "rbf" in default_axis_values("activation") and "relu" in default_axis_values("activation")
    rep = hyperparam_sweep("activation", ("relu", "tanh"), kind="neuralode", setup=TINY)
    assert [r.value for r in rep.rows] == ["relu", "tanh"]
    rep = hyperparam_sweep("step_size", (1e-3, 1e-2), kind="ude", setup=TINY)
    assert rep.rows[0].final_loss != rep.rows[1].final_loss
    with pytest.raises(DomainError):
        hyperparam_sweep("depth", (1, 2))
    with pytest.raises(DomainError):
        hyperparam_sweep("hidden_units", (5,))
    with pytest.raises(DomainError):
        hyperparam_sweep("activation", ("relu", "gelu"))


def test_load_report_rejects_unknown():
    with pytest.raises(DomainError):
        load_report('{"study": "other", "schema_version": 1}')
    with pytest.raises(DomainError):
        BreakdownReport.from_json('{"study": "breakdown", "schema_version": 2}')


def test_study_setup_models():
    assert TINY.model("neuralode").n_params == neural_ode((6,)).n_params
    with pytest.raises(DomainError):
        TINY.model("gp")
