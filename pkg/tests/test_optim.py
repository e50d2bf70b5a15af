import numpy as np
import pytest

from lvsciml.dynamics import DomainError
from lvsciml.models import ude
from lvsciml.optim import (
    AdamState, LbfgsState, LossTrace, Phase, RmsPropState, TrainSchedule, adam_step, clip_global_norm,
    default_schedule, lbfgs_run, optimize, rmsprop_step, run_schedule,
)

A = np.diag([1.0, 10.0])


def quad(theta):
    return 0.5 * theta @ A @ theta, A @ theta


def test_adam_zero_grad():
    s = AdamState.zeros(3)
    s2, p = adam_step(s, np.ones(3), np.zeros(3))
    assert np.array_equal(p, np.ones(3)) and not s2.m.any() and not s2.v.any()


def test_adam_first_step_is_lr_sign():
    g = np.array([3.0, -0.02, 1e4])
    _, p = adam_step(AdamState.zeros(3, lr=0.01), np.zeros(3), g)
    np.testing.assert_allclose(p, -0.01 * np.sign(g), rtol=1e-6)


def test_adam_rejects_nonfinite():
    s = AdamState.zeros(2)
    s2, p = adam_step(s, np.ones(2), np.array([np.nan, 1.0]))
    assert s2 is s and np.array_equal(p, np.ones(2))


def test_step_length_mismatch():
    with pytest.raises(DomainError):
        adam_step(AdamState.zeros(2), np.ones(3), np.ones(3))
    with pytest.raises(DomainError):
        rmsprop_step(RmsPropState.zeros(2), np.ones(2), np.ones(3))


def test_rmsprop_examples():
    s = RmsPropState.zeros(2)
    s2, p = rmsprop_step(s, np.ones(2), np.zeros(2))
    assert np.array_equal(p, np.ones(2))
    g = np.array([2.0, -5.0])
    _, p = rmsprop_step(RmsPropState.zeros(2, lr=1e-3), np.zeros(2), g)
    np.testing.assert_allclose(p, -1e-3 / np.sqrt(0.1) * np.sign(g), rtol=1e-6)
    s, p = RmsPropState.zeros(2, lr=1e-3), np.zeros(2)
    for _ in range(300):
        prev = p
        s, p = rmsprop_step(s, p, g)
    np.testing.assert_allclose(prev - p, 1e-3 * np.sign(g), rtol=1e-6)
    s3, p3 = rmsprop_step(s, p, np.array([np.inf, 0.0]))
    assert s3 is s and p3 is p


def test_first_order_steps_deterministic():
    rng = np.random.default_rng(0)
    g = rng.normal(size=5)
    a = adam_step(AdamState.zeros(5), np.ones(5), g)
    b = adam_step(AdamState.zeros(5), np.ones(5), g)
    assert np.array_equal(a[1], b[1]) and np.array_equal(a[0].v, b[0].v)


def _run_first_order(state, step, iters):
    x = np.ones(2)
    for _ in range(iters):
        state, x = step(state, x, quad(x)[1])
    return np.linalg.norm(quad(x)[1])


def test_adam_quadratic_default_budget():
    # default hyperparameters, Adam budget of the long schedule
    assert _run_first_order(AdamState.zeros(2), adam_step, 20_000) < 1e-4


def test_rmsprop_quadratic_default_budget():
    # default hyperparameters, RMSProp budget of the long schedule
    assert _run_first_order(RmsPropState.zeros(2), rmsprop_step, 5_000) < 1e-4


def test_lbfgs_quadratic():
    x, tr = lbfgs_run(quad, np.ones(2), iters=20)
    assert np.linalg.norm(quad(x)[1]) < 1e-8
    assert len(tr.losses) - 1 <= 20
    assert np.all(np.diff(tr.losses) <= 0)


def test_lbfgs_at_minimum():
    x, tr = lbfgs_run(quad, np.zeros(2), iters=10)
    assert np.array_equal(x, np.zeros(2)) and tr.converged and len(tr.losses) == 1


def test_lbfgs_monotone_on_rosenbrock():
    def rosen(z):
        x, y = z
        f = (1 - x) ** 2 + 100 * (y - x * x) ** 2
        return f, np.array([-2 * (1 - x) - 400 * x * (y - x * x), 200 * (y - x * x)])
    x, tr = lbfgs_run(rosen, np.array([-1.2, 1.0]), iters=200)
    assert np.all(np.diff(tr.losses) <= 0)
    np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-6)


def test_lbfgs_skips_bad_curvature():
    st = LbfgsState()
    assert not st.push(np.array([1.0, 0.0]), np.array([-1.0, 0.0]))
    assert st.s_hist == []


def test_lbfgs_failure_flag():
    # gradient points the wrong way, so no step ever satisfies Armijo
    x, tr = lbfgs_run(lambda z: (float(z @ z), -z), np.ones(2), iters=10)
    assert tr.failed and np.array_equal(x, np.ones(2))


def test_clip_global_norm():
    g = np.array([3.0, 4.0])
    np.testing.assert_allclose(clip_global_norm(g, 1.0), [0.6, 0.8])
    assert clip_global_norm(g, 10.0) is g


def test_schedule_validation():
    with pytest.raises(DomainError):
        TrainSchedule(())
    with pytest.raises(DomainError):
        Phase("sgd", 10)
    with pytest.raises(DomainError):
        Phase("adam", -1)
    with pytest.raises(DomainError):
        default_schedule("ude", "huge")


def test_default_schedules():
    node = default_schedule("neuralode")
    assert [(p.kind, p.iterations, p.params.get("lr")) for p in node.phases] == [("adam", 400, 1e-3), ("lbfgs", 100, None)]
    u = default_schedule("ude")
    assert [(p.kind, p.iterations) for p in u.phases] == [("adam", 20_000), ("rmsprop", 5_000)]
    assert u.phases[1].params == {"lr": 1e-3, "rho": 0.9, "eps": 1e-8}
    assert [p.iterations for p in default_schedule("ude", "desk").phases] == [2_000, 500]
    assert [p.iterations for p in default_schedule("neuralode", "desk").phases] == [300, 50]


@pytest.mark.parametrize("kind", ["adam", "rmsprop", "lbfgs"])
def test_zero_improvement_returns_params0(kind):
    flat = lambda m: (lambda p: (1.0, np.zeros_like(p)))
    p0 = np.array([0.3, -2.0])
    p, tr = optimize(flat, 10, p0, TrainSchedule((Phase(kind, 5),)))
    assert np.array_equal(p, p0) and tr.final_loss == tr.initial_loss == 1.0


def test_run_schedule_deterministic_and_traced(truth):
    model = ude((5,), "relu")
    sched = TrainSchedule((Phase("adam", 30, {"lr": 1e-2}, horizons=3), Phase("lbfgs", 5)))
    p0 = model.init_params(0)
    a, ta = run_schedule(model, p0, truth, sched)
    b, tb = run_schedule(model, p0, truth, sched)
    assert np.array_equal(a, b) and ta.rows == tb.rows
    assert [r[0] for r in ta.rows[:30]] == ["0:adam"] * 30
    assert ta.final_loss < ta.initial_loss


def test_trace_csv(tmp_path):
    tr = LossTrace()
    tr.add("0:adam", 0, 2.5)
    tr.add("1:lbfgs", 0, 0.1)
    text = tr.to_csv(tmp_path / "t.csv")
    assert text == "phase,iteration,loss\n0:adam,0,2.5\n1:lbfgs,0,0.1\n"
    assert (tmp_path / "t.csv").read_text() == text


def test_loss_decrease_pct():
    tr = LossTrace(initial_loss=200.0, final_loss=20.0)
    assert tr.loss_decrease_pct == pytest.approx(90.0)
