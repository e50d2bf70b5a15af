"""Acceptance criteria, one test each, at their stated tolerances.

Every test prints a ``criterion N [PASS|FAIL]`` line (repeated in the terminal
summary). Training-based criteria are marked ``slow``; skip them with
``-m "not slow"``.
"""

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from lvsciml.dynamics import LvParams, generate_truth, lv_invariant, lv_rhs_unchecked
from lvsciml.experiments import StudySetup, breakdown_sweep, noise_study
from lvsciml.models import neural_ode, recovered_interaction, ude
from lvsciml.optim import default_schedule, run_schedule, ude_converge_schedule
from lvsciml.sensitivity import adjoint_grad_continuous, loss_and_grad_discrete, loss_grad_fd
from lvsciml.solvers import ToleranceSpec, rk4_fixed

SEEDS = (0, 1, 2)


def rel(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def test_criterion_1_solver_fidelity(verdict):
    truth = generate_truth()
    lv = LvParams()
    fine = rk4_fixed(lambda t, u: lv_rhs_unchecked(u, lv), [1.0, 1.0], truth.times, substeps=1000)
    err = float(np.max(np.abs(truth.states - fine.states)))
    v = np.array([lv_invariant(s) for s in truth.states])
    drift = float(np.max(np.abs(v - v[0])))
    ok = verdict(1, "solver fidelity", err < 1e-6 and drift < 1e-5,
                 f"max |Tsit5 - RK4(dt=1e-4)| = {err:.2e} (< 1e-6), V drift = {drift:.2e} (< 1e-5)")
    assert ok


def test_criterion_2_gradient_correctness(verdict):
    data = generate_truth(t_span=(0.0, 1.0), n_points=5)
    parts, ok = [], True
    for name, model in (("neural ODE [2,5,2]", neural_ode((5,), "rbf")), ("UDE 2x[2,5,1]", ude((5,), "relu"))):
        p = model.init_params(0)
        _, g = loss_and_grad_discrete(model, p, data)
        fd = rel(g, loss_grad_fd(model, p, data, h=1e-5))
        adj = rel(adjoint_grad_continuous(model, p, data, ToleranceSpec(1e-8, 1e-8)), g)
        ok &= fd < 1e-4 and adj < 1e-2
        parts.append(f"{name}: FD {fd:.1e}, adjoint {adj:.1e}")
    assert verdict(2, "gradient correctness", ok, "; ".join(parts) + " (limits 1e-4, 1e-2)")


@pytest.mark.slow
def test_criterion_3_training_efficacy(verdict):
    truth = generate_truth()
    need = {"ude": 90.0, "neuralode": 85.0}
    parts, ok = [], True
    for kind, model in (("ude", ude()), ("neuralode", neural_ode())):
        pct = []
        for seed in SEEDS:
            _, trace = run_schedule(model, model.init_params(seed), truth, default_schedule(kind, "desk"))
            pct.append(trace.loss_decrease_pct)
        wins = sum(p >= need[kind] for p in pct)
        ok &= wins >= 2
        parts.append(f"{kind} decrease % = {', '.join(f'{p:.2f}' for p in pct)} "
                     f"({wins}/3 >= {need[kind]:.0f}%)")
    assert verdict(3, "training efficacy (desk budget)", ok, "; ".join(parts))


@pytest.mark.slow
def test_criterion_4_breakdown_ordering(verdict):
    rep = breakdown_sweep(seeds=SEEDS, setup=StudySetup(budget="desk"))
    node_broken = rep.is_broken("neuralode", 0.35)
    ude_ok = not rep.is_broken("ude", 0.35)
    bf = {k: rep.breakdown_fraction[k] or 0.0 for k in ("neuralode", "ude")}
    ordered = bf["ude"] <= bf["neuralode"]
    med = {k: rep.medians[k]["0.35"] for k in ("neuralode", "ude")}
    ok = node_broken and ude_ok and ordered
    detail = (f"median RMSE at 0.35: neural ODE {med['neuralode']:.3g} (broken: {node_broken}), "
              f"UDE {med['ude']:.3g} (unbroken: {ude_ok}); breakdown fraction UDE {bf['ude']} "
              f"<= neural ODE {bf['neuralode']}: {ordered}")
    assert verdict(4, "breakdown ordering", ok, detail)


@pytest.mark.slow
def test_criterion_5_noise_ordering(verdict):
    rep = noise_study(sigmas=(0.05, 0.3), seeds=SEEDS, setup=StudySetup(budget="paper"))
    low = {k: rep.median(k, 0.05) for k in ("neuralode", "ude")}
    high = {k: rep.median(k, 0.3) for k in ("neuralode", "ude")}
    inc = {k: rep.median(k, 0.3, "loss_increase_pct") for k in ("neuralode", "ude")}
    a = max(low.values()) < 1.0
    b = high["ude"] < high["neuralode"]
    c = inc["ude"] < inc["neuralode"]
    detail = (f"sigma=0.05 RMSE neural ODE {low['neuralode']:.3g}, UDE {low['ude']:.3g} (< 1: {a}); "
              f"sigma=0.3 RMSE UDE {high['ude']:.3g} < neural ODE {high['neuralode']:.3g}: {b}; "
              f"loss increase UDE {inc['ude']:.0f}% < neural ODE {inc['neuralode']:.0f}%: {c}")
    assert verdict(5, "noise robustness ordering", a and b and c, detail)


@pytest.mark.slow
def test_criterion_6_term_recovery(verdict):
    truth = generate_truth()
    model = ude()
    maes = []
    for seed in SEEDS:
        params, _ = run_schedule(model, model.init_params(seed), truth, ude_converge_schedule())
        r = recovered_interaction(model, params, truth.states)
        maes.append((float(np.mean(np.abs(r["nn1"] - r["beta_xy_true"]))),
                     float(np.mean(np.abs(r["nn2"] - r["gamma_xy_true"])))))
    med1, med2 = np.median([m[0] for m in maes]), np.median([m[1] for m in maes])
    per_seed = ", ".join(f"{a:.3f}/{b:.3f}" for a, b in maes)
    ok = med1 < 0.1 and med2 < 0.1
    assert verdict(6, "UDE term recovery", ok,
                   f"MAE NN1/NN2 per seed {per_seed}; median {med1:.3f}/{med2:.3f} (< 0.1)")


def test_criterion_7_property_suites(verdict):
    here = Path(__file__).parent
    files = sorted(str(p) for p in here.glob("test_*.py") if p.name != Path(__file__).name)
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-rf", "-p", "no:cacheprovider", *files],
                          capture_output=True, text=True, cwd=here.parent)
    elapsed = time.perf_counter() - t0
    failed = [ln.split(" ")[1] for ln in proc.stdout.splitlines() if ln.startswith("FAILED ")]
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0 and elapsed < 300
    detail = f"{summary.strip('= ')}; {elapsed:.0f} s (< 300 s)"
    if failed:
        detail += "; failing: " + ", ".join(f.split("::")[-1] for f in failed)
    assert verdict(7, "property suites", ok, detail)
