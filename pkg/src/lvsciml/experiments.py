"""Train/forecast splits, RMSE scoring and the three studies: forecast
breakdown over training fractions, noise robustness and hyperparameter grids.

Every study is a list of independent cells. A cell is a plain picklable
tuple, so cells can be farmed out to worker processes; results come back in
submission order, which keeps reports identical for any ``jobs`` value.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import NamedTuple, Optional

import numpy as np

from .dynamics import DomainError, LvParams, Trajectory, add_noise, format_float, generate_truth, uniform_grid
from .models import NEURALODE, UDE, DiffModel, RolloutConfig, neural_ode, rollout, ude
from .optim import Phase, TrainSchedule, default_schedule, run_schedule
from .solvers import IntegrationError
from .tinynet import ACTIVATIONS

SCHEMA_VERSION = 1
KINDS = (NEURALODE, UDE)
DEFAULT_FRACTIONS = (0.9, 0.5, 0.4, 0.35, 0.31, 0.3)
DEFAULT_SIGMAS = (0.0, 0.05, 0.1, 0.3)
DEFAULT_HIDDEN_UNITS = (5, 10, 25, 50, 100)
DEFAULT_STEP_SIZES = (1e-4, 1e-3, 1e-2, 1e-1)
SWEEP_AXES = ("hidden_units", "activation", "step_size")


# ---------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float
    allow_empty_test: bool = False

    def __post_init__(self):
        if not 0 < self.train_fraction <= 1:
            raise DomainError(f"train_fraction must lie in (0, 1], got {self.train_fraction}")

    def n_train(self, n_points: int) -> int:
        # the small epsilon keeps e.g. 0.35 * 100 = 35.000000000000004 from
        # rounding differently to 0.29 * 100 = 28.999999999999996
        return min(n_points, int(math.floor(self.train_fraction * (n_points - 1) + 1e-9)) + 1)


def split_train_forecast(traj: Trajectory, spec: SplitSpec):
    """Split by index into a training prefix and a forecast suffix.

    The suffix is ``None`` only for ``train_fraction == 1`` with
    ``allow_empty_test`` set.
    """
    n = len(traj)
    k = spec.n_train(n)
    if k < 2:
        raise DomainError(f"split leaves {k} training point(s); need at least 2")
    if k == n:
        if not spec.allow_empty_test:
            raise DomainError("split leaves no forecast points; pass allow_empty_test=True")
        return Trajectory(traj.times.copy(), traj.states.copy()), None
    train = Trajectory(traj.times[:k].copy(), traj.states[:k].copy())
    test = Trajectory(traj.times[k:].copy(), traj.states[k:].copy())
    return train, test


class Rmse(NamedTuple):
    x: float
    y: float
    total: float


def rmse(pred: Trajectory, actual: Trajectory) -> Rmse:
    if len(pred) != len(actual) or not np.allclose(pred.times, actual.times, rtol=0, atol=1e-9):
        raise DomainError("rmse needs trajectories on the same grid")
    err = pred.states - actual.states
    per = np.sqrt(np.mean(err ** 2, axis=0))
    return Rmse(float(per[0]), float(per[1]), float(np.sqrt(np.mean(err ** 2))))


def forecast_extended(model: DiffModel, params, init=(1.0, 1.0), t_end: float = 20.0, dt: float = 0.1,
                      substeps: int = 4) -> Trajectory:
    """Roll the model out from t=0 on a uniform ``dt`` grid up to ``t_end``."""
    if not t_end > 0:
        raise DomainError("t_end must be > 0")
    n = int(round(t_end / dt)) + 1
    if not math.isclose((n - 1) * dt, t_end, rel_tol=1e-9):
        raise DomainError(f"t_end={t_end} is not a multiple of dt={dt}")
    return rollout(model, params, init, RolloutConfig(uniform_grid(0.0, t_end, n), substeps))


# ---------------------------------------------------------------- setup


@dataclass(frozen=True)
class StudySetup:
    """Everything a study cell needs besides its own coordinates."""

    lv: LvParams = LvParams()
    init: tuple = (1.0, 1.0)
    t_end: float = 10.0
    n_points: int = 101
    budget: str = "desk"
    substeps: int = 4
    threshold: float = 1.0
    node_hidden: tuple = (100, 100, 100)
    node_activation: str = "rbf"
    ude_hidden: tuple = (10, 10, 10)
    ude_activation: str = "relu"
    schedules: tuple = ()  # ((kind, TrainSchedule), ...) overriding the budget defaults

    def truth(self) -> Trajectory:
        return generate_truth(self.lv, self.init, (0.0, self.t_end), self.n_points)

    def model(self, kind: str, hidden=None, activation=None) -> DiffModel:
        if kind == NEURALODE:
            return neural_ode(tuple(hidden or self.node_hidden), activation or self.node_activation)
        if kind == UDE:
            return ude(tuple(hidden or self.ude_hidden), activation or self.ude_activation, self.lv)
        raise DomainError(f"unknown model kind {kind!r}")

    def schedule(self, kind: str) -> TrainSchedule:
        overrides = dict(self.schedules)
        return overrides[kind] if kind in overrides else default_schedule(kind, self.budget)


def _fit_and_forecast(setup, model, schedule, train, truth, seed):
    """Train on ``train`` and score the rollout over the rest of ``truth``."""
    params, trace = run_schedule(model, model.init_params(seed), train, schedule, setup.substeps)
    k = len(train)
    try:
        pred = rollout(model, params, truth.states[0], RolloutConfig(truth.times, setup.substeps))
    except IntegrationError as exc:
        return trace, None, str(exc)
    if k == len(truth):
        return trace, None, ""
    test_pred = Trajectory(pred.times[k:], pred.states[k:])
    test_true = Trajectory(truth.times[k:], truth.states[k:])
    return trace, rmse(test_pred, test_true), ""


def run_cells(fn, cells, jobs: int = 1) -> list:
    """Map ``fn`` over ``cells``, in worker processes when ``jobs > 1``."""
    cells = list(cells)
    if jobs <= 1 or len(cells) <= 1:
        return [fn(c) for c in cells]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, cells))


def _median(values) -> float:
    vals = [v for v in values if v is not None]
    return float(np.median(vals)) if vals else math.inf


# ---------------------------------------------------------------- reports


class _Report:
    """JSON/CSV plumbing shared by the report types."""

    study = ""
    row_type = None

    def to_dict(self) -> dict:
        doc = {"schema_version": SCHEMA_VERSION, "study": self.study}
        for f in fields(self):
            value = getattr(self, f.name)
            doc[f.name] = [asdict(r) for r in value] if f.name == "rows" else _jsonable(value)
        return doc

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, doc: dict):
        if doc.get("schema_version") != SCHEMA_VERSION or doc.get("study") != cls.study:
            raise DomainError(f"not a version-{SCHEMA_VERSION} {cls.study} report")
        kwargs = {}
        for f in fields(cls):
            value = doc[f.name]
            if f.name == "rows":
                kwargs[f.name] = [cls.row_type(**r) for r in value]
            else:
                kwargs[f.name] = _from_jsonable(value)
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text_or_path):
        text = text_or_path
        if not text.lstrip().startswith("{"):
            with open(text_or_path) as fh:
                text = fh.read()
        return cls.from_dict(json.loads(text))

    def _write_csv(self, header, rows, path):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_float(v) if isinstance(v, float) else v for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def _from_jsonable(value):
    return tuple(value) if isinstance(value, list) else value


@dataclass(frozen=True)
class BreakdownRow:
    kind: str
    fraction: float
    seed: int
    n_train: int
    train_loss: float
    forecast_rmse: float
    rmse_x: float
    rmse_y: float
    broken: bool
    error: str = ""


@dataclass
class BreakdownReport(_Report):
    threshold: float
    fractions: tuple
    rows: list = field(default_factory=list)
    # per kind: fraction (as string key) -> median forecast RMSE / flag
    medians: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    breakdown_fraction: dict = field(default_factory=dict)

    study = "breakdown"
    row_type = BreakdownRow

    def to_csv(self, path=None) -> str:
        header = ["kind", "fraction", "seed", "train_loss", "forecast_rmse", "broken"]
        rows = [(r.kind, r.fraction, r.seed, r.train_loss, r.forecast_rmse, str(r.broken).lower()) for r in self.rows]
        return self._write_csv(header, rows, path)

    def is_broken(self, kind: str, fraction: float) -> bool:
        return bool(self.flags[kind][_fkey(fraction)])


def _fkey(fraction: float) -> str:
    return format_float(fraction)


def _breakdown_cell(cell):
    setup, kind, fraction, seed = cell
    truth = setup.truth()
    train, _ = split_train_forecast(truth, SplitSpec(fraction))
    model = setup.model(kind)
    try:
        trace, score, err = _fit_and_forecast(setup, model, setup.schedule(kind), train, truth, seed)
        loss = trace.final_loss
    except Exception as exc:  # a failed cell is recorded, the sweep goes on
        score, err, loss = None, f"{type(exc).__name__}: {exc}", math.inf
    total = score.total if score else math.inf
    return BreakdownRow(kind, float(fraction), int(seed), len(train), float(loss), total,
                        score.x if score else math.inf, score.y if score else math.inf,
                        bool(total > setup.threshold), err)


def breakdown_sweep(kinds=KINDS, fractions=DEFAULT_FRACTIONS, seeds=(0, 1, 2), setup: StudySetup = StudySetup(),
                    jobs: int = 1) -> BreakdownReport:
    """Forecast RMSE over training fractions; a fraction is flagged broken when
    the median over seeds exceeds ``setup.threshold``."""
    if isinstance(kinds, str):
        kinds = (kinds,)
    fractions = tuple(sorted({float(f) for f in fractions}, reverse=True))
    if not fractions or not all(0 < f < 1 for f in fractions):
        raise DomainError("fractions must lie in (0, 1)")
    if not seeds:
        raise DomainError("need at least one seed")
    cells = [(setup, k, f, s) for k in kinds for f in fractions for s in seeds]
    rows = run_cells(_breakdown_cell, cells, jobs)
    report = BreakdownReport(setup.threshold, fractions, rows)
    for k in kinds:
        med, flag = {}, {}
        for f in fractions:
            m = _median([r.forecast_rmse for r in rows if r.kind == k and r.fraction == f])
            med[_fkey(f)] = m
            flag[_fkey(f)] = bool(m > setup.threshold)
        report.medians[k] = med
        report.flags[k] = flag
        broken = [f for f in fractions if flag[_fkey(f)]]
        report.breakdown_fraction[k] = max(broken) if broken else None
    return report


@dataclass(frozen=True)
class NoiseRow:
    kind: str
    sigma: float
    seed: int
    noise_seed: int
    final_loss: float
    rmse_x: float
    rmse_y: float
    rmse_total: float
    loss_increase_pct: float
    error: str = ""


@dataclass
class NoiseReport(_Report):
    fraction: float
    sigmas: tuple
    rows: list = field(default_factory=list)

    study = "noise"
    row_type = NoiseRow

    def to_csv(self, path=None) -> str:
        header = ["kind", "sigma", "seed", "noise_seed", "final_loss", "rmse_x", "rmse_y", "rmse_total",
                  "loss_increase_pct"]
        rows = [(r.kind, r.sigma, r.seed, r.noise_seed, r.final_loss, r.rmse_x, r.rmse_y, r.rmse_total,
                 r.loss_increase_pct) for r in self.rows]
        return self._write_csv(header, rows, path)

    def median(self, kind: str, sigma: float, column: str = "rmse_total") -> float:
        return _median([getattr(r, column) for r in self.rows if r.kind == kind and r.sigma == sigma])


def _noise_cell(cell):
    setup, kind, sigma, seed, noise_seed, fraction = cell
    truth = setup.truth()
    noisy = add_noise(truth, sigma, noise_seed)
    train, _ = split_train_forecast(noisy, SplitSpec(fraction))
    model = setup.model(kind)
    try:
        trace, score, err = _fit_and_forecast(setup, model, setup.schedule(kind), train, truth, seed)
        loss = trace.final_loss
    except Exception as exc:
        score, err, loss = None, f"{type(exc).__name__}: {exc}", math.inf
    inf = math.inf
    return NoiseRow(kind, float(sigma), int(seed), int(noise_seed), float(loss),
                    score.x if score else inf, score.y if score else inf, score.total if score else inf,
                    0.0, err)


def noise_study(sigmas=DEFAULT_SIGMAS, kinds=KINDS, seeds=(0, 1, 2), setup: StudySetup = StudySetup(),
                fraction: float = 0.5, noise_seed_base: int = 1000, jobs: int = 1) -> NoiseReport:
    """Train on noisy prefixes and forecast against the noiseless truth.

    Noise for init seed ``s`` is drawn with seed ``noise_seed_base + s``, the
    same draw for every model kind. The loss increase is relative to the
    sigma=0 cell of the same kind and seed (added automatically).
    """
    if isinstance(kinds, str):
        kinds = (kinds,)
    sigmas = tuple(sorted({float(s) for s in sigmas} | {0.0}))
    if any(not s >= 0 for s in sigmas):
        raise DomainError("sigmas must be >= 0")
    cells = [(setup, k, s, seed, noise_seed_base + seed, fraction) for k in kinds for s in sigmas for seed in seeds]
    rows = run_cells(_noise_cell, cells, jobs)
    base = {(r.kind, r.seed): r.final_loss for r in rows if r.sigma == 0.0}
    out = []
    for r in rows:
        b = base[(r.kind, r.seed)]
        if r.sigma == 0.0:
            pct = 0.0
        elif b > 0 and math.isfinite(b) and math.isfinite(r.final_loss):
            pct = 100.0 * (r.final_loss - b) / b
        else:
            pct = math.inf
        out.append(replace(r, loss_increase_pct=pct))
    return NoiseReport(float(fraction), sigmas, out)


@dataclass(frozen=True)
class SweepRow:
    value: object
    seed: int
    final_loss: float
    error: str = ""


@dataclass
class SweepReport(_Report):
    axis: str
    kind: str
    values: tuple
    rows: list = field(default_factory=list)

    study = "hpo"
    row_type = SweepRow

    def to_csv(self, path=None) -> str:
        rows = [(self.kind, self.axis, r.value, r.seed, r.final_loss) for r in self.rows]
        return self._write_csv(["kind", "axis", "value", "seed", "final_loss"], rows, path)

    def losses(self, value) -> list:
        return [r.final_loss for r in self.rows if r.value == value]


def _with_lr(schedule: TrainSchedule, lr: float) -> TrainSchedule:
    phases = tuple(
        Phase(p.kind, p.iterations, {**p.params, "lr": lr}, p.horizons) if p.kind != "lbfgs" else p
        for p in schedule.phases
    )
    return replace(schedule, phases=phases)


def _sweep_cell(cell):
    setup, kind, axis, value, seed = cell
    schedule = setup.schedule(kind)
    if axis == "hidden_units":
        depth = len(setup.node_hidden if kind == NEURALODE else setup.ude_hidden)
        model = setup.model(kind, hidden=(int(value),) * depth)
    elif axis == "activation":
        model = setup.model(kind, activation=str(value))
    else:
        model = setup.model(kind)
        schedule = _with_lr(schedule, float(value))
    truth = setup.truth()
    try:
        _, trace = run_schedule(model, model.init_params(seed), truth, schedule, setup.substeps)
        return SweepRow(value, int(seed), float(trace.final_loss))
    except Exception as exc:
        return SweepRow(value, int(seed), math.inf, f"{type(exc).__name__}: {exc}")


def default_axis_values(axis: str) -> tuple:
    return {"hidden_units": DEFAULT_HIDDEN_UNITS, "activation": ACTIVATIONS, "step_size": DEFAULT_STEP_SIZES}[axis]


def hyperparam_sweep(axis: str, values=None, kind: str = UDE, seeds=(0,), setup: StudySetup = StudySetup(),
                     jobs: int = 1) -> SweepReport:
    """Final full-data training loss over one hyperparameter axis."""
    if axis not in SWEEP_AXES:
        raise DomainError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    values = tuple(default_axis_values(axis) if values is None else values)
    if len(values) < 2:
        raise DomainError("a sweep needs at least 2 values")
    if axis == "activation" and any(v not in ACTIVATIONS for v in values):
        raise DomainError(f"activations must come from {ACTIVATIONS}")
    cells = [(setup, kind, axis, v, s) for v in values for s in seeds]
    return SweepReport(axis, kind, values, run_cells(_sweep_cell, cells, jobs))


REPORT_TYPES = {cls.study: cls for cls in (BreakdownReport, NoiseReport, SweepReport)}


def load_report(path_or_text):
    text = path_or_text
    if not text.lstrip().startswith("{"):
        with open(path_or_text) as fh:
            text = fh.read()
    doc = json.loads(text)
    cls = REPORT_TYPES.get(doc.get("study"))
    if cls is None:
        raise DomainError(f"unknown report study {doc.get('study')!r}")
    return cls.from_dict(doc)
