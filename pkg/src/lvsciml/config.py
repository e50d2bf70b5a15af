"""Flat ``key = value`` run configuration.

Every tunable default lives in :data:`DEFAULTS`; files may set any subset of
those keys and anything else is rejected. ``dump`` writes the full effective
configuration back out, so a dumped file reproduces a run exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .dynamics import DomainError, LvParams
from .experiments import StudySetup
from .optim import Phase, TrainSchedule

# key -> (default, kind, description); kinds: float, int, str, floats, ints
DEFAULTS = {
    "lv.alpha": (1.5, "float", "prey growth rate"),
    "lv.beta": (1.0, "float", "predation rate"),
    "lv.gamma": (0.5, "float", "predator conversion rate"),
    "lv.delta": (2.0, "float", "predator death rate"),
    "data.x0": (1.0, "float", "initial prey population"),
    "data.y0": (1.0, "float", "initial predator population"),
    "data.t_end": (10.0, "float", "end of the data window (starts at 0)"),
    "data.n_points": (101, "int", "number of uniformly spaced samples"),
    "data.sigma": (0.0, "float", "std of additive Gaussian noise for generate"),
    "data.noise_seed": (0, "int", "seed of the noise draw for generate"),
    "solver.reltol": (1e-8, "float", "Tsit5 relative tolerance for ground truth"),
    "solver.abstol": (1e-8, "float", "Tsit5 absolute tolerance for ground truth"),
    "model.neuralode.hidden": ((100, 100, 100), "ints", "hidden widths of the neural ODE net"),
    "model.neuralode.activation": ("rbf", "str", "hidden activation of the neural ODE net"),
    "model.ude.hidden": ((10, 10, 10), "ints", "hidden widths of each UDE interaction net"),
    "model.ude.activation": ("relu", "str", "hidden activation of the UDE nets"),
    "train.seed": (0, "int", "parameter initialisation seed"),
    "train.budget": ("paper", "str", "iteration budget for train: desk or paper"),
    "train.substeps": (4, "int", "RK4 steps per sample interval"),
    "train.clip_norm": (1000.0, "float", "global gradient-norm clip"),
    "train.neuralode.paper.adam_iters": (400, "int", "Adam iterations"),
    "train.neuralode.paper.lbfgs_iters": (100, "int", "L-BFGS iterations"),
    "train.neuralode.paper.lr": (1e-3, "float", "Adam learning rate"),
    "train.neuralode.desk.adam_iters": (300, "int", "Adam iterations"),
    "train.neuralode.desk.lbfgs_iters": (50, "int", "L-BFGS iterations"),
    "train.neuralode.desk.lr": (1e-3, "float", "Adam learning rate"),
    "train.ude.paper.adam_iters": (20000, "int", "Adam iterations"),
    "train.ude.paper.rmsprop_iters": (5000, "int", "RMSProp iterations"),
    "train.ude.paper.lr": (1e-2, "float", "Adam learning rate"),
    "train.ude.paper.rms_lr": (1e-3, "float", "RMSProp learning rate"),
    "train.ude.paper.horizons": (10, "int", "curriculum stages of the Adam phase"),
    "train.ude.desk.adam_iters": (2000, "int", "Adam iterations"),
    "train.ude.desk.rmsprop_iters": (500, "int", "RMSProp iterations"),
    "train.ude.desk.lr": (1e-2, "float", "Adam learning rate"),
    "train.ude.desk.rms_lr": (1e-3, "float", "RMSProp learning rate"),
    "train.ude.desk.horizons": (10, "int", "curriculum stages of the Adam phase"),
    "sweep.budget": ("desk", "str", "iteration budget for sweeps: desk or paper"),
    "sweep.seeds": ((0, 1, 2), "ints", "init seeds per sweep cell"),
    "sweep.fractions": ((0.9, 0.5, 0.4, 0.35, 0.31, 0.3), "floats", "training fractions for breakdown"),
    "sweep.threshold": (1.0, "float", "forecast RMSE above which a fraction is broken"),
    "sweep.sigmas": ((0.0, 0.05, 0.1, 0.3), "floats", "noise levels for the noise study"),
    "sweep.noise_fraction": (0.5, "float", "training fraction for the noise study"),
    "sweep.noise_seed_base": (1000, "int", "noise seed is this plus the init seed"),
    "sweep.hpo_seeds": ((0,), "ints", "init seeds per hyperparameter cell"),
    "sweep.hidden_units": ((5, 10, 25, 50, 100), "ints", "hidden_units axis"),
    "sweep.activations": (("rbf", "relu", "tanh", "sigmoid"), "strs", "activation axis"),
    "sweep.step_sizes": ((1e-4, 1e-3, 1e-2, 1e-1), "floats", "step_size (learning rate) axis"),
    "forecast.t_end": (20.0, "float", "forecast horizon"),
    "forecast.dt": (0.1, "float", "forecast grid spacing"),
    "output.dir": ("out", "str", "output directory"),
}

_SCALARS = {"float": float, "int": int, "str": str}


def _parse_value(kind: str, text: str):
    text = text.strip()
    if kind in _SCALARS:
        return _SCALARS[kind](text)
    items = [s.strip() for s in text.split(",") if s.strip()]
    conv = {"floats": float, "ints": int, "strs": str}[kind]
    return tuple(conv(s) for s in items)


def _format_value(kind: str, value) -> str:
    if kind in ("floats", "ints", "strs"):
        return ", ".join(_format_value(kind[:-1], v) for v in value)
    if kind == "float":
        return repr(float(value))
    return str(value)


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {k: v[0] for k, v in DEFAULTS.items()})

    def __getitem__(self, key):
        return self.values[key]

    def set(self, key: str, value) -> None:
        if key not in DEFAULTS:
            raise DomainError(f"unknown config key {key!r}")
        kind = DEFAULTS[key][1]
        try:
            self.values[key] = _parse_value(kind, value) if isinstance(value, str) else _coerce(kind, value)
        except ValueError as exc:
            raise DomainError(f"bad value for {key}: {value!r} ({exc})") from None

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DomainError(f"{source}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            try:
                cfg.set(key, value)
            except DomainError as exc:
                raise DomainError(f"{source}:{lineno}: {exc}") from None
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_text(fh.read(), str(path))

    def dump(self) -> str:
        lines = ["# lvsciml run configuration; every key with its effective value"]
        section = None
        for key, (_, kind, doc) in DEFAULTS.items():
            head = key.split(".")[0]
            if head != section:
                lines.append("")
                section = head
            lines.append(f"# {doc}")
            lines.append(f"{key} = {_format_value(kind, self.values[key])}")
        return "\n".join(lines) + "\n"

    # -- builders

    def lv_params(self) -> LvParams:
        return LvParams(self["lv.alpha"], self["lv.beta"], self["lv.gamma"], self["lv.delta"])

    def schedule(self, kind: str, budget: str) -> TrainSchedule:
        if budget not in ("desk", "paper"):
            raise DomainError(f"unknown budget {budget!r}")
        p = f"train.{kind}.{budget}."
        clip = self["train.clip_norm"]
        if kind == "neuralode":
            phases = (Phase("adam", self[p + "adam_iters"], {"lr": self[p + "lr"]}),
                      Phase("lbfgs", self[p + "lbfgs_iters"]))
        elif kind == "ude":
            phases = (Phase("adam", self[p + "adam_iters"], {"lr": self[p + "lr"]}, self[p + "horizons"]),
                      Phase("rmsprop", self[p + "rmsprop_iters"], {"lr": self[p + "rms_lr"], "rho": 0.9, "eps": 1e-8}))
        else:
            raise DomainError(f"unknown model kind {kind!r}")
        return TrainSchedule(phases, clip_norm=clip)

    def study_setup(self, budget: str = None) -> StudySetup:
        budget = budget or self["sweep.budget"]
        return StudySetup(
            lv=self.lv_params(),
            init=(self["data.x0"], self["data.y0"]),
            t_end=self["data.t_end"],
            n_points=self["data.n_points"],
            budget=budget,
            substeps=self["train.substeps"],
            threshold=self["sweep.threshold"],
            node_hidden=self["model.neuralode.hidden"],
            node_activation=self["model.neuralode.activation"],
            ude_hidden=self["model.ude.hidden"],
            ude_activation=self["model.ude.activation"],
            schedules=tuple((k, self.schedule(k, budget)) for k in ("neuralode", "ude")),
        )


def _coerce(kind, value):
    if kind in _SCALARS:
        if kind == "int" and isinstance(value, float) and not value.is_integer():
            raise ValueError("expected an integer")
        return _SCALARS[kind](value)
    conv = {"floats": float, "ints": int, "strs": str}[kind]
    return tuple(conv(v) for v in value)
