"""Flat ``key = value`` run configuration with optional bracketed sections.

Sections are ``[problem]``, ``[penalty]``, ``[air]``, ``[solver]`` and
``[sweep]``.  Every key name is unique across sections, so keys may also
appear before any section header.  Unknown keys are errors.

Example::

    [penalty]
    penalty = lpn
    p = 0.1

    [air]
    eps0 = 1
    eps_decay = 0.7
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields

from airopt.air import AirConfig
from airopt.harness import Algorithm, SweepConfig
from airopt.penalties import Mode, Penalty, PenaltyKind
from airopt.solvers import SolverOptions

SECTIONS = ("problem", "penalty", "air", "solver", "sweep")
CONSTRAINTS = ("equality", "free", "nonnegative", "box", "ball")
LOSSES = ("auto", "zero", "least_squares")
_ROOT = "__root__"


class ConfigError(ValueError):
    """A configuration key is unknown, malformed, or violates an invariant."""


@dataclass(frozen=True)
class ProblemSettings:
    """How the data files passed on the command line become a problem.

    With ``constraint = equality`` the matrix and right-hand side define
    ``{x : A x = b}``; otherwise they define a least-squares loss
    ``0.5 ||A x - b||^2`` over the chosen set.
    """

    mode: Mode = Mode.ABS
    constraint: str = "equality"
    loss: str = "auto"
    group_size: int = 1
    groups_file: str | None = None
    box_lo: float = 0.0
    box_hi: float = 1.0
    ball_radius: float = 1.0
    f_lower: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        if self.constraint not in CONSTRAINTS:
            raise ConfigError(f"constraint: expected one of {', '.join(CONSTRAINTS)}, "
                              f"got {self.constraint!r}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss: expected one of {', '.join(LOSSES)}, got {self.loss!r}")
        if self.group_size < 1:
            raise ConfigError("group_size: must be a positive integer")
        if self.box_lo > self.box_hi:
            raise ConfigError("box_lo: must not exceed box_hi")
        if not self.ball_radius > 0:
            raise ConfigError("ball_radius: must be positive")

    @property
    def resolved_loss(self):
        if self.loss != "auto":
            return self.loss
        return "zero" if self.constraint == "equality" else "least_squares"


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemSettings = field(default_factory=ProblemSettings)
    penalty: Penalty = field(default_factory=lambda: Penalty.lpn(0.1))
    air: AirConfig = field(default_factory=AirConfig)
    sweep: SweepConfig | None = None

    @property
    def solver(self) -> SolverOptions:
        return self.air.solver_opts


# --------------------------------------------------------------------------
# value parsers


def _float(text):
    v = float(text)
    if math.isnan(v):
        raise ValueError("nan is not allowed")
    return v


def _int(text):
    f = float(text)
    if f != int(f):
        raise ValueError("expected an integer")
    return int(f)


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true or false")


def _opt_float(text):
    return None if text.strip().lower() in ("", "none") else _float(text)


def _opt_int(text):
    return None if text.strip().lower() in ("", "auto", "none") else _int(text)


def _opt_str(text):
    return None if text.strip() == "" else text.strip()


def _int_list(text):
    return tuple(_int(tok) for tok in text.replace(",", " ").split())


def _alg_list(text):
    return tuple(Algorithm.parse(tok) for tok in text.replace(",", " ").split())


def _str(text):
    return text.strip().lower()


# key -> (section, parser)
KEYS = {
    "mode": ("problem", _str),
    "constraint": ("problem", _str),
    "loss": ("problem", _str),
    "group_size": ("problem", _int),
    "groups_file": ("problem", _opt_str),
    "box_lo": ("problem", _float),
    "box_hi": ("problem", _float),
    "ball_radius": ("problem", _float),
    "f_lower": ("problem", _opt_float),
    "penalty": ("penalty", _str),
    "p": ("penalty", _float),
    "lambda": ("penalty", _float),
    "a": ("penalty", _float),
    "eps0": ("air", _float),
    "eps_decay": ("air", _float),
    "eps_floor": ("air", _float),
    "outer_tol": ("air", _float),
    "max_outer_iter": ("air", _int),
    "weight_floor": ("air", _float),
    "assert_descent": ("air", _bool),
    "strict_guard": ("air", _bool),
    "max_inner_iter": ("solver", _int),
    "primal_tol": ("solver", _float),
    "dual_tol": ("solver", _float),
    "admm_rho": ("solver", _float),
    "step_rule": ("solver", _str),
    "shrink": ("solver", _float),
    "seed": ("sweep", _int),
    "n": ("sweep", _int),
    "m": ("sweep", _int),
    "s_values": ("sweep", _int_list),
    "trials": ("sweep", _int),
    "success_tol": ("sweep", _float),
    "algorithms": ("sweep", _alg_list),
    "workers": ("sweep", _opt_int),
    "record_wall_time": ("sweep", _bool),
}

_SWEEP_FIELDS = {"seed", "n", "m", "s_values", "trials", "success_tol", "algorithms", "workers",
                 "record_wall_time"}


def _read_document(text):
    parser = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",), interpolation=None,
                                       strict=True, default_section="__defaults__")
    parser.optionxform = str.lower
    try:
        parser.read_string(f"[{_ROOT}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc.message}") from None
    values = {}
    for section in parser.sections():
        if section != _ROOT and section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]; expected one of "
                              + ", ".join(f"[{s}]" for s in SECTIONS))
        for key, raw in parser.items(section):
            if key not in KEYS:
                raise ConfigError(f"unknown key {key!r}" +
                                  (f" in section [{section}]" if section != _ROOT else ""))
            home = KEYS[key][0]
            if section != _ROOT and section != home:
                raise ConfigError(f"key {key!r} belongs in [{home}], not [{section}]")
            if key in values:
                raise ConfigError(f"key {key!r} is given more than once")
            try:
                values[key] = KEYS[key][1](raw)
            except ValueError as exc:
                raise ConfigError(f"{key}: cannot parse {raw!r} ({exc})") from None
    return values


def _build_penalty(values):
    kind = values.get("penalty", "lpn")
    try:
        kind = PenaltyKind(kind)
    except ValueError:
        raise ConfigError(f"penalty: expected one of "
                          f"{', '.join(k.value for k in PenaltyKind)}, got {kind!r}") from None
    uses_p = kind not in (PenaltyKind.SCAD, PenaltyKind.MCP)
    stray = [k for k in (("lambda", "a") if uses_p else ("p",)) if k in values]
    if stray:
        raise ConfigError(f"{stray[0]}: not a parameter of penalty {kind.value}")
    try:
        if uses_p:
            return Penalty(kind, p=values.get("p", 0.1))
        if "lambda" not in values:
            raise ConfigError(f"lambda: required for penalty {kind.value}")
        if kind is PenaltyKind.SCAD:
            return Penalty.scad(values["lambda"], values.get("a", 3.7))
        if "a" not in values:
            raise ConfigError("a: required for penalty mcp")
        return Penalty.mcp(values["lambda"], values["a"])
    except ConfigError:
        raise
    except ValueError as exc:
        name = "p" if uses_p else ("a" if " a must" in str(exc) else "lambda")
        raise ConfigError(f"{name}: {exc}") from None


def _construct(cls, kwargs):
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except ValueError as exc:
        msg = str(exc)
        key = next((k for k in kwargs if msg.startswith(k)), None)
        if key is None:
            key = next((k for k in kwargs if k in msg), cls.__name__)
        raise ConfigError(f"{key}: {msg}") from None


def parse_config(text: str) -> RunConfig:
    """Parse and validate a configuration document; absent keys take defaults."""
    values = _read_document(text)
    pick = lambda section: {k: v for k, v in values.items() if KEYS[k][0] == section}
    prob_kw = pick("problem")
    if "mode" in prob_kw:
        try:
            prob_kw["mode"] = Mode.parse(prob_kw["mode"])
        except ValueError as exc:
            raise ConfigError(f"mode: {exc}") from None
    problem = _construct(ProblemSettings, prob_kw)
    penalty = _build_penalty(pick("penalty"))
    solver = _construct(SolverOptions, pick("solver"))
    air = _construct(AirConfig, {**pick("air"), "solver_opts": solver})
    sweep_kw = pick("sweep")
    sweep = None
    if sweep_kw:
        if "seed" not in sweep_kw:
            raise ConfigError("seed: the [sweep] section requires an explicit seed")
        sweep = _construct(SweepConfig, {**sweep_kw, "penalty": penalty, "air": air,
                                         "group_size": problem.group_size})
    return RunConfig(problem, penalty, air, sweep)


def load_config(path) -> RunConfig:
    with open(path, "r") as fh:
        return parse_config(fh.read())


def apply_overrides(text: str, overrides) -> str:
    """Append ``key=value`` overrides, replacing any earlier setting of the same key."""
    if not overrides:
        return text
    values = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, val = item.split("=", 1)
        key = key.strip().lower()
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r} in override")
        values[key] = val.strip()
    kept = []
    section = _ROOT
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
        elif "=" in stripped and not stripped.startswith(("#", ";")):
            if stripped.split("=", 1)[0].strip().lower() in values:
                continue
        kept.append(line)
    by_section = {}
    for key, val in values.items():
        by_section.setdefault(KEYS[key][0], []).append(f"{key} = {val}")
    merged = _merge_sections(kept, by_section)
    return "\n".join(merged) + "\n"


def _merge_sections(lines, additions):
    out = list(lines)
    for section, entries in additions.items():
        idx = None
        for i, line in enumerate(out):
            if line.strip() == f"[{section}]":
                idx = i
        if idx is None:
            out.extend(["", f"[{section}]", *entries])
        else:
            out[idx + 1:idx + 1] = entries
    return out


# --------------------------------------------------------------------------


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Mode):
        return value.value
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(v.value if isinstance(v, Algorithm) else str(v) for v in value)
    return str(value)


def render_config(config: RunConfig) -> str:
    """Render every setting, defaults included, so that parsing reproduces ``config``."""
    lines = ["[problem]"]
    for f in fields(ProblemSettings):
        lines.append(f"{f.name} = {_fmt(getattr(config.problem, f.name))}")
    pen = config.penalty
    lines += ["", "[penalty]", f"penalty = {pen.kind.value}"]
    if pen.p is not None:
        lines.append(f"p = {pen.p!r}")
    else:
        lines += [f"lambda = {pen.lam!r}", f"a = {pen.a!r}"]
    lines += ["", "[air]"]
    for f in fields(AirConfig):
        if f.name in KEYS:
            lines.append(f"{f.name} = {_fmt(getattr(config.air, f.name))}")
    lines += ["", "[solver]"]
    for f in fields(SolverOptions):
        lines.append(f"{f.name} = {_fmt(getattr(config.solver, f.name))}")
    if config.sweep is not None:
        lines += ["", "[sweep]"]
        for f in fields(SweepConfig):
            if f.name in _SWEEP_FIELDS:
                value = getattr(config.sweep, f.name)
                lines.append(f"{f.name} = {'auto' if f.name == 'workers' and value is None else _fmt(value)}")
    return "\n".join(lines) + "\n"
