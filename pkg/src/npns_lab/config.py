"""Experiment configuration: a TOML document with fixed sections.

Every key is known in advance; anything else is rejected with its key path.
Spatial data (W, gamma_i, initial concentrations, a streamfunction for u0)
may be numbers or expressions in ``x`` (and ``y`` in 2D) built from
``+ - * / **``, parentheses, ``pi``, ``e`` and the functions in ``FUNCTIONS``.
"""

from __future__ import annotations

import ast
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Mapping

import numpy as np
import tomli
import tomli_w

FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt, "log": np.log, "tanh": np.tanh}
CONSTANTS = {"pi": math.pi, "e": math.e}
EXPERIMENT_KINDS = ("pb-solve", "simulate", "sweep", "decay-study")
FAMILIES = ("BL", "DI", "US", "EN")
FLUID_MODES = ("off", "stokes", "navier-stokes")
VARIANTS = ("US2", "BL", "US_CATION", "US_ANION")


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted key that failed."""

    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


# ---------------------------------------------------------------------------
# expressions

_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide, ast.Pow: np.power}


def _validate(tree: ast.AST, text: str, variables: tuple[str, ...]):
    for node in ast.walk(tree):
        if isinstance(node, (ast.Expression, ast.Load)) or type(node) in _BINOPS or isinstance(node, (ast.UAdd, ast.USub)):
            continue
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            continue
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
            continue
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            continue
        if isinstance(node, ast.Name):
            if node.id in variables or node.id in CONSTANTS or node.id in FUNCTIONS:
                continue
            raise ValueError(f"unknown name {node.id!r} in {text!r}")
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in FUNCTIONS:
            if len(node.args) != 1 or node.keywords:
                raise ValueError(f"{node.func.id} takes exactly one argument")
            continue
        raise ValueError(f"unsupported syntax {type(node).__name__} in {text!r}")
    # a bare function name is only valid as a call target
    for node in ast.walk(tree):
        if isinstance(node, ast.Name) and node.id in FUNCTIONS and node.id not in variables:
            if not any(isinstance(p, ast.Call) and p.func is node for p in ast.walk(tree)):
                raise ValueError(f"{node.id} must be called in {text!r}")


def _evaluate(node: ast.AST, env: dict):
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_evaluate(node.left, env), _evaluate(node.right, env))
    if isinstance(node, ast.UnaryOp):
        v = _evaluate(node.operand, env)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        return env[node.id] if node.id in env else CONSTANTS[node.id]
    return FUNCTIONS[node.func.id](_evaluate(node.args[0], env))


class Expression:
    """Arithmetic expression in the spatial coordinates; callable and picklable."""

    def __init__(self, text: str, variables: tuple[str, ...] = ("x", "y")):
        try:
            tree = ast.parse(text, mode="eval")
        except SyntaxError as exc:
            raise ValueError(f"cannot parse expression {text!r}: {exc.msg}") from None
        _validate(tree, text, tuple(variables))
        self.text = text
        self.variables = tuple(variables)
        self._body = tree.body

    def __call__(self, *coords) -> np.ndarray:
        env = dict(zip(self.variables, coords))
        shape = np.broadcast(*coords).shape if coords else ()
        with np.errstate(all="ignore"):
            out = np.asarray(_evaluate(self._body, env), dtype=float)
        return np.broadcast_to(out, shape).copy()

    def __reduce__(self):
        return (Expression, (self.text, self.variables))

    def __repr__(self):
        return f"Expression({self.text!r})"


def compile_expression(text: str, variables: tuple[str, ...] = ("x", "y")) -> Expression:
    """Compile an arithmetic expression into ``f(*coords)``; unknown syntax raises ValueError."""
    return Expression(text, variables)


def spatial_value(value: Any) -> Any:
    """Number -> float, string -> compiled expression, side table -> dict of those."""
    if isinstance(value, Mapping):
        return {k: spatial_value(v) for k, v in value.items()}
    if isinstance(value, str):
        return compile_expression(value)
    return float(value)


# ---------------------------------------------------------------------------
# sections


@dataclass(frozen=True)
class DomainConfig:
    dim: int = 1
    extents: tuple[float, ...] = (1.0,)
    cells: tuple[int, ...] = (128,)


@dataclass(frozen=True)
class ParamsConfig:
    epsilon: float = 0.1
    d1: float = 1.0
    d2: float = 1.0
    nu: float = 1.0
    kcoup: float = 1.0


@dataclass(frozen=True)
class BCConfig:
    family: str = "BL"
    w: Any = 0.0
    gamma1: Any = None
    gamma2: Any = None
    s1: tuple[str, ...] = ()
    s2: tuple[str, ...] = ()


@dataclass(frozen=True)
class FluidConfig:
    mode: str = "off"


@dataclass(frozen=True)
class TimeConfig:
    dt_max: float = 1e-3
    t_end: float = 1.0
    output_every: float = 0.01


@dataclass(frozen=True)
class InitConfig:
    c1: Any = 1.0
    c2: Any = 1.0
    u: Any = None  # streamfunction expression (2D), or None for u = 0
    equal_mass: bool = False


@dataclass(frozen=True)
class ExperimentSection:
    kind: str = "simulate"
    eps_list: tuple[float, ...] = ()
    margin: float = 0.25
    fit_window: tuple[float, float] | None = None
    tol: float = 1e-10
    refine: bool = True
    variant: str | None = None
    z1: float | None = None
    z2: float | None = None
    i0: float | None = None
    i1: float | None = None
    i2: float | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    domain: DomainConfig = field(default_factory=DomainConfig)
    params: ParamsConfig = field(default_factory=ParamsConfig)
    bc: BCConfig = field(default_factory=BCConfig)
    fluid: FluidConfig = field(default_factory=FluidConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    init: InitConfig = field(default_factory=InitConfig)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)


_SECTION_TYPES = {
    "domain": DomainConfig,
    "params": ParamsConfig,
    "bc": BCConfig,
    "fluid": FluidConfig,
    "time": TimeConfig,
    "init": InitConfig,
    "experiment": ExperimentSection,
}


# ---------------------------------------------------------------------------
# field coercion


def _number(path: str, v: Any, positive: bool = False, nonneg: bool = False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError(path, "must be finite")
    if positive and not v > 0:
        raise ConfigError(path, f"must be positive, got {v!r}")
    if nonneg and v < 0:
        raise ConfigError(path, f"must be nonnegative, got {v!r}")
    return v


def _integer(path: str, v: Any) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(path, f"expected an integer, got {v!r}")
    return v


def _choice(path: str, v: Any, options: tuple[str, ...]) -> str:
    if v not in options:
        raise ConfigError(path, f"expected one of {', '.join(options)}, got {v!r}")
    return v


def _spatial(path: str, v: Any, sides: tuple[str, ...] | None, variables: tuple[str, ...]) -> Any:
    if isinstance(v, Mapping):
        if sides is None:
            raise ConfigError(path, "a per-side table is only allowed for boundary data")
        out = {}
        for k, item in v.items():
            if k not in sides:
                raise ConfigError(f"{path}.{k}", f"unknown side for this domain (sides: {', '.join(sides)})")
            out[k] = _spatial(f"{path}.{k}", item, None, variables)
        return out
    if isinstance(v, str):
        try:
            compile_expression(v, variables)
        except ValueError as exc:
            raise ConfigError(path, str(exc)) from None
        return v
    return _number(path, v)


def _coerce(cfg: ExperimentConfig) -> ExperimentConfig:
    """Validate every field; raises ConfigError at the first problem."""
    d = cfg.domain
    dim = _integer("domain.dim", d.dim)
    if dim not in (1, 2):
        raise ConfigError("domain.dim", "must be 1 or 2")
    if len(d.extents) != dim:
        raise ConfigError("domain.extents", f"expected {dim} value(s)")
    if len(d.cells) != dim:
        raise ConfigError("domain.cells", f"expected {dim} value(s)")
    extents = tuple(_number(f"domain.extents[{i}]", v, positive=True) for i, v in enumerate(d.extents))
    cells = tuple(_integer(f"domain.cells[{i}]", v) for i, v in enumerate(d.cells))
    for i, n in enumerate(cells):
        if n < 8:
            raise ConfigError(f"domain.cells[{i}]", "need at least 8 cells per axis")
    sides = ("left", "right") if dim == 1 else ("left", "right", "bottom", "top")
    variables = ("x",) if dim == 1 else ("x", "y")

    p = cfg.params
    params = ParamsConfig(*(_number(f"params.{f.name}", getattr(p, f.name), positive=True) for f in fields(ParamsConfig)))

    b = cfg.bc
    family = _choice("bc.family", b.family, FAMILIES)
    s1, s2 = tuple(b.s1), tuple(b.s2)
    for name, ss in (("s1", s1), ("s2", s2)):
        for i, s in enumerate(ss):
            if s not in sides:
                raise ConfigError(f"bc.{name}[{i}]", f"unknown side {s!r} for a {dim}D domain")
        if len(set(ss)) != len(ss):
            raise ConfigError(f"bc.{name}", "repeated side")
    if family != "US" and (s1 or s2):
        raise ConfigError("bc.s1" if s1 else "bc.s2", f"selective portions are only used by the US family, not {family}")
    if family == "US" and not (s1 or s2):
        raise ConfigError("bc.s1", "US needs at least one nonempty selective portion")
    gam = {}
    for name, sel in (("gamma1", s1), ("gamma2", s2)):
        v = getattr(b, name)
        need = family == "DI" or (family == "US" and sel)
        if v is None:
            if need:
                raise ConfigError(f"bc.{name}", f"required for family {family}")
            gam[name] = None
            continue
        if not need:
            raise ConfigError(f"bc.{name}", f"not used by family {family}" + (" with an empty portion" if family == "US" else ""))
        gam[name] = _spatial(f"bc.{name}", v, sides, variables)
    bc = BCConfig(family, _spatial("bc.w", b.w, sides, variables), gam["gamma1"], gam["gamma2"], s1, s2)

    fluid = FluidConfig(_choice("fluid.mode", cfg.fluid.mode, FLUID_MODES))

    t = cfg.time
    time = TimeConfig(*(_number(f"time.{f.name}", getattr(t, f.name), positive=True) for f in fields(TimeConfig)))
    if time.output_every > time.t_end:
        raise ConfigError("time.output_every", "exceeds time.t_end")

    ini = cfg.init
    if not isinstance(ini.equal_mass, bool):
        raise ConfigError("init.equal_mass", "expected true or false")
    u = ini.u
    if u is not None:
        if dim != 2:
            raise ConfigError("init.u", "a streamfunction needs a 2D domain")
        u = _spatial("init.u", u, None, variables)
    init = InitConfig(_spatial("init.c1", ini.c1, None, variables), _spatial("init.c2", ini.c2, None, variables), u, ini.equal_mass)

    e = cfg.experiment
    kind = _choice("experiment.kind", e.kind, EXPERIMENT_KINDS)
    eps_list = tuple(_number(f"experiment.eps_list[{i}]", v, positive=True) for i, v in enumerate(e.eps_list))
    if kind == "sweep":
        if not eps_list:
            raise ConfigError("experiment.eps_list", "required for a sweep")
        if any(b2 >= a for a, b2 in zip(eps_list, eps_list[1:])):
            raise ConfigError("experiment.eps_list", "must be strictly decreasing")
    margin = _number("experiment.margin", e.margin, positive=True)
    if not margin < 0.5 * min(extents):
        raise ConfigError("experiment.margin", "must be below half the smallest extent")
    window = None
    if e.fit_window is not None:
        if len(e.fit_window) != 2:
            raise ConfigError("experiment.fit_window", "expected [t0, t1]")
        window = tuple(_number(f"experiment.fit_window[{i}]", v, nonneg=True) for i, v in enumerate(e.fit_window))
        if not window[0] < window[1]:
            raise ConfigError("experiment.fit_window", "t0 must be below t1")
    if not isinstance(e.refine, bool):
        raise ConfigError("experiment.refine", "expected true or false")
    variant = None if e.variant is None else _choice("experiment.variant", e.variant, VARIANTS)
    consts = {n: None if getattr(e, n) is None else _number(f"experiment.{n}", getattr(e, n), positive=True) for n in ("z1", "z2", "i0", "i1", "i2")}
    exp = ExperimentSection(kind, eps_list, margin, window, _number("experiment.tol", e.tol, positive=True), e.refine, variant, **consts)

    out = ExperimentConfig(DomainConfig(dim, extents, cells), params, bc, fluid, time, init, exp)
    if family == "US":
        _check_us(out)
    return out


def _check_us(cfg: ExperimentConfig):
    try:
        build_boundary(cfg, build_grid_from(cfg))
    except ValueError as exc:
        raise ConfigError("bc.gamma1" if "gamma1" in str(exc) or "S1" in str(exc) else "bc.gamma2", str(exc)) from None


# ---------------------------------------------------------------------------
# parse / print


def _from_table(path: str, cls, table: Mapping[str, Any]):
    if not isinstance(table, Mapping):
        raise ConfigError(path, "expected a table")
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for k, v in table.items():
        if k not in known:
            raise ConfigError(f"{path}.{k}", "unknown key")
        kwargs[k] = tuple(v) if isinstance(v, list) else v
    return cls(**kwargs)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a TOML configuration document."""
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError("<document>", str(exc)) from None
    sections = {}
    for k, v in doc.items():
        if k not in _SECTION_TYPES:
            raise ConfigError(k, "unknown section")
        sections[k] = _from_table(k, _SECTION_TYPES[k], v)
    if "domain" not in sections:
        raise ConfigError("domain", "missing section")
    return _coerce(ExperimentConfig(**sections))


def _plain(v: Any) -> Any:
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    return v


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {}
    for name in _SECTION_TYPES:
        sec = asdict(getattr(cfg, name))
        out[name] = {k: _plain(v) for k, v in sec.items() if v is not None}
    return out


def print_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))


# ---------------------------------------------------------------------------
# resolution into solver objects


def build_grid_from(cfg: ExperimentConfig):
    from .grid import build_grid

    return build_grid(cfg.domain.dim, cfg.domain.extents, cfg.domain.cells)


def build_params(cfg: ExperimentConfig):
    from .npns import ModelParams

    p = cfg.params
    return ModelParams(p.epsilon, p.d1, p.d2, p.nu, p.kcoup)


def build_boundary(cfg: ExperimentConfig, grid):
    from .npns import BoundarySpec

    b = cfg.bc
    return BoundarySpec.build(
        grid,
        b.family,
        spatial_value(b.w),
        None if b.gamma1 is None else spatial_value(b.gamma1),
        None if b.gamma2 is None else spatial_value(b.gamma2),
        b.s1,
        b.s2,
    )


def evaluate_field(grid, value: Any) -> np.ndarray:
    v = spatial_value(value)
    if callable(v):
        return v(*grid.mesh())
    return np.full(grid.shape, v)


def build_velocity(cfg: ExperimentConfig, grid):
    """Initial MAC velocity from the streamfunction expression (None when u = 0)."""
    from .npns import streamfunction_velocity

    if cfg.init.u is None:
        return None
    psi = spatial_value(cfg.init.u)
    xn = np.linspace(0.0, grid.extents[0], grid.cells[0] + 1)
    yn = np.linspace(0.0, grid.extents[1], grid.cells[1] + 1)
    X, Y = np.meshgrid(xn, yn, indexing="ij")
    nodes = psi(X, Y) if callable(psi) else np.full(X.shape, psi)
    return streamfunction_velocity(grid, nodes)


def build_variant(cfg: ExperimentConfig, grid, c1: np.ndarray | None = None, c2: np.ndarray | None = None):
    """Equilibrium problem matching the boundary family (or the explicit override)."""
    from .grid import integrate
    from .pb import PBKind, PBVariant

    e = cfg.experiment
    if c1 is None or c2 is None:
        c1, c2 = evaluate_field(grid, cfg.init.c1), evaluate_field(grid, cfg.init.c2)
    if e.variant is not None:
        kind = PBKind(e.variant)
        z1, z2 = e.z1, e.z2
    else:
        family = cfg.bc.family
        if family == "BL":
            kind = PBKind.BL
        elif family == "US":
            s1, s2 = cfg.bc.s1, cfg.bc.s2
            kind = PBKind.US2 if (s1 and s2) else (PBKind.US_CATION if s1 else PBKind.US_ANION)
        else:
            raise ConfigError("experiment.variant", f"family {family} has no equilibrium problem; set a variant")
        z1, z2 = e.z1, e.z2
        if family == "US":
            zz1, zz2 = build_boundary(cfg, grid).us_constants()
            z1 = zz1 if z1 is None else z1
            z2 = zz2 if z2 is None else z2
    m1, m2 = integrate(grid, c1), integrate(grid, c2)
    try:
        if kind is PBKind.US2:
            return PBVariant.us2(_need("z1", z1), _need("z2", z2))
        if kind is PBKind.BL:
            return PBVariant.bl(e.i0 if e.i0 is not None else m1)
        if kind is PBKind.US_CATION:
            return PBVariant.us_cation(_need("z1", z1), e.i2 if e.i2 is not None else m2)
        return PBVariant.us_anion(_need("z2", z2), e.i1 if e.i1 is not None else m1)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("experiment", str(exc)) from None


def _need(name: str, v):
    if v is None:
        raise ConfigError(f"experiment.{name}", "required for this equilibrium variant")
    return v
