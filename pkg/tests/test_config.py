import math
import pickle

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from npns_lab.config import (
    ConfigError,
    build_boundary,
    build_grid_from,
    build_variant,
    compile_expression,
    evaluate_field,
    parse_config,
    print_config,
)
from npns_lab.pb import PBKind

EN_MINIMAL = """
[domain]
dim = 1
extents = [1.0]
cells = [64]

[bc]
family = "EN"
"""


def test_minimal_en_config():
    cfg = parse_config(EN_MINIMAL)
    assert cfg.bc.family == "EN" and cfg.domain.cells == (64,)
    assert build_boundary(cfg, build_grid_from(cfg)).family.value == "EN"


def test_us_constancy_violation_rejected():
    text = EN_MINIMAL.replace('family = "EN"', 'family = "US"\nw = { left = 0.0, right = 1e-3 }\ngamma1 = 1.0\ns1 = ["left", "right"]')
    with pytest.raises(ConfigError, match="constant in space and time"):
        parse_config(text)


@pytest.mark.parametrize(
    "text, path",
    [
        (EN_MINIMAL + "[params]\nepsilon = -0.1\n", "params.epsilon"),
        (EN_MINIMAL + "[params]\nepsilon = 0\n", "params.epsilon"),
        (EN_MINIMAL + "[params]\nepsilno = 0.1\n", "params.epsilno"),
        (EN_MINIMAL + "[parms]\nepsilon = 0.1\n", "parms"),
        (EN_MINIMAL.replace("cells = [64]", "cells = [64, 64]"), "domain"),
        (EN_MINIMAL.replace("cells = [64]", 'cells = ["64"]'), "domain.cells"),
        (EN_MINIMAL.replace('"EN"', '"XX"'), "bc.family"),
        (EN_MINIMAL + '[init]\nc1 = "1 + __import__(1)"\n', "init.c1"),
        (EN_MINIMAL + '[init]\nc1 = "1 + z"\n', "init.c1"),
        (EN_MINIMAL + '[experiment]\nkind = "sweep"\neps_list = [0.1, 0.2]\n', "experiment.eps_list"),
        (EN_MINIMAL + '[experiment]\nkind = "bake"\n', "experiment.kind"),
        (EN_MINIMAL + "[time]\ndt_max = -1.0\n", "time.dt_max"),
        (EN_MINIMAL.replace('family = "EN"', 'family = "DI"\ngamma1 = 1.0\ngamma2 = { top = 1.0 }'), "bc.gamma2"),
    ],
)
def test_errors_carry_key_path(text, path):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.path.startswith(path)


def test_malformed_toml_is_config_error():
    with pytest.raises(ConfigError):
        parse_config("[domain\ndim = 1")


@pytest.mark.parametrize(
    "text",
    ["x.__class__", "__import__('os')", "[x]", "x if x else 1", "lambda: 1", "sin(x, x)", "sin", "open(x)", "'a'", "True + x", "x[0]"],
)
def test_expression_grammar_rejects(text):
    with pytest.raises(ValueError):
        compile_expression(text)


def test_expression_values_and_pickle():
    f = compile_expression("1 + 0.5*sin(pi*x)*cos(y) - exp(-x**2)/e")
    x, y = np.array([0.2, 0.7]), np.array([0.1, 0.3])
    expected = 1 + 0.5 * np.sin(np.pi * x) * np.cos(y) - np.exp(-(x**2)) / math.e
    assert np.allclose(f(x, y), expected, rtol=1e-15)
    g = pickle.loads(pickle.dumps(f))
    assert np.array_equal(g(x, y), f(x, y))
    assert compile_expression("2")(x).shape == x.shape


def test_evaluate_field_on_grid():
    cfg = parse_config(EN_MINIMAL + '[init]\nc1 = "1 + x"\nc2 = 0.5\n')
    g = build_grid_from(cfg)
    assert np.allclose(evaluate_field(g, cfg.init.c1), 1 + g.centers(0))
    assert np.all(evaluate_field(g, cfg.init.c2) == 0.5)


def test_variant_selection():
    base = EN_MINIMAL.replace('family = "EN"', "{bc}")
    us2 = parse_config(base.format(bc='family = "US"\nw = 1.0\ngamma1 = 0.36787944117144233\ngamma2 = 2.718281828459045\ns1 = ["left", "right"]\ns2 = ["left", "right"]'))
    v = build_variant(us2, build_grid_from(us2))
    assert v.kind is PBKind.US2 and v.z1 == pytest.approx(1.0) and v.z2 == pytest.approx(1.0)
    cat = parse_config(base.format(bc='family = "US"\nw = 0.5\ngamma1 = 1.0\ns1 = ["left", "right"]') + "[init]\nc2 = 2.0\n")
    v = build_variant(cat, build_grid_from(cat))
    assert v.kind is PBKind.US_CATION and v.i2 == pytest.approx(2.0) and v.z1 == pytest.approx(math.exp(-0.5))
    an = parse_config(base.format(bc='family = "US"\nw = 0.5\ngamma2 = 1.0\ns2 = ["left"]'))
    assert build_variant(an, build_grid_from(an)).kind is PBKind.US_ANION
    bl = parse_config(base.format(bc='family = "BL"') + "[experiment]\ni0 = 3.0\n")
    assert build_variant(bl, build_grid_from(bl)).i0 == 3.0


numbers = st.floats(0.01, 100, allow_nan=False).map(lambda v: float(f"{v:.6g}"))
EXPRESSIONS_1D = ["1 + 0.1*sin(pi*x)", "exp(-x)", "2"]


@st.composite
def configs(draw):
    dim = draw(st.sampled_from([1, 2]))
    cells = ",".join([str(draw(st.sampled_from([16, 32, 64])))] * dim)
    extents = ",".join(["1.0"] * dim)
    family = draw(st.sampled_from(["BL", "EN", "DI"]))
    lines = [f"[domain]\ndim = {dim}\nextents = [{extents}]\ncells = [{cells}]"]
    lines.append(f"[params]\nepsilon = {draw(numbers)!r}\nd1 = {draw(numbers)!r}\nd2 = {draw(numbers)!r}")
    bc = f'[bc]\nfamily = "{family}"\nw = {draw(numbers)!r}'
    if family == "DI":
        bc += f"\ngamma1 = {draw(numbers)!r}\ngamma2 = {draw(numbers)!r}"
    lines.append(bc)
    lines.append(f'[init]\nc1 = "{draw(st.sampled_from(EXPRESSIONS_1D + (["cos(x)*cos(y)"] if dim == 2 else [])))}"\nc2 = {draw(numbers)!r}')
    lines.append(f"[time]\ndt_max = {draw(numbers)!r}\nt_end = 2.0\noutput_every = 0.5")
    kind = draw(st.sampled_from(["simulate", "sweep", "decay-study", "pb-solve"]))
    exp = f'[experiment]\nkind = "{kind}"\nmargin = 0.25'
    if kind == "sweep":
        exp += "\neps_list = [0.1, 0.01, 0.001]"
    if kind == "decay-study":
        exp += "\nfit_window = [0.5, 1.5]"
    lines.append(exp)
    return "\n\n".join(lines) + "\n"


@given(configs())
def test_round_trip(text):
    cfg = parse_config(text)
    assert parse_config(print_config(cfg)) == cfg


@pytest.mark.parametrize("name", ["en_decay", "us2_trivial", "sweep_us2", "sweep_bl", "bl_relax", "di_bounds", "flow_2d"])
def test_shipped_configs_parse(name):
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "configs" / f"{name}.toml"
    cfg = parse_config(path.read_text(encoding="utf-8"))
    assert parse_config(print_config(cfg)) == cfg
