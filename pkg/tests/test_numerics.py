import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from backstepping.exceptions import (
    GridMismatch,
    NonPositiveNorm,
    NotMonotone,
    OutOfRange,
    OutsideDomain,
)
from backstepping.numerics import (
    GridFn1D,
    PiecewiseGridFn2D,
    bilinear,
    factorial_log,
    fit_decay_rate,
    ghost_fill,
    interp1,
    interp2,
    invert_monotone,
    trapz,
)

NODES = np.linspace(0.0, 1.0, 201)


def test_node_abscissae_return_stored_samples():
    values = np.sin(3 * NODES)
    f = GridFn1D(NODES, values)
    assert np.array_equal(f(NODES), values)
    assert f(NODES[17]) == values[17]


def test_interp1_is_accurate_between_nodes():
    f = GridFn1D(NODES, np.exp(NODES))
    x = np.linspace(0.0, 1.0, 333)
    assert np.max(np.abs(f(x) - np.exp(x))) < 1e-6


def test_interp1_clamps_within_tolerance_and_rejects_outside():
    f = GridFn1D(NODES, NODES ** 2)
    assert interp1(f, 1.0 + 1e-14) == 1.0
    with pytest.raises(OutOfRange):
        interp1(f, 1.01)
    with pytest.raises(OutOfRange):
        f(np.array([0.5, -0.1]))


def test_grid_function_rejects_bad_tables():
    with pytest.raises(NotMonotone):
        GridFn1D(np.array([0.0, 0.5, 0.5, 1.0]), np.zeros(4))
    with pytest.raises(GridMismatch):
        GridFn1D(np.array([0.0, 1.0]), np.zeros(3))


def test_pchip_keeps_monotone_data_monotone():
    step = np.where(NODES < 0.5, 0.0, 1.0)
    f = GridFn1D(NODES, step)
    x = np.linspace(0.0, 1.0, 5001)
    assert np.all(np.diff(f(x)) >= -1e-15)
    assert f(x).min() >= 0.0 and f(x).max() <= 1.0


def test_trapz_of_tabulated_and_callable_functions():
    fine = np.linspace(0.0, 1.0, 2001)
    f = GridFn1D(fine, fine ** 2)
    assert trapz(f, 0.0, 1.0) == pytest.approx(1 / 3, abs=1e-6)
    assert trapz(np.cos, 0.0, math.pi / 2, n_sub=2000) == pytest.approx(1.0, abs=1e-6)
    assert trapz(f, 0.3, 0.3) == 0.0
    with pytest.raises(OutOfRange):
        trapz(f, 0.7, 0.2)


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=0.0, max_value=math.e - 1.0))
def test_invert_monotone_inverts_the_interpolant(y):
    f = GridFn1D(NODES, np.exp(NODES) - 1.0)
    x = invert_monotone(f, y)
    assert 0.0 <= x <= 1.0
    assert abs(interp1(f, x) - y) < 1e-10


def test_invert_monotone_rejects_decreasing_and_out_of_range():
    with pytest.raises(NotMonotone):
        invert_monotone(GridFn1D(NODES, -NODES), -0.5)
    with pytest.raises(OutOfRange):
        invert_monotone(GridFn1D(NODES, NODES), 2.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(min_value=0.1, max_value=10.0), st.floats(min_value=0.1, max_value=5.0))
def test_fit_decay_rate_recovers_exponentials(rate, amplitude):
    t = np.linspace(0.0, 3.0, 301)
    assert fit_decay_rate(t, amplitude * np.exp(-rate * t)) == pytest.approx(rate, rel=1e-8)


def test_fit_decay_rate_errors():
    t = np.linspace(0.0, 1.0, 50)
    with pytest.raises(NonPositiveNorm):
        fit_decay_rate(t, np.where(t > 0.5, 0.0, 1.0))
    with pytest.raises(GridMismatch):
        fit_decay_rate(t, np.ones(49))
    with pytest.raises(GridMismatch):
        fit_decay_rate(t[:8], np.ones(8))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(min_value=-5, max_value=5), min_size=4, max_size=4))
def test_bilinear_reproduces_bilinear_functions(c):
    a1 = np.linspace(0.0, 2.0, 11)
    a2 = np.linspace(-1.0, 1.0, 9)
    A, B = np.meshgrid(a1, a2, indexing="ij")
    fn = lambda a, b: c[0] + c[1] * a + c[2] * b + c[3] * a * b  # noqa: E731
    rng = np.random.default_rng(1)
    qa = rng.uniform(0.0, 2.0, 100)
    qb = rng.uniform(-1.0, 1.0, 100)
    assert np.allclose(bilinear(a1, a2, fn(A, B), qa, qb), fn(qa, qb), atol=1e-10)
    assert np.isnan(bilinear(a1, a2, fn(A, B), np.array([2.5]), np.array([0.0]))[0])


def test_interp2_selects_the_sheet_by_the_separation_level():
    axis = np.linspace(0.0, 1.0, 11)
    mask = np.ones((11, 11), dtype=bool)
    f = PiecewiseGridFn2D(axis, axis, np.ones((11, 11)), -np.ones((11, 11)), mask,
                          separation=lambda a, b: a - b)
    assert interp2(f, (0.8, 0.2)) == 1.0
    assert interp2(f, (0.2, 0.8)) == -1.0
    assert interp2(f, (0.2, 0.8), side_hint="above") == 1.0
    assert np.array_equal(f.node_values()[3, :4], np.ones(4))


def test_interp2_reports_missing_samples():
    axis = np.linspace(0.0, 1.0, 5)
    above = np.ones((5, 5))
    above[4, 4] = np.nan
    f = PiecewiseGridFn2D(axis, axis, above, above.copy(), np.ones((5, 5), dtype=bool))
    with pytest.raises(OutsideDomain):
        interp2(f, (0.9, 0.9))
    with pytest.raises(ValueError):
        interp2(f, (0.1, 0.1), side_hint="left")


@settings(max_examples=20, deadline=None)
@given(st.floats(min_value=-3, max_value=3), st.floats(min_value=-3, max_value=3),
       st.floats(min_value=-3, max_value=3))
def test_ghost_layers_extrapolate_linear_data_exactly(c0, c1, c2):
    n = 12
    a, b = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    known = b <= a
    values = c0 + c1 * a + c2 * b
    filled = ghost_fill(np.where(known, values, np.nan), known, layers=3)
    reached = np.isfinite(filled)
    assert np.all(reached[b <= a + 3])
    assert np.allclose(filled[reached], values[reached], atol=1e-9)


def test_factorial_log():
    assert factorial_log(0) == 0.0
    assert factorial_log(5) == pytest.approx(math.log(120))
