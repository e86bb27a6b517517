import numpy as np
import pytest

from backstepping.coords import CanonicalGrid, build_atlas, build_grids
from backstepping.exceptions import OutOfRange, OutsideDomain

PAIRS = [(0, 0), (0, 1), (1, 0), (1, 1)]


@pytest.fixture(scope="module")
def atlas(coupled_normalized):
    return build_atlas(coupled_normalized.plant, 51)


def random_triangle_points(rng, size=1000):
    a = rng.uniform(0.0, 1.0, size)
    b = rng.uniform(0.0, 1.0, size)
    return np.maximum(a, b), np.minimum(a, b)


@pytest.mark.parametrize("pair", PAIRS)
def test_round_trip_through_canonical_coordinates(atlas, pair):
    i, j = pair
    z, zeta = random_triangle_points(np.random.default_rng(0))
    xi, eta = atlas.to_canonical(i, j, z, zeta)
    assert np.all(atlas.contains(i, j, xi, eta, eps=1e-7))
    z_back, zeta_back = atlas.from_canonical(i, j, xi, eta, check=False)
    assert np.max(np.abs(z_back - z)) < 1e-9
    assert np.max(np.abs(zeta_back - zeta)) < 1e-9


def test_slower_state_has_the_smaller_stretch(atlas):
    assert atlas.phi1[0] > atlas.phi1[1]
    assert atlas.s[0, 1] == -1 and atlas.s[1, 0] == 1
    assert atlas.s[0, 0] == 1 and atlas.s[1, 1] == 1


@pytest.mark.parametrize("pair", [(0, 1), (1, 0)])
def test_lower_boundary_slopes_lie_between_minus_one_and_zero(atlas, pair):
    i, j = pair
    xi = np.linspace(0.0, atlas.span(i, j), 401)
    eta, slope = atlas.eta_lower(i, j, xi)
    assert np.all((slope > -1.0) & (slope < 0.0))
    assert eta[0] == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.diff(eta) <= 1e-12)


def test_lower_boundary_of_diagonal_elements_is_the_xi_axis(atlas):
    xi = np.linspace(0.0, atlas.span(1, 1), 50)
    eta, slope = atlas.eta_lower(1, 1, xi)
    assert np.array_equal(eta, np.zeros_like(xi))
    assert np.array_equal(slope, np.zeros_like(xi))


def test_left_boundary_inverts_the_lower_boundary(atlas):
    xi = np.linspace(0.05, 0.9 * atlas.span(0, 1), 25)
    eta, _ = atlas.eta_lower(0, 1, xi)
    assert np.allclose(atlas.xi_left(0, 1, eta), xi, atol=1e-8)
    assert atlas.xi_left(0, 1, 0.3) == pytest.approx(0.3)


def test_out_of_range_queries(atlas):
    with pytest.raises(OutOfRange):
        atlas.to_canonical(0, 1, 0.2, 0.5)
    with pytest.raises(OutOfRange):
        atlas.eta_lower(0, 1, atlas.span(0, 1) + 0.1)
    a, b = atlas.bounds(0, 1)
    with pytest.raises(OutOfRange):
        atlas.xi_left(0, 1, b - 0.1)
    with pytest.raises(OutOfRange):
        atlas.xi_left(1, 1, -0.1)
    c = atlas.span(0, 1)
    with pytest.raises(OutsideDomain):
        atlas.from_canonical(0, 1, 0.5 * c, c)


def test_growth_constant_is_below_one(atlas):
    assert 0.5 < atlas.gamma < 1.0


def test_cross_canonical_goes_through_the_original_point(atlas):
    xi, eta = atlas.to_canonical(0, 1, 0.8, 0.3)
    xk, ek = atlas.cross_canonical(0, 1, 1, 0, xi, eta)
    expected = atlas.to_canonical(1, 0, 0.8, 0.3)
    assert float(xk) == pytest.approx(float(expected[0]), abs=1e-9)
    assert float(ek) == pytest.approx(float(expected[1]), abs=1e-9)


def test_canonical_grids_put_the_xi_axis_on_a_node_row(atlas):
    grids = build_grids(atlas, 21)
    assert set(grids) == set(PAIRS)
    for (i, j), g in grids.items():
        assert isinstance(g, CanonicalGrid)
        assert g.eta[g.k0] == 0.0
        assert g.h == pytest.approx(atlas.span(i, j) / 20)
        assert g.inside[0, g.k0]
        assert np.all(np.isfinite(g.Z[g.inside]))
        nodes = g.gamma_nodes()
        assert np.allclose(g.xi[nodes[:, 0]], g.eta[nodes[:, 1]])


def test_stencil_reads_the_nearest_node_past_the_ghost_layers(atlas):
    found = 0
    for i, j in [(0, 1), (1, 0)]:
        g = CanonicalGrid(atlas, i, j, 101)
        m, k = np.nonzero(~g.lo_reached & (g.level < 0))
        if m.size == 0:
            continue
        S = g.stencil(g.xi[m], g.eta[k], 1.0, np.arange(m.size), m.size)
        assert np.allclose(np.asarray(S.sum(axis=1)).ravel(), 1.0, atol=1e-9)
        found += m.size
    assert found > 0


def test_filled_sheets_are_defined_everywhere(atlas):
    g = CanonicalGrid(atlas, 0, 1, 21)
    up, lo = g.sheets(np.ones(g.shape), fill=True)
    assert np.all(np.isfinite(up)) and np.all(np.isfinite(lo))
    assert np.allclose(up, 1.0) and np.allclose(lo, 1.0)
    up_raw, lo_raw = g.sheets(np.ones(g.shape))
    assert np.all(np.isnan(lo_raw[~g.lo_reached]))
