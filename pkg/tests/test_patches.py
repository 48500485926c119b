import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from layerdecay.assembly import lifting_support, nodal_lifting
from layerdecay.errors import InvalidArgumentError, PreconditionError
from layerdecay.mesh import generate_rectangle_mesh, select_cells_in_box
from layerdecay.patches import (CutoffFunction, PatchLadder, boundary_layer, build_cutoff, build_ladder,
                                cutoff_apply, cutoff_gradient_constant, cutoff_layer_ratios,
                                grow_patch, write_ladder_csv)
from layerdecay.space import build_space, interpolation_stability

from conftest import hexagon, sin_pi_y, strip_mesh


def _strip_ladder(nx, ny=1, k=1, g=lambda x, y: 1.0):
    mesh = strip_mesh(nx, ny)
    space = build_space(mesh, k)
    supp = lifting_support(space, nodal_lifting(space, g))
    base = select_cells_in_box(mesh, (2 - 2 / nx, 2, 0, 1))
    return space, build_ladder(mesh, base, supp)


def _shares_element(a, b):
    return np.intersect1d(a, b).size > 0


# ---- growth --------------------------------------------------------------------------

def test_grow_empty_and_full():
    mesh = strip_mesh(6, 3)
    assert grow_patch(mesh, []).size == 0
    full = np.arange(mesh.n_triangles)
    np.testing.assert_array_equal(grow_patch(mesh, full), full)


def test_grow_single_triangle_gives_vertex_star():
    mesh = strip_mesh(6, 4)
    e = 2 * (6 * 2 + 3)   # lower triangle of an interior cell
    star = set()
    for v in mesh.triangles[e]:
        star |= set(np.flatnonzero((mesh.triangles == v).any(axis=1)).tolist())
    assert set(grow_patch(mesh, [e]).tolist()) == star
    # structured diagonal grid: 6 + 6 + 6 triangles around three vertices, shared ones removed
    assert len(star) == 13


def test_growth_terminates_on_connected_mesh():
    mesh = hexagon(20)
    cells = np.array([0])
    for _ in range(mesh.n_triangles):
        nxt = grow_patch(mesh, cells)
        if nxt.size == cells.size:
            break
        assert np.isin(cells, nxt).all()
        cells = nxt
    assert cells.size == mesh.n_triangles


# ---- ladders --------------------------------------------------------------------------

@pytest.mark.parametrize("nx", [3, 4, 6, 9, 20])
def test_strip_ell_max(nx):
    _, ladder = _strip_ladder(nx)
    assert ladder.ell_max == nx - 2


def test_ell_max_zero_when_adjacent():
    _, ladder = _strip_ladder(2)
    assert ladder.ell_max == 0
    assert ladder.depth == 1


@pytest.mark.parametrize("k", [1, 2])
def test_ell_max_matches_direct_predicate(k):
    mesh = hexagon(20)
    space = build_space(mesh, k)
    supp = lifting_support(space, nodal_lifting(space, lambda x, y: 1.0 + x))
    ladder = build_ladder(mesh, select_cells_in_box(mesh, (-0.2, 0.2, -0.2, 0.2)), supp)
    L = ladder.ell_max
    assert L > 0
    for ell in range(L + 1):
        assert not _shares_element(ladder.layers[ell], supp)
    if ladder.depth > L:
        assert _shares_element(ladder.layers[L + 1], supp)


def test_ladder_invariants_on_hexagon():
    mesh = hexagon(20)
    space = build_space(mesh, 1)
    supp = lifting_support(space, nodal_lifting(space, lambda x, y: 1.0))
    ladder = build_ladder(mesh, select_cells_in_box(mesh, (-0.2, 0.2, -0.2, 0.2)), supp)
    for a, b in zip(ladder.layers, ladder.layers[1:]):
        assert np.isin(a, b).all()
    zs = [boundary_layer(ladder, ell) for ell in range(1, ladder.depth + 1)]
    joined = np.concatenate([ladder.base] + zs)
    assert joined.size == np.unique(joined).size
    np.testing.assert_array_equal(np.sort(joined), ladder.layers[-1])


def test_unsuitable_base_rejected():
    mesh = strip_mesh(6, 2)
    space = build_space(mesh, 1)
    supp = lifting_support(space, nodal_lifting(space, lambda x, y: 1.0))
    with pytest.raises(PreconditionError, match="element 0"):
        build_ladder(mesh, [0], supp)
    # a base set overlapping the support but not touching GAMMA itself cannot exist on
    # this mesh, so exercise the support check with a wider artificial support
    with pytest.raises(PreconditionError, match="lifting support"):
        build_ladder(mesh, [5], np.arange(mesh.n_triangles))


def test_saturated_ladder_without_support():
    mesh = strip_mesh(5, 2)
    ladder = build_ladder(mesh, [9], [])
    assert ladder.layers[-1].size == mesh.n_triangles
    assert ladder.ell_max == ladder.depth


def test_boundary_layer_range_and_empty_saturation():
    _, ladder = _strip_ladder(5)
    with pytest.raises(InvalidArgumentError):
        boundary_layer(ladder, 0)
    with pytest.raises(InvalidArgumentError):
        boundary_layer(ladder, ladder.depth + 1)
    mesh = generate_rectangle_mesh(1, 1, 3, 1)
    full = np.arange(mesh.n_triangles)
    sat = build_ladder(mesh, full, [])
    assert sat.depth == 0
    padded = PatchLadder(mesh, full, [full, full], 1, np.array([], dtype=np.int64))
    assert boundary_layer(padded, 1).size == 0


def test_ladder_csv(tmp_path):
    _, ladder = _strip_ladder(6, 2)
    write_ladder_csv(tmp_path / "ladder.csv", ladder)
    rows = (tmp_path / "ladder.csv").read_text().splitlines()
    assert rows[0] == "layer,element"
    assert len(rows) - 1 == ladder.layers[-1].size
    layers = sorted({int(r.split(",")[0]) for r in rows[1:]})
    assert layers == list(range(ladder.depth + 1))


# ---- cutoff ----------------------------------------------------------------------------

@pytest.mark.parametrize("k", [1, 2])
def test_cutoff_properties(k):
    space, ladder = _strip_ladder(10, 5, k, sin_pi_y)
    for ell in range(ladder.depth):
        eta = build_cutoff(space, ladder, ell)
        c = eta.coeffs
        assert set(np.unique(c)) <= {0.0, 1.0}
        assert np.all(c[space.cell_dofs[ladder.layers[ell]]] == 1)
        outside = np.setdiff1d(np.arange(space.mesh.n_triangles), ladder.layers[ell + 1])
        assert np.all(c[space.cell_dofs[outside]] == 0)
        assert eta.separates == (ell, ell + 1)


def test_cutoff_of_full_and_empty_patch():
    mesh = strip_mesh(4, 2)
    space = build_space(mesh, 2)
    full = np.arange(mesh.n_triangles)
    ladder = PatchLadder(mesh, full, [full, full], 1, np.array([], dtype=np.int64))
    assert np.all(build_cutoff(space, ladder, 0).coeffs == 1)
    empty = np.array([], dtype=np.int64)
    ladder = PatchLadder(mesh, empty, [empty, empty], 1, empty)
    assert np.all(build_cutoff(space, ladder, 0).coeffs == 0)


def test_cutoff_index_range_and_immutability():
    space, ladder = _strip_ladder(5)
    with pytest.raises(InvalidArgumentError):
        build_cutoff(space, ladder, ladder.depth)
    eta = build_cutoff(space, ladder, 0)
    with pytest.raises(ValueError):
        eta.coeffs[0] = 0.5


@pytest.mark.parametrize("k", [1, 2])
def test_cutoff_gradient_constant_on_uniform_grid(k):
    space, ladder = _strip_ladder(20, 10, k, sin_pi_y)
    vals = [cutoff_gradient_constant(space, build_cutoff(space, ladder, ell))
            for ell in range(ladder.depth)]
    if k == 1:
        # hat slope across a diagonal cell is sqrt(2) / h
        assert max(vals) == pytest.approx(np.sqrt(2), rel=1e-12)
        assert max(vals) <= 4
    else:
        # the P2 nodal indicator is steeper at its vertices: 3 sqrt(2) / h
        assert max(vals) == pytest.approx(3 * np.sqrt(2), rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), ell=st.integers(0, 6), k=st.sampled_from([1, 2]))
def test_cutoff_exact_inside_and_zero_outside(seed, ell, k):
    space, ladder = _strip_ladder(10, 4, k, sin_pi_y)
    eta = build_cutoff(space, ladder, ell)
    v = np.random.default_rng(seed).standard_normal(space.n_dofs)
    w = cutoff_apply(space, eta, v)
    inner = space.cell_dofs[ladder.layers[ell]]
    assert np.array_equal(w[inner], v[inner])
    outside = np.setdiff1d(np.arange(space.mesh.n_triangles), ladder.layers[ell + 1])
    assert np.all(w[space.cell_dofs[outside]] == 0)
    # support inside P_ell is kept untouched
    u = np.zeros_like(v)
    u[np.unique(inner)] = v[np.unique(inner)]
    assert np.array_equal(cutoff_apply(space, eta, u), u)


def test_cutoff_identity_and_dimension_check():
    space = build_space(strip_mesh(4, 2), 1)
    eta = CutoffFunction(np.ones(space.n_dofs), 0)
    v = np.arange(space.n_dofs, dtype=float)
    assert np.array_equal(cutoff_apply(space, eta, v), v)
    with pytest.raises(InvalidArgumentError):
        cutoff_apply(space, eta, v[:-1])


@pytest.mark.parametrize("k", [1, 2])
def test_layer_bounds_hold_with_measured_constant(k):
    space, ladder = _strip_ladder(12, 6, k, sin_pi_y)
    c_i = max(interpolation_stability(space, n_trials=100, seed=0))
    for ell in (0, ladder.depth // 2, ladder.depth - 1):
        r_l2, r_en, c_eta = cutoff_layer_ratios(space, ladder, ell, n_trials=100)
        assert r_l2 <= c_i + 1e-12
        assert r_en <= c_i + 1e-12
        assert c_eta <= 3 * np.sqrt(2) + 1e-12
