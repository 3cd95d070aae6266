import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from blebbing import fields as fd
from blebbing.energies import ModelParams, gl_density
from blebbing.fields import BoundarySpec, Grid, ScalarField, VectorField

Z = 2 * np.sqrt(2) / 3


def periodic_line(n):
    return Grid((1.0,), (n,), "periodic")


def test_grid_spacing_and_validation():
    g = Grid((2.0, 1.0), (8, 4))
    assert g.spacing == (0.25, 0.25)
    assert g.size == 32 and g.dim == 2
    with pytest.raises(ValueError):
        Grid((1.0,), (0,))
    with pytest.raises(ValueError):
        Grid((1.0, 1.0), (4,))
    with pytest.raises(ValueError):
        Grid((1.0,), (4,), "mixed")


def test_fields_reject_non_finite_values():
    g = Grid((1.0,), (4,))
    with pytest.raises(ValueError):
        ScalarField(g, [0, np.nan, 0, 0])
    with pytest.raises(ValueError):
        ScalarField(g, np.zeros(5))
    with pytest.raises(ValueError):
        VectorField(g, np.zeros((2, 4)))


def test_gradient_of_linear_function_interior():
    g = Grid((1.0,), (32,))
    x = g.axis_centers(0)
    grad = fd.gradient(ScalarField(g, x)).values[0]
    assert np.allclose(grad[1:-1], 1.0, atol=1e-12)


def test_gradient_of_constant_is_zero():
    for bnd in ("physical", "periodic"):
        g = Grid((1.0, 1.0), (8, 8), bnd)
        assert np.all(fd.gradient(ScalarField(g, np.full(g.shape, 3.0))).values == 0)


def _sin_grad_error(n):
    g = periodic_line(n)
    x = g.axis_centers(0)
    d = fd.gradient(ScalarField(g, np.sin(2 * np.pi * x))).values[0]
    return np.max(np.abs(d - 2 * np.pi * np.cos(2 * np.pi * x)))


def test_gradient_order_two_on_sine():
    e1, e2 = _sin_grad_error(256), _sin_grad_error(512)
    order = np.log2(e1 / e2)
    assert 1.9 <= order <= 2.1


def test_divergence_trivial_cases():
    g = Grid((1.0, 1.0), (16, 16))
    assert np.allclose(fd.divergence(VectorField(g, np.ones((2, 16, 16)))).values, 0)
    X, _ = g.mesh()
    v = VectorField(g, np.stack([X, np.zeros_like(X)]))
    assert np.allclose(fd.divergence(v).values[1:-1, :], 1.0)


def _div_error(n):
    g = Grid((1.0, 1.0), (n, n), "periodic")
    X, Y = g.mesh()
    s = 2 * np.pi
    v = VectorField(g, np.stack([s * np.cos(s * X) * np.sin(s * Y), s * np.sin(s * X) * np.cos(s * Y)]))
    exact = -2 * s * s * np.sin(s * X) * np.sin(s * Y)
    return np.max(np.abs(fd.divergence(v).values - exact))


def test_divergence_order_two():
    order = np.log2(_div_error(64) / _div_error(128))
    assert 1.9 <= order <= 2.1


def test_laplacian_of_quadratic_is_dim():
    g = Grid((1.0, 1.0, 1.0), (10, 10, 10))
    x = g.points()
    lap = fd.laplacian(ScalarField(g, 0.5 * np.sum(x * x, -1))).values
    assert np.allclose(lap[1:-1, 1:-1, 1:-1], 3.0, atol=1e-10)
    assert np.allclose(fd.laplacian(ScalarField(g, np.full(g.shape, 2.0))).values, 0)


def _profile_lap_error(n, eps=0.05):
    g = Grid((1.0,), (n,), origin=(-0.5,))
    x = g.axis_centers(0)
    z = x / eps
    phi = np.tanh(z / np.sqrt(2))
    exact = -phi * (1 - phi ** 2) / eps ** 2
    lap = fd.laplacian(ScalarField(g, phi)).values
    return np.max(np.abs(lap - exact)[5:-5])


def test_laplacian_matches_profile_second_derivative():
    e1, e2 = _profile_lap_error(400), _profile_lap_error(800)
    assert 1.9 <= np.log2(e1 / e2) <= 2.1


def test_apply_boundary_ghost_rules():
    g = Grid((1.0,), (4,))
    f = ScalarField(g, [1.0, 2.0, 3.0, 4.0])
    p = fd.apply_boundary(f, "neumann-zero", 1)
    assert p[0] == 1.0 and p[-1] == 4.0
    p = fd.apply_boundary(f, "dirichlet-zero", 1)
    assert p[0] == -1.0 and p[-1] == -4.0
    g2 = Grid((1.0, 1.0), (3, 3))
    J = VectorField(g2, np.ones((2, 3, 3)))
    pj = fd.apply_boundary(J, "flux-zero", 1)
    # normal component: ghost = -interior so the face average vanishes
    assert np.allclose(pj[0][0, 1:-1] + pj[0][1, 1:-1], 0)
    assert np.allclose(pj[1][1:-1, 0] + pj[1][1:-1, 1], 0)
    assert np.allclose(pj[0][1:-1, 0], pj[0][1:-1, 1])
    flux = fd.zero_boundary_flux(np.ones(5), 0)
    assert flux[0] == 0 and flux[-1] == 0 and np.all(flux[1:-1] == 1)


def test_boundary_spec_mismatch():
    g = Grid((1.0,), (4,))
    with pytest.raises(ValueError):
        fd.apply_boundary(ScalarField(g, np.zeros(4)), "periodic")
    spec = BoundarySpec.default(g)
    assert spec.kind("u", g) == "dirichlet-zero"
    with pytest.raises(ValueError):
        spec.kind("unknown", g)


def test_integrate_unit_box_and_odd_function():
    g = Grid((1.0, 1.0), (20, 20), origin=(-0.5, -0.5))
    assert fd.integrate(ScalarField(g, np.ones(g.shape))) == pytest.approx(1.0, abs=1e-14)
    X, Y = g.mesh()
    assert abs(fd.integrate(ScalarField(g, X * np.exp(Y)))) < 1e-15


def test_integrate_planar_gl_density_gives_Z():
    eps = 0.02
    g = Grid((1.0, 1.0), (400, 8), origin=(-0.5, 0.0))
    X, _ = g.mesh()
    phi = ScalarField(g, np.tanh(X / (eps * np.sqrt(2))))
    val = fd.integrate(gl_density(phi, ModelParams(eps=eps)))
    assert val == pytest.approx(Z * 1.0, rel=0.01)


@given(st.integers(0, 2 ** 31 - 1), st.sampled_from([1, 2, 3]))
def test_product_rule_defect_vanishes_on_periodic_grids(seed, dim):
    rng = np.random.default_rng(seed)
    n = {1: 32, 2: 12, 3: 6}[dim]
    g = Grid((1.0,) * dim, (n,) * dim, "periodic")
    f = rng.standard_normal(g.shape)
    v = rng.standard_normal((dim, *g.shape))
    lhs = fd.integrate(ScalarField(g, f * fd.divergence(VectorField(g, v)).values))
    rhs = fd.integrate(ScalarField(g, np.sum(fd.gradient(ScalarField(g, f)).values * v, 0)))
    scale = np.linalg.norm(f) * np.linalg.norm(v) * g.cell_volume / min(g.spacing)
    assert abs(lhs + rhs) <= 1e-12 * scale


@given(st.integers(0, 2 ** 31 - 1), st.floats(-3, 3), st.floats(-3, 3),
       st.sampled_from(["physical", "periodic"]))
def test_operators_are_linear(seed, a, b, bnd):
    rng = np.random.default_rng(seed)
    g = Grid((1.0, 1.0), (10, 10), bnd)
    f, h = rng.standard_normal(g.shape), rng.standard_normal(g.shape)
    for op in (fd.laplacian, lambda s: fd.gradient(s)):
        lhs = op(ScalarField(g, a * f + b * h)).values
        rhs = a * op(ScalarField(g, f)).values + b * op(ScalarField(g, h)).values
        assert np.allclose(lhs, rhs, atol=1e-9 * (1 + abs(a) + abs(b)) * 100)
    v, w = rng.standard_normal((2, 10, 10)), rng.standard_normal((2, 10, 10))
    lhs = fd.divergence(VectorField(g, a * v + b * w)).values
    rhs = a * fd.divergence(VectorField(g, v)).values + b * fd.divergence(VectorField(g, w)).values
    assert np.allclose(lhs, rhs, atol=1e-9 * 100)


def test_weighted_laplacian_is_adjoint_of_face_gradient_energy(rng):
    for bnd in ("physical", "periodic"):
        g = Grid((1.0, 1.0), (12, 9), bnd)
        kind = g.default_kind()
        a, v = rng.standard_normal(g.shape), rng.standard_normal(g.shape)
        t = 1e-6
        E = lambda x: 0.5 * np.sum(fd.face_grad_sq(x, kind, g.spacing))
        dd = (E(a + t * v) - E(a - t * v)) / (2 * t)
        grad = -fd.weighted_laplacian(a, None, kind, g.spacing)
        assert dd == pytest.approx(np.sum(grad * v), rel=1e-7)


def test_band_blocks_cover_the_tube():
    g = Grid((2.0, 2.0), (100, 100), origin=(-1, -1))
    dist = lambda x: np.linalg.norm(x, axis=-1) - 0.5
    covered = np.zeros(g.shape, bool)
    for b in fd.iter_band_blocks(g, dist, 0.1, block=16, halo=2):
        sl = tuple(slice(s, s + n) for s, n in zip(b.start, b.size))
        covered[sl] = True
        assert len(b.axes[0]) == b.size[0] + 4
    assert np.all(covered[np.abs(dist(g.points())) <= 0.1])
    assert not covered.all()


def test_vtk_and_raw_round_trip(tmp_path):
    g = Grid((1.0, 2.0), (3, 4), origin=(0.5, -1.0))
    f = ScalarField(g, np.arange(12.0).reshape(3, 4))
    path = fd.write_raw(tmp_path / "f.raw", f, "phi", time=0.25)
    back, meta = fd.read_raw(path)
    assert np.array_equal(back.values, f.values)
    assert meta["time"] == 0.25 and meta["field"] == "phi"
    assert meta["dims"] == [3, 4] and meta["spacing"] == [1 / 3, 0.5]
    vtk = fd.write_vtk(tmp_path / "f.vtk", f, "phi").read_text()
    assert "STRUCTURED_POINTS" in vtk and "DIMENSIONS 3 4 1" in vtk
    nums = [float(v) for line in vtk.splitlines()[10:] for v in line.split()]
    # x runs fastest in the file
    assert nums[:3] == [0.0, 4.0, 8.0]
