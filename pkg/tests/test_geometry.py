import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar
from scipy.special import ellipe

from blebbing import geometry as G
from blebbing.fields import Grid

SPHERE = G.make_surface("sphere", [0.7], center=(0.1, -0.2, 0.05))
TORUS = G.make_surface("torus", [2.0, 0.5])
ELLIPSOID = G.make_surface("ellipsoid", [1.5, 1.0, 1.0])


def tube_points(S, n, width, seed=0):
    rng = np.random.default_rng(seed)
    q = S.quadrature(16).points
    q = q[rng.choice(len(q), n, replace=False)]
    d = rng.uniform(-width, width, n)
    return q + d[:, None] * S.normal(q)


def test_parse_surface_round_trip():
    S = G.parse_surface("torus:2,0.5@1,0,0")
    assert isinstance(S, G.Torus) and S.center == (1.0, 0.0, 0.0)
    assert G.parse_surface("circle:0.3").dim == 2
    with pytest.raises(ValueError):
        G.parse_surface("sphere")
    with pytest.raises(ValueError):
        G.parse_surface("cube:1")
    with pytest.raises(ValueError):
        G.make_surface("ellipsoid", [1, 2])


def test_sphere_distance_normal_and_curvatures():
    x = np.array([[1.0, 0.3, -0.4], [0.2, 0.1, 0.0]])
    r = np.linalg.norm(x - np.array(SPHERE.center), axis=1)
    assert np.allclose(SPHERE.signed_distance(x), r - 0.7)
    q = SPHERE.project(x)
    assert np.allclose(SPHERE.normal(q), (q - SPHERE.center) / 0.7)
    assert np.allclose(SPHERE.principal_curvatures(q), -1 / 0.7)
    ec = G.extended_curvatures(SPHERE, x)
    # level sets of d are concentric spheres of radius r
    assert np.allclose(ec.H, -2 / r) and np.allclose(ec.K, 1 / r ** 2)


def test_orientation_flip_negates_signed_quantities():
    S2 = SPHERE.with_orientation("inner-positive")
    x = tube_points(SPHERE, 10, 0.2)
    assert np.allclose(S2.signed_distance(x), -SPHERE.signed_distance(x))
    q = SPHERE.project(x)
    assert np.allclose(S2.normal(q), -SPHERE.normal(q))
    assert np.allclose(S2.principal_curvatures(q), -SPHERE.principal_curvatures(q))
    with pytest.raises(ValueError):
        SPHERE.with_orientation("sideways")


def test_torus_distance_and_curvatures_closed_form():
    x = tube_points(TORUS, 30, 0.3, seed=1)
    rho = np.hypot(x[:, 0], x[:, 1])
    assert np.allclose(TORUS.signed_distance(x), np.hypot(rho - 2.0, x[:, 2]) - 0.5)
    v = np.linspace(0, 2 * np.pi, 7)
    q = np.stack([2 + 0.5 * np.cos(v), 0 * v, 0.5 * np.sin(v)], -1)
    k = -TORUS.principal_curvatures(q)
    assert np.allclose(k[:, 0], 2.0)
    assert np.allclose(k[:, 1], np.cos(v) / (2 + 0.5 * np.cos(v)))


def test_torus_uniqueness_tube_enforced():
    with pytest.raises(G.GeometryError):
        G.signed_distance(TORUS, [[0.0, 0.0, 0.0]])
    with pytest.raises(G.GeometryError):
        G.signed_distance(TORUS, [[2.0, 0.0, 0.0]])


@given(st.floats(-2.5, 2.5), st.floats(-2.5, 2.5))
def test_ellipse_closest_point_matches_brute_force(px, py):
    E = G.make_surface("ellipse", [1.5, 0.8])
    x = np.array([px, py])
    q, d = E.closest(x[None])
    f = lambda t: np.hypot(1.5 * np.cos(t) - px, 0.8 * np.sin(t) - py)
    ts = np.linspace(0, 2 * np.pi, 721)
    t0 = ts[np.argmin(f(ts))]
    best = minimize_scalar(f, bracket=(t0 - 0.01, t0, t0 + 0.01), tol=1e-12).fun
    assert abs(abs(d[0]) - best) < 1e-9
    inside = (px / 1.5) ** 2 + (py / 0.8) ** 2 < 1
    assert (d[0] < 0) == inside or abs(d[0]) < 1e-12


def test_ellipse_curvature_closed_form():
    E = G.make_surface("ellipse", [1.5, 0.8])
    t = np.linspace(0, 2 * np.pi, 13)
    q = np.stack([1.5 * np.cos(t), 0.8 * np.sin(t)], -1)
    exact = 1.5 * 0.8 / (1.5 ** 2 * np.sin(t) ** 2 + 0.8 ** 2 * np.cos(t) ** 2) ** 1.5
    assert np.allclose(-E.principal_curvatures(q)[:, 0], exact)


def test_quadrature_areas():
    assert np.sum(SPHERE.quadrature(32).weights) == pytest.approx(4 * np.pi * 0.49, rel=1e-12)
    assert np.sum(TORUS.quadrature(32).weights) == pytest.approx(4 * np.pi ** 2, rel=1e-12)
    a, b = 1.5, 1.0
    e = np.sqrt(1 - b * b / (a * a))
    prolate = 2 * np.pi * b * b * (1 + a / (b * e) * np.arcsin(e))
    assert np.sum(ELLIPSOID.quadrature(64).weights) == pytest.approx(prolate, rel=1e-10)
    E = G.make_surface("ellipse", [1.5, 0.8])
    perim = 4 * 1.5 * ellipe(1 - (0.8 / 1.5) ** 2)
    assert np.sum(E.quadrature(256).weights) == pytest.approx(perim, rel=1e-12)


@pytest.mark.parametrize("S,expected", [(ELLIPSOID, 4 * np.pi), (TORUS, 0.0)])
def test_gauss_bonnet(S, expected):
    q = S.quadrature(64)
    K = np.prod(S.principal_curvatures(q.points), -1)
    assert np.sum(q.weights * K) == pytest.approx(expected, abs=1e-9)


@pytest.mark.parametrize("S", [SPHERE, TORUS, ELLIPSOID], ids=["sphere", "torus", "ellipsoid"])
def test_curvature_identities_against_finite_differences(S):
    x = tube_points(S, 40, 0.2 * S.feature_radius, seed=3)
    ci = G.curvature_identities(S, x, h=1e-3)
    rel = lambda a, b: np.max(np.abs(a - b) / np.maximum(np.abs(a), 1e-300))
    assert rel(ci.normal_derivative, ci.normal_derivative_fd) <= 1e-4
    assert rel(ci.hessian_normal, ci.hessian_normal_fd) <= 1e-4


@pytest.mark.parametrize("S", [SPHERE, TORUS], ids=["sphere", "torus"])
def test_tube_expansion_is_second_order(S):
    q = S.quadrature(12).points
    assert abs(G.tube_expansion_order(S, q) - 2.0) <= 0.1


def test_focal_point_rejected():
    with pytest.raises(G.GeometryError):
        G.extended_curvatures(G.make_surface("circle", [1.0]), [[1e-13, 0.0]])


@given(st.floats(0, 2 * np.pi), st.floats(0, np.pi), st.floats(-3, 3))
def test_interfacial_coordinates_round_trip(theta, phi, z):
    ic = G.InterfacialCoords(SPHERE, 0.02)
    s0 = np.array(SPHERE.center) + 0.7 * np.array(
        [np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)])
    x = ic.inverse(s0, z)
    s, zz = G.interfacial_coords(ic, x[None])
    assert np.allclose(s[0], s0, atol=1e-12)
    assert zz[0] == pytest.approx(z, abs=1e-10)


def test_interfacial_coordinates_outside_tube():
    ic = G.InterfacialCoords(SPHERE, 0.02)
    with pytest.raises(G.GeometryError):
        G.interfacial_coords(ic, [[2.0, 0.0, 0.0]])
    with pytest.raises(ValueError):
        G.InterfacialCoords(SPHERE, 0.02, delta=0.01)


def test_optimal_profile_derivatives():
    z = np.linspace(-6, 6, 241)
    h = 1e-5
    f = lambda s: G.optimal_profile(s)[0]
    p, d1, d2, d3 = G.optimal_profile(z)
    assert np.allclose(d1, (f(z + h) - f(z - h)) / (2 * h), atol=1e-9)
    assert np.allclose(d2, p ** 3 - p, atol=1e-14)
    g1 = lambda s: G.optimal_profile(s)[2]
    assert np.allclose(d3, (g1(z + h) - g1(z - h)) / (2 * h), atol=1e-8)
    assert G.optimal_profile(np.array([0.5], np.longdouble))[0].dtype == np.longdouble


def test_profile_grid_is_odd_and_symmetric():
    z = G.Profile.grid(1.0, 0.1)
    assert len(z) == 21 and z[0] == -z[-1]
    with pytest.raises(ValueError):
        G.Profile(np.arange(4.0), np.zeros(4))


def test_build_phase_field_and_resolution_warning():
    g = Grid((1.0, 1.0), (32, 32), origin=(-0.5, -0.5))
    C = G.make_surface("circle", [0.3])
    phi = G.build_phase_field(C, 0.08, g)
    assert phi.values.min() < -0.9 and phi.values.max() > 0.9
    with pytest.warns(G.UnderResolvedWarning):
        G.build_phase_field(C, 0.04, g)
    with pytest.raises(ValueError):
        G.build_phase_field(SPHERE, 0.1, g)


@pytest.mark.parametrize("S,area", [(G.make_surface("sphere", [1.0]), 4 * np.pi), (TORUS, 4 * np.pi ** 2)],
                         ids=["sphere", "torus"])
def test_triangulation_lies_on_surface(S, area):
    v, f = G.triangulate(S, 4)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert np.max(np.abs(S.signed_distance(v))) < 1e-12
    a = 0.5 * np.linalg.norm(np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]]), axis=1)
    assert np.sum(a) == pytest.approx(area, rel=5e-3)


@pytest.mark.parametrize("S", [SPHERE, TORUS, ELLIPSOID], ids=["sphere", "torus", "ellipsoid"])
def test_distance_gradient_has_unit_length_in_tube(S):
    x = tube_points(S, 30, 0.2 * S.feature_radius, seed=5)
    h = 1e-5
    grad = np.stack([(S.signed_distance(x + h * e) - S.signed_distance(x - h * e)) / (2 * h) for e in np.eye(3)], -1)
    assert np.allclose(np.linalg.norm(grad, axis=-1), 1.0, atol=1e-8)
    # and it points along the surface normal
    assert np.allclose(grad, S.normal(S.project(x)), atol=1e-7)
