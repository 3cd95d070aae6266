import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from blebbing import energies as en
from blebbing import geometry as G
from blebbing import solver as S
from blebbing.fields import Grid, ScalarField, VectorField


def neg_lap_1d(n, h, kind):
    """Dense matrix of the 1D negative Laplacian with the boundary closure
    named by ``kind``."""
    A = 2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    if kind == "periodic":
        A[0, -1] = A[-1, 0] = -1
    elif kind == "dct2":
        A[0, 0] = A[-1, -1] = 1
    elif kind == "dst2":
        A[0, 0] = A[-1, -1] = 3
    return A / h ** 2


@pytest.mark.parametrize("kinds", [("dct2", "dct2"), ("dst1", "dst2"), ("dst2", "dst1"), ("periodic", "periodic")])
def test_spectral_solve_matches_dense_solve(kinds, rng):
    shape, h = (7, 5), (0.3, 0.2)
    A1, A2 = (neg_lap_1d(n, hh, k) for n, hh, k in zip(shape, h, kinds))
    L = np.kron(A1, np.eye(shape[1])) + np.kron(np.eye(shape[0]), A2)
    M = np.eye(L.shape[0]) + 0.3 * L + 0.01 * L @ L
    rhs = rng.standard_normal(shape)
    x = S.spectral_solve(rhs, h, kinds, lambda lam: 1 + 0.3 * lam + 0.01 * lam ** 2)
    assert np.allclose(x.ravel(), np.linalg.solve(M, rhs.ravel()), atol=1e-12)


def test_spectral_poisson_drops_the_constant_mode(rng):
    rhs = rng.standard_normal((8, 8))
    rhs -= rhs.mean()
    x = S.spectral_solve(rhs, (0.1, 0.1), ("dct2", "dct2"), lambda lam: lam)
    A = neg_lap_1d(8, 0.1, "dct2")
    L = np.kron(A, np.eye(8)) + np.kron(np.eye(8), A)
    assert np.allclose(L @ x.ravel(), rhs.ravel(), atol=1e-10)
    assert abs(x.mean()) < 1e-12


@pytest.mark.parametrize("bnd", ["physical", "periodic"])
def test_mac_gradient_is_negative_adjoint_of_divergence(bnd, rng):
    g = Grid((1.0, 1.5), (6, 9), bnd)
    u = rng.standard_normal((2, 6, 9))
    if bnd == "physical":
        u[0, -1, :] = 0
        u[1, :, -1] = 0
    p = rng.standard_normal(g.shape)
    lhs = np.sum(S.mac_divergence(VectorField(g, u, staggered=True)) * p)
    rhs = -np.sum(u * S.mac_gradient(p, g))
    assert lhs == pytest.approx(rhs, abs=1e-10)


def quiet_state(n=16, bnd="physical", u=None):
    g = Grid((1.0, 1.0), (n, n), bnd)
    return S.PhaseState.from_fields(g, np.ones(g.shape), u=u)


@pytest.mark.parametrize("bnd", ["physical", "periodic"])
def test_projection_removes_divergence(bnd, rng):
    st_ = quiet_state(16, bnd)
    u = 0.1 * rng.standard_normal((2, 16, 16))
    if bnd == "physical":
        u[0, -1, :] = 0
        u[1, :, -1] = 0
    st_.u = VectorField(st_.grid, u, staggered=True)
    p = en.ModelParams(b_m=0, b_c=0)
    out = S.step_fluid(st_, p, S.StepConfig(dt=1e-3))
    assert np.max(np.abs(S.mac_divergence(out.u))) < 1e-10
    assert en.kinetic_energy(out.u, p) < en.kinetic_energy(st_.u, p)


def test_fluid_at_rest_stays_at_rest():
    st_ = quiet_state()
    out = S.step_fluid(st_, en.ModelParams(b_m=0, b_c=0), S.StepConfig(dt=1e-3))
    assert np.all(out.u.values == 0)


def test_cfl_violation_raises():
    g = Grid((1.0, 1.0), (8, 8))
    st_ = quiet_state(8, u=np.full((2, 8, 8), 10.0))
    with pytest.raises(S.SolverError, match="CFL"):
        S.step_fluid(st_, en.ModelParams(), S.StepConfig(dt=0.1))


def taylor_green(n, dt, T=0.5, eta=0.1):
    L = 2 * np.pi
    g = Grid((L, L), (n, n), "periodic")
    h = L / n
    x = (np.arange(n) + 0.5) * h
    xf = (np.arange(n) + 1) * h
    X, Y = np.meshgrid(xf, x, indexing="ij")
    ux = np.sin(X) * np.cos(Y)
    X, Y = np.meshgrid(x, xf, indexing="ij")
    uy = -np.cos(X) * np.sin(Y)
    st_ = S.PhaseState.from_fields(g, np.ones((n, n)), u=np.stack([ux, uy]))
    p = en.ModelParams(rho=1, eta=eta, b_m=0, b_c=0)
    cfg = S.StepConfig(dt=dt, evolve_phase=False, evolve_species=False)
    tr = S.run(st_, p, cfg, steps=int(round(T / dt)))
    f = np.exp(-2 * eta * T)
    err = np.sqrt(np.mean((tr.final.u.values[0] - ux * f) ** 2 + (tr.final.u.values[1] - uy * f) ** 2))
    return err, tr.series("kinetic")


def test_taylor_green_vortex_second_order_in_space():
    e1, ke = taylor_green(16, 1e-3)
    e2, _ = taylor_green(32, 1e-3)
    assert np.log2(e1 / e2) > 1.8
    assert np.all(np.diff(ke) <= 0)


def circle_state(n=32, bnd="physical", eps=0.08, R=0.25, center=(0.5, 0.5)):
    g = Grid((1.0, 1.0), (n, n), bnd)
    C = G.make_surface("circle", [R], center=center)
    return S.PhaseState.from_fields(g, G.build_phase_field(C, eps, g),
                                    G.build_phase_field(G.make_surface("circle", [0.15], center=center), eps, g))


@given(st.integers(0, 2 ** 31 - 1), st.sampled_from(["physical", "periodic"]))
def test_phase_step_conserves_mass(seed, bnd):
    rng = np.random.default_rng(seed)
    st_ = circle_state(16, bnd, eps=0.15)
    u = 0.3 * rng.standard_normal((2, 16, 16))
    if bnd == "physical":
        u[0, -1, :] = 0
        u[1, :, -1] = 0
    st_.u = VectorField(st_.grid, u, staggered=True)
    p = en.ModelParams(eps=0.15, b_m=0.01, b_c=0.01)
    out = S.step_phase_fields(st_, p, S.StepConfig(dt=1e-3))
    for name in ("phi_m", "phi_c"):
        a, b = getattr(st_, name).values, getattr(out, name).values
        assert abs(b.sum() - a.sum()) <= 1e-12 * np.abs(a).sum()


def test_stabilised_phase_flow_dissipates_free_energy():
    st_ = circle_state(32)
    X, Y = st_.grid.mesh()
    # perturb the circle so the flow has something to relax
    st_.phi_m = ScalarField(st_.grid, np.clip(st_.phi_m.values + 0.2 * np.cos(6 * np.pi * X) * (1 - st_.phi_m.values ** 2), -1, 1))
    p = en.ModelParams(eps=0.08, b_m=0.01, b_c=0.01)
    cfg = S.StepConfig(dt=1e-4, evolve_fluid=False, evolve_species=False)
    tr = S.run(st_, p, cfg, steps=30)
    F = tr.series("free")
    assert np.all(np.diff(F) <= 1e-10 * F[0])
    assert F[-1] < F[0]


def test_stabiliser_symbol_vanishes_on_constants():
    f = S.stabilizer_symbol(en.ModelParams(eps=0.1), 0.5, 1.0, 1.0)
    assert f(0.0) == 0.0 and f(10.0) > 0


def test_zeta_and_reaction_rate():
    p = en.ModelParams(eps=0.05, zeta0=3.0, zeta_lcrit=0.1, zeta_width=0.02, beta=2.0)
    d = np.array([0.0, 0.1, 0.5])
    phi = np.tanh(d / (p.eps * np.sqrt(2)))
    z = S.zeta(phi, p)
    assert z[0] == pytest.approx(3.0 / (1 + np.exp(5.0)))
    assert z[1] == pytest.approx(1.5)
    assert z[2] == pytest.approx(3.0, rel=1e-6)
    g = Grid((1.0,), (3,))
    r = S.reaction_rate(ScalarField(g, [1.0, 1.0, 1.0]), ScalarField(g, [0.5, 0.5, 0.5]), ScalarField(g, phi), None, p)
    assert np.allclose(r.values, 1.0 - z)
    assert np.all(S.zeta(phi, p.replace(zeta0=0.0)) == 0)


def species_state(n=64):
    # the cortex tube stays clear of the walls, where c = 0 is imposed
    g = Grid((1.0, 1.0), (n, n), "physical", origin=(-0.5, -0.5))
    p = en.ModelParams(eps=0.04, beta=2.0, zeta0=3.0, zeta_lcrit=0.05, D_a=0.1, D_i=0.05)
    M, C = G.make_surface("circle", [0.3]), G.make_surface("circle", [0.2])
    ca = S.initial_species(C, lambda q: 1 + 0.5 * q[..., 0] / 0.2, g, p)
    ci = S.initial_species(C, lambda q: 0.5 + 0 * q[..., 0], g, p)
    st_ = S.PhaseState.from_fields(g, G.build_phase_field(M, p.eps, g), G.build_phase_field(C, p.eps, g), ca, ci)
    return st_, p


def test_weighted_diffusion_matrix_symmetric_negative():
    st_, p = species_state()
    e, act = S.species_weight(st_, p)
    L = S._weighted_diffusion_matrix(e, act, st_.grid, 1.0)[act.ravel()][:, act.ravel()]
    assert abs(L - L.T).max() < 1e-12
    ev = np.linalg.eigvalsh(L.toarray())
    assert ev.max() < 1e-9
    # the constant is in the kernel: no flux leaves the tube
    assert np.allclose(L @ np.ones(L.shape[0]), 0, atol=1e-9)


def test_reaction_only_conserves_weighted_total():
    st_, p = species_state()
    m0 = S.weighted_mass(st_, p)
    cfg = S.StepConfig(dt=1e-3, evolve_fluid=False, evolve_phase=False, reaction_only=True)
    tr = S.run(st_, p, cfg, steps=50)
    assert abs(S.weighted_mass(tr.final, p) - m0) <= 1e-12 * m0
    assert not np.allclose(tr.final.c_a.values, st_.c_a.values)


def test_species_diffusion_conserves_mass_and_smooths():
    st_, p = species_state()
    p = p.replace(beta=0.0, zeta0=0.0)
    cfg = S.StepConfig(dt=1e-3, evolve_fluid=False, evolve_phase=False)
    e, act = S.species_weight(st_, p)

    def var(s):
        c, w = s.c_a.values[act], e[act]
        mu = np.sum(w * c) / np.sum(w)
        return np.sum(w * (c - mu) ** 2)
    s = st_
    vs = [var(s)]
    for _ in range(10):
        s = S.step_species(s, p, cfg)
        vs.append(var(s))
    m0, m1 = np.sum((e * st_.c_a.values)[act]), np.sum((e * s.c_a.values)[act])
    assert abs(m1 - m0) <= 1e-12 * m0
    assert np.all(np.diff(vs) < 0)


def test_initial_species_confined_to_cortex_tube():
    st_, p = species_state()
    e, act = S.species_weight(st_, p)
    assert np.all(st_.c_a.values[~act] == 0)
    assert st_.c_a.values[act].max() == pytest.approx(1.5, abs=0.1)


def test_checkpoint_round_trip(tmp_path):
    st_ = circle_state(12, eps=0.2)
    st_.u = VectorField(st_.grid, np.arange(2 * 144.0).reshape(2, 12, 12), staggered=True)
    st_.t = 0.125
    S.write_checkpoint(tmp_path / "ck", st_, {"note": "x"})
    back = S.read_checkpoint(tmp_path / "ck")
    assert back.t == 0.125
    for name in ("phi_m", "phi_c", "c_a", "c_i", "p"):
        assert np.array_equal(getattr(back, name).values, getattr(st_, name).values)
    assert np.array_equal(back.u.values, st_.u.values)


def test_run_aborts_on_blow_up_and_dumps_last_state(tmp_path):
    st_ = circle_state(16, eps=0.15)
    p = en.ModelParams(eps=0.15)
    cfg = S.StepConfig(dt=1e-2, kappa_stab=0.0, mobility=1.0, evolve_fluid=False, evolve_species=False)
    with pytest.raises(S.SolverError):
        S.run(st_, p, cfg, steps=50, out=tmp_path)
    assert (tmp_path / "abort" / "state.json").exists()
    assert (tmp_path / "energy.csv").exists()
    tr = S.run(st_, p, cfg, steps=50, raise_on_abort=False)
    assert tr.aborted is not None


def test_run_needs_a_length():
    with pytest.raises(ValueError):
        S.run(circle_state(8, eps=0.3), en.ModelParams(eps=0.3), S.StepConfig())


def test_level_set_center_of_circle():
    st_ = circle_state(64, "periodic", eps=0.04, R=0.2, center=(0.43, 0.55))
    c = S.level_set_center(st_.phi_m)
    assert np.allclose(c, [0.43, 0.55], atol=1e-3)
    pts = S.zero_level_crossings(st_.phi_m)
    r = np.linalg.norm(pts - [0.43, 0.55], axis=1)
    assert np.max(np.abs(r - 0.2)) < 2e-3
    with pytest.raises(S.SolverError):
        S.level_set_center(ScalarField(st_.grid, np.ones(st_.grid.shape)))


def test_rigid_translation_without_mobility():
    n = 64
    g = Grid((1.0, 1.0), (n, n), "periodic")
    p = en.ModelParams(eps=0.06)
    c0 = np.array([0.4, 0.45])
    st_ = S.PhaseState.from_fields(g, G.build_phase_field(G.make_surface("circle", [0.2], center=c0), p.eps, g))
    U = np.array([1.0, 0.5])
    st_.u = VectorField(g, np.stack([np.full(g.shape, U[0]), np.full(g.shape, U[1])]), staggered=True)
    dt = 0.2 / n
    cfg = S.StepConfig(dt=dt, mobility=0.0, evolve_fluid=False, evolve_species=False)
    tr = S.run(st_, p, cfg, steps=20)
    assert np.linalg.norm(S.level_set_center(tr.final.phi_m) - (c0 + 20 * dt * U)) < 5e-3
