"""Time integration of the coupled phase-field, fluid and linker system.

One step advances, in this order, the velocity (semi-implicit viscous
step and exact discrete projection on a MAC grid), both phase fields
(conservative flux form, stabilised implicit treatment of the
constant-coefficient part of the sixth-order operator) and the two linker
densities (weighted form on the cortex tube).

Spectral solves diagonalise the compact second-order stencils exactly:
DCT-II for mirror ghosts, DST-II for sign-flipped ghosts, DST-I for
Dirichlet nodes sitting on walls and FFTs on periodic grids.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import energies as en
from . import fields as fd
from .energies import EnergyLog, EnergyReport, ModelParams
from .fields import Grid, ScalarField, VectorField

log = logging.getLogger(__name__)

SQRT2 = np.sqrt(2.0)


class SolverError(RuntimeError):
    """Numerical failure of a time step (CFL, blow-up, NaN)."""


@dataclass
class PhaseState:
    """``u`` is staggered (MAC); all other fields are cell centred."""

    t: float
    u: VectorField
    p: ScalarField
    phi_m: ScalarField
    phi_c: ScalarField
    c_a: ScalarField
    c_i: ScalarField

    @property
    def grid(self) -> Grid:
        return self.phi_m.grid

    def copy(self) -> "PhaseState":
        return PhaseState(self.t, self.u.copy(), self.p.copy(), self.phi_m.copy(),
                          self.phi_c.copy(), self.c_a.copy(), self.c_i.copy())

    def check(self, tol: float = 0.1) -> list:
        """Monitored bounds; returns a list of violations."""
        bad = []
        for name in ("phi_m", "phi_c"):
            v = getattr(self, name).values
            if v.min() < -1 - tol or v.max() > 1 + tol:
                bad.append(f"{name} outside [-1-{tol}, 1+{tol}]")
        for name in ("c_a", "c_i"):
            if getattr(self, name).values.min() < -tol:
                bad.append(f"{name} below -{tol}")
        return bad

    @classmethod
    def from_fields(cls, grid: Grid, phi_m, phi_c=None, c_a=None, c_i=None, u=None, t=0.0):
        def sf(v, fill):
            if v is None:
                return ScalarField(grid, np.full(grid.shape, fill))
            return v if isinstance(v, ScalarField) else ScalarField(grid, v)
        if u is None:
            u = VectorField(grid, np.zeros((grid.dim, *grid.shape)), staggered=True)
        elif not isinstance(u, VectorField):
            u = VectorField(grid, u, staggered=True)
        return cls(t, u, sf(None, 0.0), sf(phi_m, 1.0), sf(phi_c, 1.0), sf(c_a, 0.0), sf(c_i, 0.0))


@dataclass(frozen=True)
class StepConfig:
    """``kappa_stab`` scales the implicit stabilising operator; the phase
    step is unconditionally stable in its linear part for values above 1/2.
    ``mobility`` overrides ``eps^alpha`` when given."""

    dt: float = 1e-5
    kappa_stab: float = 2.0
    proj_tol: float = 1e-8
    cfl: float = 0.5
    mobility: float | None = None
    evolve_fluid: bool = True
    evolve_phase: bool = True
    evolve_species: bool = True
    reaction_only: bool = False
    species_tol: float = 1e-13

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.kappa_stab < 0:
            raise ValueError("kappa_stab must be non-negative")

    def replace(self, **kw) -> "StepConfig":
        return replace(self, **kw)


# =============================================================================
# spectral solves
# =============================================================================

def _eig(n: int, h: float, kind: str) -> np.ndarray:
    """Eigenvalues of the 1D stencil ``-(a[i-1] - 2a[i] + a[i+1])/h^2``."""
    if kind == "periodic":
        k = np.arange(n)
        return 4 / h ** 2 * np.sin(np.pi * k / n) ** 2
    if kind == "dct2":
        k = np.arange(n)
    elif kind == "dst2":
        k = np.arange(1, n + 1)
    elif kind == "dst1":                # n interior nodes between two wall nodes
        return 4 / h ** 2 * np.sin(np.pi * np.arange(1, n + 1) / (2 * (n + 1))) ** 2
    else:
        raise ValueError(kind)
    return 4 / h ** 2 * np.sin(np.pi * k / (2 * n)) ** 2


def _forward(a: np.ndarray, kinds) -> np.ndarray:
    out = a.astype(complex) if "periodic" in kinds else a
    for ax, k in enumerate(kinds):
        if k == "periodic":
            out = np.fft.fft(out, axis=ax)
        elif k == "dct2":
            out = sfft.dct(out, type=2, axis=ax, norm="ortho")
        elif k == "dst2":
            out = sfft.dst(out, type=2, axis=ax, norm="ortho")
        else:
            out = sfft.dst(out, type=1, axis=ax, norm="ortho")
    return out


def _inverse(a: np.ndarray, kinds) -> np.ndarray:
    out = a
    for ax, k in enumerate(kinds):
        if k == "periodic":
            out = np.fft.ifft(out, axis=ax)
        elif k == "dct2":
            out = sfft.idct(out, type=2, axis=ax, norm="ortho")
        elif k == "dst2":
            out = sfft.idst(out, type=2, axis=ax, norm="ortho")
        else:
            out = sfft.idst(out, type=1, axis=ax, norm="ortho")
    return np.real(out) if np.iscomplexobj(out) else out


def _symbol(shape, h, kinds) -> np.ndarray:
    """Negative Laplacian symbol on the transformed grid."""
    lam = 0.0
    for ax, (n, k) in enumerate(zip(shape, kinds)):
        e = _eig(n, h[ax], k)
        lam = lam + e.reshape([-1 if a == ax else 1 for a in range(len(shape))])
    return np.broadcast_to(lam, shape)


def spectral_solve(rhs: np.ndarray, h, kinds, symbol_fn) -> np.ndarray:
    """Solve ``f(-lap) x = rhs``; ``symbol_fn`` maps Laplacian eigenvalues
    to the operator's eigenvalues (entries that vanish are set to zero)."""
    lam = _symbol(rhs.shape, h, kinds)
    s = symbol_fn(lam)
    r = _forward(rhs, kinds)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(s != 0, r / np.where(s != 0, s, 1.0), 0.0)
    return _inverse(x, kinds)


def _scalar_kinds(grid: Grid):
    return ("periodic" if grid.periodic else "dct2",) * grid.dim


# =============================================================================
# MAC operators
# =============================================================================

def mac_divergence(u: VectorField) -> np.ndarray:
    """Cell divergence of a staggered field (wall faces are zero)."""
    g = u.grid
    out = np.zeros(g.shape)
    for a in range(g.dim):
        c = u.values[a]
        lo = np.roll(c, 1, axis=a)
        if not g.periodic:
            sl = [slice(None)] * g.dim
            sl[a] = 0
            lo[tuple(sl)] = 0.0
        out += (c - lo) / g.spacing[a]
    return out


def mac_gradient(p: np.ndarray, grid: Grid) -> np.ndarray:
    """Face gradient of a cell field; zero on physical wall faces."""
    out = np.empty((grid.dim, *grid.shape))
    for a in range(grid.dim):
        d = (np.roll(p, -1, axis=a) - p) / grid.spacing[a]
        if not grid.periodic:
            sl = [slice(None)] * grid.dim
            sl[a] = -1
            d[tuple(sl)] = 0.0
        out[a] = d
    return out


def cell_to_face(v: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    """Average a cell field to the faces normal to ``axis`` (wall faces zero)."""
    f = 0.5 * (v + np.roll(v, -1, axis=axis))
    if not grid.periodic:
        sl = [slice(None)] * grid.dim
        sl[axis] = -1
        f[tuple(sl)] = 0.0
    return f


def face_to_cell(u: VectorField) -> np.ndarray:
    """Cell-centred velocity from a staggered field."""
    g = u.grid
    out = np.empty((g.dim, *g.shape))
    for a in range(g.dim):
        c = u.values[a]
        lo = np.roll(c, 1, axis=a)
        if not g.periodic:
            sl = [slice(None)] * g.dim
            sl[a] = 0
            lo[tuple(sl)] = 0.0
        out[a] = 0.5 * (c + lo)
    return out


def _velocity_kinds(grid: Grid, comp: int):
    if grid.periodic:
        return ("periodic",) * grid.dim
    return tuple("dst1" if a == comp else "dst2" for a in range(grid.dim))


def _interior(grid: Grid, comp: int):
    """Index of the unknown faces of component ``comp`` (drops the wall face)."""
    if grid.periodic:
        return tuple(slice(None) for _ in range(grid.dim))
    return tuple(slice(0, -1) if a == comp else slice(None) for a in range(grid.dim))


def _advection_cells(u: VectorField) -> np.ndarray:
    """``(u . grad) u`` at cell centres by central differences."""
    g = u.grid
    uc = face_to_cell(u)
    kind = "periodic" if g.periodic else "dirichlet-zero"
    out = np.zeros_like(uc)
    for b in range(g.dim):
        grad = fd.grad_valid(fd.pad(uc[b], kind, 1), g.spacing)
        out[b] = np.sum(uc * grad, axis=0)
    return out


# =============================================================================
# energy gradients and forces
# =============================================================================

@dataclass
class Gradients:
    """Free-energy L2 gradients of one state and the coupling cache."""

    g_m: np.ndarray
    g_c: np.ndarray
    cs: en.CouplingState | None


def gradients(state: PhaseState, p: ModelParams) -> Gradients:
    cs = None
    if en._needs_coupling(state, p):
        cs = en.coupling_state(state.phi_m, state.phi_c, state.c_a, p)
    gm, gc = en.free_energy_gradients(state, p, cs)
    return Gradients(gm, gc, cs)


def face_force(state: PhaseState, p: ModelParams, gr: Gradients) -> np.ndarray:
    """Momentum forcing on MAC faces.

    The phase-field part uses ``-phi grad g``, which differs from
    ``g grad phi`` by a gradient absorbed into the pressure and is the
    exact adjoint of the conservative advection of ``phi``.  The linker
    force terms are averaged from cells.
    """
    grid = state.grid
    kind = grid.default_kind()
    out = np.zeros((grid.dim, *grid.shape))
    for phi, g in ((state.phi_m.values, gr.g_m), (state.phi_c.values, gr.g_c)):
        for a in range(grid.dim):
            dg = fd.face_diff(g, kind, a, grid.spacing[a])
            pm = fd.face_mean(phi, kind, a)
            f = -pm * dg
            sl = [slice(None)] * grid.dim
            sl[a] = slice(1, None)
            f = f[tuple(sl)]                       # faces i+1/2, i = 0..n-1
            if not grid.periodic:
                sl[a] = -1
                f[tuple(sl)] = 0.0
            out[a] += f
    if gr.cs is not None:
        G, Hf = en.species_force_terms(state.phi_c, state.c_a, p, gr.cs)
        for a in range(grid.dim):
            out[a] += cell_to_face(G[a] + Hf[a], grid, a)
    return out


# =============================================================================
# steps
# =============================================================================

def _check_cfl(state: PhaseState, cfg: StepConfig) -> None:
    umax = float(np.max(np.abs(state.u.values))) if state.u.values.size else 0.0
    c = umax * cfg.dt / min(state.grid.spacing)
    if c > cfg.cfl:
        raise SolverError(f"CFL violation: {c:.3g} > {cfg.cfl}")


def step_fluid(state: PhaseState, p: ModelParams, cfg: StepConfig,
               grads: Gradients | None = None) -> PhaseState:
    """Semi-implicit viscous step followed by an exact discrete projection."""
    grid = state.grid
    _check_cfl(state, cfg)
    gr = gradients(state, p) if grads is None else grads
    K = face_force(state, p, gr)
    N = _advection_cells(state.u)
    rho, eta, dt = p.rho, p.eta, cfg.dt
    ustar = np.empty_like(state.u.values)
    for a in range(grid.dim):
        rhs = rho / dt * state.u.values[a] - rho * cell_to_face(N[a], grid, a) + K[a]
        idx = _interior(grid, a)
        sol = spectral_solve(rhs[idx], grid.spacing, _velocity_kinds(grid, a),
                             lambda lam: rho / dt + eta * lam)
        comp = np.zeros(grid.shape)
        comp[idx] = sol
        ustar[a] = comp
    us = VectorField(grid, ustar, staggered=True)
    div = mac_divergence(us)
    phi = spectral_solve(-rho / dt * div, grid.spacing, _scalar_kinds(grid), lambda lam: lam)
    # lap p = (rho/dt) div u*  <=>  (-lap) p = -(rho/dt) div u*
    unew = ustar - dt / rho * mac_gradient(phi, grid)
    u = VectorField(grid, unew, staggered=True)
    res = float(np.max(np.abs(mac_divergence(u))))
    if res > cfg.proj_tol:
        raise SolverError(f"projection residual {res:.3g} above tolerance")
    out = state.copy()
    out.u = u
    out.p = ScalarField(grid, phi - phi.mean())
    return out


def _advective_flux_div(phi: np.ndarray, u: VectorField) -> np.ndarray:
    """``div(u phi)`` with face-averaged ``phi``; wall faces carry no flux."""
    g = u.grid
    out = np.zeros(g.shape)
    for a in range(g.dim):
        flux = u.values[a] * cell_to_face(phi, g, a)
        lo = np.roll(flux, 1, axis=a)
        if not g.periodic:
            sl = [slice(None)] * g.dim
            sl[a] = 0
            lo[tuple(sl)] = 0.0
        out += (flux - lo) / g.spacing[a]
    return out


def stabilizer_symbol(p: ModelParams, m: float, sigma: float, b: float):
    """``m lam [b eps (lam + 2/eps^2)^2 + sigma (eps lam + 2/eps)]``: the
    linearisation of ``-div(m grad g)`` about the pure phases."""
    e = p.eps

    def f(lam):
        return m * lam * (b * e * (lam + 2 / e ** 2) ** 2 + sigma * (e * lam + 2 / e))
    return f


def step_phase_fields(state: PhaseState, p: ModelParams, cfg: StepConfig,
                      grads: Gradients | None = None, u: VectorField | None = None) -> PhaseState:
    """Advance both phase fields by one stabilised step.

    ``(1 + dt kappa A) (phi' - phi) = dt (div(m grad g) - div(u phi))``,
    with ``A`` from :func:`stabilizer_symbol`.  The right side is a sum of
    face-flux differences, so the cell sum of each field is conserved.
    """
    grid = state.grid
    kind = grid.default_kind()
    m = p.mobility if cfg.mobility is None else cfg.mobility
    gr = gradients(state, p) if (grads is None and m > 0) else grads
    u = state.u if u is None else u
    out = state.copy()
    for name, g, sigma, b in (("phi_m", gr.g_m if gr else None, p.sigma_m, p.b_m),
                              ("phi_c", gr.g_c if gr else None, p.sigma_c, p.b_c)):
        phi = getattr(state, name).values
        rhs = -_advective_flux_div(phi, u)
        if m > 0:
            rhs = rhs + m * fd.weighted_laplacian(g, None, kind, grid.spacing)
        if m > 0 and cfg.kappa_stab > 0:
            A = stabilizer_symbol(p, m, sigma, b)
            k, dt = cfg.kappa_stab, cfg.dt
            delta = spectral_solve(dt * rhs, grid.spacing, _scalar_kinds(grid),
                                   lambda lam: 1 + dt * k * A(lam))
            # the zero mode of the operator is the identity: keep the flux sum exactly
            delta -= delta.mean() - (dt * rhs).mean()
        else:
            delta = cfg.dt * rhs
        setattr(out, name, ScalarField(grid, phi + delta))
    return out


# -- species ---------------------------------------------------------------------------

def zeta(phi_m: np.ndarray, p: ModelParams) -> np.ndarray:
    """Disconnection rate ``zeta0 sigmoid((l - l_crit)/width)`` where ``l``
    is the membrane distance recovered from the optimal profile."""
    if p.zeta0 == 0:
        return np.zeros_like(phi_m)
    ph = np.clip(phi_m, -1 + 1e-12, 1 - 1e-12)
    ell = np.abs(p.eps * SQRT2 * np.arctanh(ph))
    return p.zeta0 / (1 + np.exp(-(ell - p.zeta_lcrit) / p.zeta_width))


def reaction_rate(c_a, c_i, phi_m, n, p: ModelParams) -> ScalarField:
    """``r = beta c_i - c_a zeta(phi_m, n)``.  The default rate ignores
    the cortex normal ``n``."""
    grid = c_a.grid
    r = p.beta * c_i.values - c_a.values * zeta(phi_m.values, p)
    return ScalarField(grid, r)


def _weighted_diffusion_matrix(w: np.ndarray, active: np.ndarray, grid: Grid, D: float) -> sp.csr_matrix:
    """Matrix of ``div(w D grad c)`` on active cells (face weights are
    arithmetic means; faces touching inactive cells carry no flux; wall
    faces use the zero Dirichlet ghost)."""
    shape = grid.shape
    N = grid.size
    idx = np.arange(N).reshape(shape)
    rows, cols, vals = [], [], []
    diag = np.zeros(N)
    for a in range(grid.dim):
        h2 = grid.spacing[a] ** 2
        nb = np.roll(idx, -1, axis=a)
        wf = 0.5 * (w + np.roll(w, -1, axis=a))
        ok = active & np.roll(active, -1, axis=a)
        if not grid.periodic:
            sl = [slice(None)] * grid.dim
            sl[a] = -1
            ok[tuple(sl)] = False
        c = D * wf[ok] / h2
        i, j = idx[ok], nb[ok]
        rows += [i, j]
        cols += [j, i]
        vals += [c, c]
        np.add.at(diag, i, -c)
        np.add.at(diag, j, -c)
        if not grid.periodic:
            for end in (0, -1):
                sl = [slice(None)] * grid.dim
                sl[a] = end
                sl = tuple(sl)
                wall = active[sl]
                np.add.at(diag, idx[sl][wall], -2 * D * w[sl][wall] / h2)
    rows.append(np.arange(N))
    cols.append(np.arange(N))
    vals.append(diag)
    return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(N, N)).tocsr()


def species_weight(state: PhaseState, p: ModelParams) -> tuple:
    """``e(phi_c)`` and the active-cell mask."""
    e = en.gl_density(state.phi_c, p).values
    return e, en.tube_mask(e, p.cutoff_rel)


def step_species(state: PhaseState, p: ModelParams, cfg: StepConfig,
                 u: VectorField | None = None) -> PhaseState:
    """Weighted linker equations on the cortex tube.

    Diffusion is implicit (sparse solve on active cells), reaction,
    curvature and tangential advection explicit.  Inactive cells keep
    their values.
    """
    grid = state.grid
    kind = grid.default_kind()
    dt = cfg.dt
    e, active = species_weight(state, p)
    ca, ci = state.c_a.values, state.c_i.values
    n_vec, Hphi = en.diffuse_normal_and_curvature(state.phi_c, p)
    r = reaction_rate(state.c_a, state.c_i, state.phi_m, n_vec, p).values
    rhs_a = e * r
    rhs_i = -e * r
    if not cfg.reaction_only:
        u = state.u if u is None else u
        uc = face_to_cell(u)
        n = n_vec.values
        Vn = np.sum(uc * n, axis=0)
        ut = uc - Vn * n
        ckind = "periodic" if grid.periodic else "dirichlet-zero"
        for c, rhs in ((ca, rhs_a), (ci, rhs_i)):
            rhs += Vn * Hphi.values * c
            flux = e * ut * c
            rhs -= fd.div_valid(np.stack([fd.pad(f, ckind, 1) for f in flux]), grid.spacing)
    out = state.copy()
    sel = active.ravel()
    for name, c, rhs, D in (("c_a", ca, rhs_a, p.D_a), ("c_i", ci, rhs_i, p.D_i)):
        new = c.copy()
        b = (e * c + dt * rhs).ravel()[sel]
        if cfg.reaction_only or D == 0:
            new.ravel()[sel] = b / e.ravel()[sel]
        else:
            L = _weighted_diffusion_matrix(e, active, grid, D)[sel][:, sel]
            M = sp.diags(e.ravel()[sel]) - dt * L
            sol = spla.spsolve(M.tocsc(), b)
            if not np.all(np.isfinite(sol)):
                raise SolverError("species solve failed")
            new.ravel()[sel] = sol
        setattr(out, name, ScalarField(grid, new))
    return out


def weighted_mass(state: PhaseState, p: ModelParams) -> float:
    """``int e(phi_c) (c_a + c_i)`` over the active cells."""
    e, active = species_weight(state, p)
    return float(np.sum((e * (state.c_a.values + state.c_i.values))[active]) * state.grid.cell_volume)


def initial_species(cortex, density, grid: Grid, p: ModelParams) -> ScalarField:
    """``c_a`` as the surface density evaluated at the nearest cortex point,
    masked to the cortex tube."""
    pts = grid.points()
    q, d = cortex.closest(pts)
    e = 0.5 * (1 / np.cosh(d / (p.eps * SQRT2)) ** 2) ** 2 / p.eps
    vals = np.where(en.tube_mask(e, p.cutoff_rel), np.asarray(density(q), float), 0.0)
    return ScalarField(grid, vals)


# =============================================================================
# driver
# =============================================================================

def step(state: PhaseState, p: ModelParams, cfg: StepConfig) -> PhaseState:
    """One full step: fluid, phase fields, species."""
    m = p.mobility if cfg.mobility is None else cfg.mobility
    need_grads = cfg.evolve_fluid or (cfg.evolve_phase and m > 0)
    gr = gradients(state, p) if need_grads else None
    new = state
    if cfg.evolve_fluid:
        new = step_fluid(state, p, cfg, gr)
    if cfg.evolve_phase:
        ph = step_phase_fields(state, p, cfg, gr, u=new.u)
        new = replace(new, phi_m=ph.phi_m, phi_c=ph.phi_c) if new is not state else ph
    if cfg.evolve_species:
        sp_ = step_species(state, p, cfg, u=new.u)
        new = replace(new, c_a=sp_.c_a, c_i=sp_.c_i) if new is not state else sp_
    if new is state:
        new = state.copy()
    new.t = state.t + cfg.dt
    return new


def _finite(state: PhaseState) -> bool:
    arrs = (state.u.values, state.p.values, state.phi_m.values, state.phi_c.values,
            state.c_a.values, state.c_i.values)
    return all(np.all(np.isfinite(a)) for a in arrs)


def write_checkpoint(directory, state: PhaseState, meta: dict | None = None) -> Path:
    """Every field as raw little-endian binary with a JSON sidecar, plus
    ``state.json`` holding the time and ``meta``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name in ("p", "phi_m", "phi_c", "c_a", "c_i"):
        fd.write_raw(d / f"{name}.raw", getattr(state, name), name, state.t)
    for a in range(state.grid.dim):
        fd.write_raw(d / f"u{a}.raw", ScalarField(state.grid, state.u.values[a]), f"u{a}", state.t,
                     {"staggered_axis": a})
    (d / "state.json").write_text(json.dumps({"t": state.t, **(meta or {})}, indent=2, default=str))
    return d


def read_checkpoint(directory) -> PhaseState:
    d = Path(directory)
    t = json.loads((d / "state.json").read_text())["t"]
    f = {n: fd.read_raw(d / f"{n}.raw")[0] for n in ("p", "phi_m", "phi_c", "c_a", "c_i")}
    grid = f["phi_m"].grid
    u = np.stack([fd.read_raw(d / f"u{a}.raw")[0].values for a in range(grid.dim)])
    return PhaseState(t, VectorField(grid, u, staggered=True), f["p"], f["phi_m"], f["phi_c"],
                      f["c_a"], f["c_i"])


@dataclass
class Trajectory:
    states: list
    reports: list = field(default_factory=list)
    times: list = field(default_factory=list)
    aborted: str | None = None

    @property
    def final(self) -> PhaseState:
        return self.states[-1]

    def series(self, attr: str) -> np.ndarray:
        return np.array([getattr(r, attr) for r in self.reports])


def run(state0: PhaseState, p: ModelParams, cfg: StepConfig, T: float | None = None,
        steps: int | None = None, out: str | Path | None = None, checkpoint_every: int = 0,
        keep_every: int = 0, blowup: float = 10.0, raise_on_abort: bool = True) -> Trajectory:
    """Integrate to time ``T`` (or for ``steps`` steps) with an energy report
    per step.

    Stops when the total energy exceeds ``blowup`` times its initial value
    or a field turns non-finite; the last good state is then written to
    ``out/abort`` and :class:`SolverError` raised (unless
    ``raise_on_abort`` is false).
    """
    if steps is None:
        if T is None:
            raise ValueError("give T or steps")
        steps = int(round(T / cfg.dt))
    outdir = Path(out) if out is not None else None
    elog = None
    if outdir is not None:
        outdir.mkdir(parents=True, exist_ok=True)
        elog = EnergyLog(outdir / "energy.csv")
    state = state0
    rep0 = en.total_energy(state, p)
    traj = Trajectory([state], [rep0], [state.t])
    if elog:
        elog.append(state.t, rep0)
    ref = max(abs(rep0.total), np.finfo(float).tiny)
    meta = {"params": asdict(p), "step": asdict(cfg)}
    for n in range(1, steps + 1):
        try:
            new = step(state, p, cfg)
            ok = _finite(new)
            rep = en.total_energy(new, p) if ok else None
        except (FloatingPointError, ValueError) as exc:
            ok, rep, reason = False, None, f"step {n}: {exc}"
        else:
            reason = f"step {n}: non-finite field"
        if ok and rep.total > blowup * ref and rep.total > 0:
            ok, reason = False, f"step {n}: energy blow-up ({rep.total:.4g} > {blowup} x {ref:.4g})"
        if not ok:
            traj.aborted = reason
            log.error("abort: %s", reason)
            if outdir is not None:
                write_checkpoint(outdir / "abort", state, {**meta, "reason": reason})
            if raise_on_abort:
                raise SolverError(reason)
            return traj
        state = new
        traj.reports.append(rep)
        traj.times.append(state.t)
        if keep_every and n % keep_every == 0:
            traj.states.append(state)
        if elog:
            elog.append(state.t, rep)
        if outdir is not None and checkpoint_every and n % checkpoint_every == 0:
            write_checkpoint(outdir / f"step_{n:06d}", state, meta)
        for msg in state.check():
            log.warning("t=%.4g: %s", state.t, msg)
    if traj.states[-1] is not state:
        traj.states.append(state)
    return traj


def zero_level_crossings(phi: ScalarField) -> np.ndarray:
    """Points where ``phi`` changes sign along grid lines (linear interpolation)."""
    grid = phi.grid
    v = phi.values
    x = grid.points()
    out = []
    for a in range(grid.dim):
        v0 = v
        v1 = np.roll(v, -1, axis=a)
        x1 = np.roll(x, -1, axis=a)
        ok = (v0 * v1 < 0)
        if not grid.periodic:
            sl = [slice(None)] * grid.dim
            sl[a] = -1
            ok[tuple(sl)] = False
        # never interpolate across the periodic seam
        seam = np.abs(x1[..., a] - x[..., a]) > 1.5 * grid.spacing[a]
        ok &= ~seam
        t = v0[ok] / (v0[ok] - v1[ok])
        out.append(x[ok] + t[:, None] * (x1[ok] - x[ok]))
    return np.concatenate(out) if out else np.zeros((0, grid.dim))


def level_set_center(phi: ScalarField) -> np.ndarray:
    """Centre of the least-squares sphere through the zero crossings."""
    pts = zero_level_crossings(phi)
    if len(pts) < phi.grid.dim + 1:
        raise SolverError("no zero level set")
    A = np.hstack([2 * pts, np.ones((len(pts), 1))])
    b = np.sum(pts * pts, axis=1)
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    return sol[:-1]
