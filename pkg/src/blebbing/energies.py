"""Energies, chemical potentials, L2 gradients and the interfacial force.

All discrete energies are cell sums, and every gradient returned here is
the exact derivative of the corresponding discrete energy with respect to
the cell values, divided by the cell volume.  The squared gradient in the
Ginzburg-Landau density is the mean of the squared face differences, which
makes ``-eps * lap`` (compact stencil, mirror ghosts on physical grids) its
exact variation.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fields as fd
from ._kernels import coupling_sums
from .fields import ScalarField, VectorField

SQRT2 = np.sqrt(2.0)
Z_CONST = 2.0 * SQRT2 / 3.0


@dataclass(frozen=True)
class ModelParams:
    eps: float = 0.05
    alpha: float = 0.5
    sigma_m: float = 1.0
    sigma_c: float = 1.0
    b_m: float = 1.0
    b_c: float = 1.0
    rho: float = 1.0
    eta: float = 1.0
    k: float = 1.0
    omega_hat: float = 1.0
    s: float = 1.0
    weight_sign: float = -1.0
    D_a: float = 1.0
    D_i: float = 1.0
    beta: float = 0.0
    zeta0: float = 0.0
    zeta_lcrit: float = 0.1
    zeta_width: float = 0.02
    c0: float = 0.0
    cutoff_rel: float = 1e-6
    grad_floor: float = 1e-5

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        for name in ("sigma_m", "sigma_c", "b_m", "b_c", "rho", "eta", "k", "D_a", "D_i", "beta", "zeta0"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.weight_sign not in (-1.0, 1.0):
            raise ValueError("weight_sign must be -1 or +1")
        if self.s <= 0 or self.zeta_width <= 0:
            raise ValueError("s and zeta_width must be positive")
        if self.c0 != 0:
            raise ValueError("spontaneous curvature is fixed to 0")

    @property
    def mobility(self) -> float:
        return self.eps ** self.alpha

    def replace(self, **kw) -> "ModelParams":
        return dataclasses.replace(self, **kw)


@dataclass
class EnergyReport:
    kinetic: float = 0.0
    GL_m: float = 0.0
    GL_c: float = 0.0
    Willmore_m: float = 0.0
    Willmore_c: float = 0.0
    coupling: float = 0.0
    dissipation: float = 0.0

    @property
    def free(self) -> float:
        return self.GL_m + self.GL_c + self.Willmore_m + self.Willmore_c + self.coupling

    @property
    def total(self) -> float:
        return self.kinetic + self.free

    COLUMNS = ("t", "kinetic", "GL_m", "GL_c", "Willmore_m", "Willmore_c", "coupling", "total",
               "dissipation_estimate")

    def row(self, t: float) -> list:
        return [t, self.kinetic, self.GL_m, self.GL_c, self.Willmore_m, self.Willmore_c,
                self.coupling, self.total, self.dissipation]


class EnergyLog:
    """Append-only CSV time series of energy reports."""

    def __init__(self, path):
        self.path = Path(path)
        with open(self.path, "w", newline="") as fh:
            csv.writer(fh).writerow(EnergyReport.COLUMNS)

    def append(self, t: float, rep: EnergyReport) -> None:
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([repr(float(v)) for v in rep.row(t)])


# -- pointwise pieces -------------------------------------------------------------

def double_well(phi, order: int = 0):
    """``W = (phi^2 - 1)^2 / 4`` and its derivatives up to order 5."""
    phi = np.asarray(phi)
    if order == 0:
        return 0.25 * (phi * phi - 1) ** 2
    if order == 1:
        return phi ** 3 - phi
    if order == 2:
        return 3 * phi * phi - 1
    if order == 3:
        return 6 * phi
    if order == 4:
        return np.full_like(phi, 6.0, dtype=np.result_type(phi, float))
    if order == 5:
        return np.zeros_like(phi, dtype=np.result_type(phi, float))
    raise ValueError("double_well derivatives are provided up to order 5")


def _kind(f: ScalarField) -> str:
    return f.grid.default_kind()


def _h(f):
    return f.grid.spacing


def gl_density(phi: ScalarField, p: ModelParams) -> ScalarField:
    a = phi.values
    e = 0.5 * p.eps * fd.face_grad_sq(a, _kind(phi), _h(phi)) + double_well(a) / p.eps
    return ScalarField(phi.grid, e)


def gl_energy(phi: ScalarField, p: ModelParams, sigma: float = 1.0) -> float:
    return sigma * fd.integrate(gl_density(phi, p))


def _mu(a, kind, h, eps):
    return -eps * fd.weighted_laplacian(a, None, kind, h) + double_well(a, 1) / eps


def chemical_potential(phi: ScalarField, p: ModelParams) -> ScalarField:
    """``-eps lap phi + W'(phi)/eps``, the L2 gradient of the GL energy."""
    return ScalarField(phi.grid, _mu(phi.values, _kind(phi), _h(phi), p.eps))


def willmore_energy(phi: ScalarField, p: ModelParams, b: float = 1.0) -> float:
    mu = _mu(phi.values, _kind(phi), _h(phi), p.eps)
    return b / (2 * p.eps) * float(np.sum(mu * mu)) * phi.grid.cell_volume


def willmore_gradient(phi: ScalarField, p: ModelParams, b: float = 1.0) -> ScalarField:
    """``b (-lap mu + W''(phi) mu / eps^2)`` with the same stencil as ``mu``."""
    a, kind, h = phi.values, _kind(phi), _h(phi)
    mu = _mu(a, kind, h, p.eps)
    g = -fd.weighted_laplacian(mu, None, kind, h) + double_well(a, 2) * mu / p.eps ** 2
    return ScalarField(phi.grid, b * g)


def _normal(a, kind, h, p):
    g = fd.grad_valid(fd.pad(a, kind, 1), h)
    gn = np.sqrt(np.sum(g * g, axis=0))
    floor = p.grad_floor / (p.eps * SQRT2)
    ok = gn > floor
    n = np.where(ok, g / np.where(ok, gn, 1.0), 0.0)
    return n, gn, ok


def diffuse_normal_and_curvature(phi: ScalarField, p: ModelParams) -> tuple:
    """``n = grad phi/|grad phi|`` (0 where the gradient is degenerate) and
    ``H_phi = |grad phi| mu``."""
    n, gn, _ = _normal(phi.values, _kind(phi), _h(phi), p)
    mu = _mu(phi.values, _kind(phi), _h(phi), p.eps)
    return VectorField(phi.grid, n), ScalarField(phi.grid, gn * mu)


# -- linker coupling ----------------------------------------------------------------

def coupling_weight(x, y, n, p: ModelParams) -> np.ndarray:
    """``omega_hat exp(sign (r-1)^2/s^2)`` with ``r = (x-y).n/|x-y|``."""
    x, y, n = (np.asarray(v, float) for v in (x, y, n))
    dxy = x - y
    dist = np.linalg.norm(dxy, axis=-1)
    if np.any(dist == 0):
        raise ValueError("coupling weight is undefined for x = y")
    r = np.sum(dxy * n, axis=-1) / dist
    return p.omega_hat * np.exp(p.weight_sign * (r - 1.0) ** 2 / p.s ** 2)


@dataclass
class CouplingState:
    """Inner integrals of the coupling energy on the two tubes.

    ``e_m`` and ``e_c`` are the tapered densities entering the double
    integral and ``de_m``, ``de_c`` their derivatives in the raw density.
    ``P`` lives on membrane cells (the integral over the cortex tube),
    ``Q``, ``Qc`` and ``Qn`` on cortex cells (integrals over the membrane
    tube of the density, its ``c_a``-derivative and its ``n``-gradient).
    All are zero outside their tube masks.
    """

    e_m: np.ndarray
    e_c: np.ndarray
    de_m: np.ndarray
    de_c: np.ndarray
    mask_m: np.ndarray
    mask_c: np.ndarray
    n_c: np.ndarray
    gnorm_c: np.ndarray
    nmask_c: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    Qc: np.ndarray
    Qn: np.ndarray
    cutoff: float


def tube_mask(e: np.ndarray, cutoff_rel: float) -> np.ndarray:
    emax = float(e.max()) if e.size else 0.0
    if emax <= 0:
        return np.zeros(e.shape, bool)
    return e > cutoff_rel * emax


def tube_taper(e: np.ndarray, cutoff: float) -> tuple:
    """``e s(e/c)`` with a C2 ramp ``s`` from 0 at ``e = c`` to 1 at
    ``e = 2c``, and its derivative in ``e``.

    Tapering instead of masking keeps the coupling energy differentiable
    when cells cross the tube boundary.
    """
    t = e / cutoff
    x = np.clip(t - 1.0, 0.0, 1.0)
    s = x ** 3 * (10 - 15 * x + 6 * x * x)
    ds = 30 * x * x * (1 - x) ** 2
    return e * s, s + t * ds


def tube_cutoff(p: ModelParams) -> float:
    """Absolute density cutoff: ``cutoff_rel`` times the optimal-profile peak ``1/(2 eps)``."""
    return p.cutoff_rel / (2 * p.eps)


def coupling_state(phi_m: ScalarField, phi_c: ScalarField, c_a: ScalarField, p: ModelParams) -> CouplingState:
    grid = phi_m.grid
    if phi_c.grid != grid or c_a.grid != grid:
        raise ValueError("coupling fields must share one grid")
    cut = tube_cutoff(p)
    e_m, de_m = tube_taper(gl_density(phi_m, p).values, cut)
    e_c, de_c = tube_taper(gl_density(phi_c, p).values, cut)
    n_c, gn, nok = _normal(phi_c.values, _kind(phi_c), _h(phi_c), p)
    mask_m = e_m > 0
    mask_c = (e_c > 0) & (c_a.values != 0)
    pts = grid.points()
    xs = np.ascontiguousarray(pts[mask_c])
    ys = np.ascontiguousarray(pts[mask_m])
    ns = np.ascontiguousarray(np.moveaxis(n_c, 0, -1)[mask_c])
    zeros = np.zeros(grid.shape)
    P, Q, Qc = zeros.copy(), zeros.copy(), zeros.copy()
    Qn = np.zeros((grid.dim,) + grid.shape)
    if len(xs) and len(ys) and p.k > 0:
        q, qc, qn, pp = coupling_sums(xs, ns, np.ascontiguousarray(e_c[mask_c]),
                                      np.ascontiguousarray(c_a.values[mask_c]), ys,
                                      np.ascontiguousarray(e_m[mask_m]), p.k, p.omega_hat, p.s,
                                      float(p.weight_sign), grid.cell_volume)
        Q[mask_c], Qc[mask_c], P[mask_m] = q, qc, pp
        for a in range(grid.dim):
            Qn[a][mask_c] = qn[:, a]
    return CouplingState(e_m, e_c, de_m, de_c, mask_m, mask_c, n_c, gn, nok, P, Q, Qc, Qn, cut)


def coupling_energy(phi_m, phi_c, c_a, p: ModelParams, state: CouplingState | None = None) -> float:
    """Double integral of ``e(phi_m)(y) (k/2) e(phi_c)(x) |x-y|^2 c_a(x) omega``."""
    cs = coupling_state(phi_m, phi_c, c_a, p) if state is None else state
    return float(np.sum(cs.e_c * cs.Q)) * phi_m.grid.cell_volume


def coupling_gradient_membrane(phi_m, phi_c, c_a, p: ModelParams, state: CouplingState | None = None) -> ScalarField:
    """``mu(phi_m) C0 - eps grad phi_m . grad C0`` in conservative form."""
    cs = coupling_state(phi_m, phi_c, c_a, p) if state is None else state
    a, kind, h = phi_m.values, _kind(phi_m), _h(phi_m)
    w = cs.P * cs.de_m
    g = -p.eps * fd.weighted_laplacian(a, w, kind, h) + double_well(a, 1) * w / p.eps
    return ScalarField(phi_m.grid, g)


def _normal_variation(phi_c: ScalarField, cs: CouplingState) -> np.ndarray:
    """Adjoint of the normal's dependence on ``phi_c``: ``G^T (e_c P_n Qn / |grad phi_c|)``."""
    grid = phi_c.grid
    n = cs.n_c
    qn_dot_n = np.sum(cs.Qn * n, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        V = np.where(cs.nmask_c, cs.e_c * (cs.Qn - qn_dot_n * n) / cs.gnorm_c, 0.0)
    out = np.zeros(grid.size)
    for a, G in enumerate(fd.central_gradient_matrices(grid)):
        out += G.T @ V[a].ravel()
    return out.reshape(grid.shape)


def coupling_gradient_cortex_terms(phi_m, phi_c, c_a, p: ModelParams, state: CouplingState | None = None) -> dict:
    """The cortex gradient split into the density part ``CD`` (first two
    terms, conservative form) and the normal-variation part ``E``."""
    cs = coupling_state(phi_m, phi_c, c_a, p) if state is None else state
    a, kind, h = phi_c.values, _kind(phi_c), _h(phi_c)
    w = cs.Q * cs.de_c
    cd = -p.eps * fd.weighted_laplacian(a, w, kind, h) + double_well(a, 1) * w / p.eps
    return {"CD": cd, "E": _normal_variation(phi_c, cs)}


def coupling_gradient_cortex(phi_m, phi_c, c_a, p: ModelParams, state: CouplingState | None = None) -> ScalarField:
    t = coupling_gradient_cortex_terms(phi_m, phi_c, c_a, p, state)
    return ScalarField(phi_c.grid, t["CD"] + t["E"])


def species_force_terms(phi_c: ScalarField, c_a: ScalarField, p: ModelParams, cs: CouplingState) -> tuple:
    """The two force contributions carried by the active linkers.

    ``G = -c_a H_phi_c Qc n_c`` and ``H = -e_c c_a P_n grad Qc``.
    """
    kind, h = _kind(phi_c), _h(phi_c)
    mu = _mu(phi_c.values, kind, h, p.eps)
    Hphi = cs.gnorm_c * mu
    G = -c_a.values * Hphi * cs.Qc * cs.n_c
    gq = fd.grad_valid(fd.pad(cs.Qc, kind, 1), h)
    gq_t = gq - np.sum(gq * cs.n_c, axis=0) * cs.n_c
    Hf = -cs.e_c * c_a.values * gq_t
    return G, Hf


# -- force and energies of a state ----------------------------------------------------

def _grad_central(a, kind, h):
    return fd.grad_valid(fd.pad(a, kind, 1), h)


def surface_gradient(phi: ScalarField, p: ModelParams, sigma: float, b: float) -> np.ndarray:
    g = sigma * chemical_potential(phi, p).values
    if b:
        g = g + willmore_gradient(phi, p, b).values
    return g


def free_energy_gradients(state, p: ModelParams, cs: CouplingState | None = None) -> tuple:
    """L2 gradients of the free energy in ``phi_m`` and ``phi_c``."""
    gm = surface_gradient(state.phi_m, p, p.sigma_m, p.b_m)
    gc = surface_gradient(state.phi_c, p, p.sigma_c, p.b_c)
    if cs is not None:
        gm = gm + coupling_gradient_membrane(state.phi_m, state.phi_c, state.c_a, p, cs).values
        gc = gc + coupling_gradient_cortex(state.phi_m, state.phi_c, state.c_a, p, cs).values
    return gm, gc


def _needs_coupling(state, p):
    return p.k > 0 and np.any(state.c_a.values != 0)


def force_K(state, p: ModelParams, cs: CouplingState | None = None) -> VectorField:
    """Cell-centred force of the momentum balance."""
    grid = state.phi_m.grid
    kind = grid.default_kind()
    if cs is None and _needs_coupling(state, p):
        cs = coupling_state(state.phi_m, state.phi_c, state.c_a, p)
    gm, gc = free_energy_gradients(state, p, cs)
    K = gm * _grad_central(state.phi_m.values, kind, grid.spacing)
    K = K + gc * _grad_central(state.phi_c.values, kind, grid.spacing)
    if cs is not None:
        G, Hf = species_force_terms(state.phi_c, state.c_a, p, cs)
        K = K + G + Hf
    return VectorField(grid, K)


def kinetic_energy(u: VectorField, p: ModelParams) -> float:
    return 0.5 * p.rho * float(np.sum(u.values ** 2)) * u.grid.cell_volume


def total_energy(state, p: ModelParams, cs: CouplingState | None = None, dissipation: bool = True) -> EnergyReport:
    grid = state.phi_m.grid
    rep = EnergyReport(
        kinetic=kinetic_energy(state.u, p),
        GL_m=gl_energy(state.phi_m, p, p.sigma_m),
        GL_c=gl_energy(state.phi_c, p, p.sigma_c),
        Willmore_m=willmore_energy(state.phi_m, p, p.b_m) if p.b_m else 0.0,
        Willmore_c=willmore_energy(state.phi_c, p, p.b_c) if p.b_c else 0.0,
    )
    if cs is None and _needs_coupling(state, p):
        cs = coupling_state(state.phi_m, state.phi_c, state.c_a, p)
    if cs is not None:
        rep.coupling = coupling_energy(state.phi_m, state.phi_c, state.c_a, p, cs)
    if dissipation:
        kind = grid.default_kind()
        h = grid.spacing
        gm, gc = free_energy_gradients(state, p, cs)
        m = p.mobility
        diss = m * (np.sum(fd.face_grad_sq(gm, kind, h)) + np.sum(fd.face_grad_sq(gc, kind, h)))
        ukind = "periodic" if grid.periodic else "dirichlet-zero"
        for comp in state.u.values:
            diss += p.eta * np.sum(fd.face_grad_sq(comp, ukind, h))
        rep.dissipation = float(diss) * grid.cell_volume
    return rep
