"""Verification of the transverse expansion and of the eps -> 0 force limits.

Three groups of tools live here.

* A one-dimensional suite in extended precision: residuals of the profile
  equations, the chemical-potential coefficients and the ``e_k``
  coefficients, all by fourth-order central differences on a uniform
  ``z`` grid.
* Concentration integrals ``eps^-1 int p(d/eps) f`` evaluated on banded
  Cartesian blocks.
* Force-limit studies comparing diffuse force functionals ``int K . psi``
  with sharp surface functionals computed by independent quadrature
  (spectral along 2D curves, cotangent weak form on 3D triangulations).

Conventions: ``H`` is the sum of the principal curvatures returned by
:meth:`Surface.principal_curvatures` and ``nu`` the matching normal, so a
sphere has ``H = -2/R`` with the default orientation.  Sharp tractions are
pure geometry; a diffuse GL or Willmore functional tends to ``Z`` times the
sharp one and a diffuse coupling functional to ``factor`` times it.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from . import energies as en
from . import fields as fd
from .energies import ModelParams, double_well
from .fields import Grid, ScalarField
from .geometry import (Ellipsoid, Profile, Surface, Torus, default_delta, optimal_profile,
                       triangulate)

SQRT2 = np.sqrt(2.0)
Z_EXACT = 2.0 * SQRT2 / 3.0
LD = np.longdouble

# diffuse / sharp factors for the coupling force terms
FACTORS = {
    "paper": {"coupling_AB": 1.5 * Z_EXACT ** 2, "coupling_CD": 1.5 * Z_EXACT ** 2,
              "coupling_G": 1.5 * Z_EXACT ** 2, "coupling_H": (1.5 * Z_EXACT) ** 2,
              "coupling_E": (1.5 * Z_EXACT) ** 2},
    "derived": {k: Z_EXACT ** 2 for k in ("coupling_AB", "coupling_CD", "coupling_G",
                                           "coupling_H", "coupling_E")},
}
SHARP_TERM = {"coupling_AB": "I", "coupling_CD": "J", "coupling_G": "K", "coupling_H": "L",
              "coupling_E": "M"}
KINDS = ("gl", "willmore") + tuple(SHARP_TERM)


# =============================================================================
# one-dimensional suite
# =============================================================================

def d1(f: np.ndarray, h) -> np.ndarray:
    """Fourth-order first derivative; the result loses two nodes per side."""
    return (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * h)


def d2(f: np.ndarray, h) -> np.ndarray:
    """Fourth-order second derivative; loses two nodes per side."""
    return (-f[:-4] + 16 * f[1:-3] - 30 * f[2:-2] + 16 * f[3:-1] - f[4:]) / (12 * h * h)


def _trim(a: np.ndarray, n: int) -> np.ndarray:
    return a[n:len(a) - n] if n else a


def _align(*arrays):
    """Trim centred arrays to the shortest length."""
    m = min(len(a) for a in arrays)
    return [_trim(a, (len(a) - m) // 2) for a in arrays]


def profile_ode_residual(phi: Profile) -> Profile:
    """``g = (phi'' - W'(phi))'' - (phi'' - W'(phi)) W''(phi)``.

    Evaluated with fourth-order stencils; the returned profile covers the
    nodes where all stencils fit (four fewer per side).
    """
    h = phi.h
    v = phi.values
    f = d2(v, h) - double_well(_trim(v, 2), 1)
    g = d2(f, h) - _trim(f, 2) * double_well(_trim(v, 4), 2)
    return Profile(_trim(phi.z, 4), g)


def z_constant(z_max: float = 20.0, h: float = 1e-3) -> float:
    """``int (phi_0')^2 dz`` by the composite Simpson rule in extended precision."""
    z = Profile.grid(z_max, h, LD)
    if len(z) % 2 == 0:
        raise ValueError("Simpson rule needs an odd node count")
    _, dphi, _, _ = optimal_profile(z)
    f = dphi * dphi
    w = np.ones(len(z), dtype=LD)
    w[1:-1:2] = 4
    w[2:-1:2] = 2
    return float(np.sum(w * f) * LD(h) / 3)


def s1_residual(s1: Profile, phi0: Profile) -> Profile:
    """Residual of ``s1'' - s1 W''(phi_0) - phi_0''``."""
    h = s1.h
    r = d2(s1.values, h) - _trim(s1.values, 2) * double_well(_trim(phi0.values, 2), 2) \
        - d2(phi0.values, h)
    return Profile(_trim(s1.z, 2), r)


def s1_check(z_max: float = 10.0, h: float = 1e-3, factor: float = 0.5) -> float:
    """Sup-norm residual of the ansatz ``s1 = factor * phi_0' z``."""
    z = Profile.grid(z_max, h, LD)
    phi, dphi, _, _ = optimal_profile(z)
    return s1_residual(Profile(z, LD(factor) * dphi * z), Profile(z, phi)).sup()


def _solve_phi2(z: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Odd decaying solution of ``-phi'' + W''(phi_0) phi = rhs`` (fourth order).

    Solved on ``z >= 0`` with ``phi(0) = 0`` and odd reflection, which
    removes the even kernel ``phi_0'`` and keeps the system well posed.
    ``rhs`` must be odd.
    """
    zf = np.asarray(z, float)
    h = zf[1] - zf[0]
    mid = len(zf) // 2
    zp = zf[mid:]
    m = len(zp) - 1                    # unknowns at nodes 1..m-1, zero at 0 and m
    w2 = double_well(np.tanh(zp[1:m] / SQRT2), 2)
    c = 1.0 / (12 * h * h)
    coef = {-2: c, -1: -16 * c, 0: 30 * c, 1: -16 * c, 2: c}
    n = m - 1
    A = sp.lil_matrix((n, n))
    for i in range(1, m):
        A[i - 1, i - 1] += w2[i - 1]
        for off, cv in coef.items():
            j = i + off
            if j < 0:                  # odd reflection through z = 0
                A[i - 1, -j - 1] -= cv
            elif j == 0 or j == m:
                continue
            elif j > m:                # odd reflection through z = z_max
                A[i - 1, 2 * m - j - 1] -= cv
            else:
                A[i - 1, j - 1] += cv
    sol = spla.spsolve(A.tocsc(), np.asarray(rhs, float)[mid + 1:mid + m])
    half = np.concatenate([[0.0], sol, [0.0]])
    return np.concatenate([-half[:0:-1], half])


@dataclass
class ExpansionSeries:
    """Inner-expansion coefficient profiles for one surface point.

    ``phi[k]`` holds the profile of order ``k`` (order 1 is identically
    zero), ``mu[k]`` the chemical-potential coefficients for
    ``k = -1..2`` and ``e[k]`` the gradient coefficients for ``k = -3..-1``.
    ``H`` and ``K`` are the curvatures at the surface point.
    """

    z: np.ndarray
    H: float
    K: float
    phi: dict = field(default_factory=dict)
    mu: dict = field(default_factory=dict)
    e: dict = field(default_factory=dict)
    s1: Profile | None = None

    @property
    def h(self):
        return self.z[1] - self.z[0]

    def profile(self, group: str, k: int) -> Profile:
        vals = getattr(self, group)[k]
        n = (len(self.z) - len(vals)) // 2
        return Profile(_trim(self.z, n), vals)


def mu_expansion(series: ExpansionSeries) -> dict:
    """Chemical-potential coefficients with ``phi_1 = 0``.

    ``mu_-1 = -phi_0'' + W'(phi_0)``, ``mu_0 = phi_0' H``,
    ``mu_1 = -phi_2'' + W''(phi_0) phi_2`` and
    ``mu_2 = phi_2' H - phi_3'' + W''(phi_0) phi_3``.
    """
    h = series.h
    p0 = series.phi[0]
    p2 = series.phi.get(2, np.zeros_like(p0))
    p3 = series.phi.get(3, np.zeros_like(p0))
    if np.any(series.phi.get(1, 0) != 0):
        raise ValueError("the series must have phi_1 = 0")
    w2 = double_well(_trim(p0, 2), 2)
    H = LD(series.H)
    mu = {
        -1: -d2(p0, h) + double_well(_trim(p0, 2), 1),
        0: d1(p0, h) * H,
        1: -d2(p2, h) + w2 * _trim(p2, 2),
        2: d1(p2, h) * H - d2(p3, h) + w2 * _trim(p3, 2),
    }
    return mu


def e_coefficients(series: ExpansionSeries) -> dict:
    """Coefficients ``e_-3, e_-2, e_-1`` of the inner Willmore-gradient expansion.

    ``e_-3 = -mu_-1'' + W'' mu_-1``,
    ``e_-2 = H mu_-1' - mu_0'' + W'' mu_0`` and
    ``e_-1 = H^2 phi_0'' - 2 phi_0'' (H^2 - 2K) - mu_1'' + W'' mu_1``,
    where the last uses the normal derivative of the extended mean
    curvature at the surface.
    """
    h = series.h
    p0 = series.phi[0]
    mu = series.mu
    H, K = LD(series.H), LD(series.K)

    def lin(m):
        # -m'' + W''(phi_0) m on the matching nodes
        n = (len(p0) - len(m)) // 2
        return -d2(m, h) + double_well(_trim(p0, n + 2), 2) * _trim(m, 2)

    e3 = lin(mu[-1])
    a, b = _align(H * d1(mu[-1], h), lin(mu[0]))
    e2 = a + b
    m1 = lin(mu[1])
    dd0 = d2(p0, h)
    dd0, m1 = _align(dd0, m1)
    e1 = H * H * dd0 - 2 * dd0 * (H * H - 2 * K) + m1
    return {-3: e3, -2: e2, -1: e1}


def expansion_series(H: float, K: float, z_max: float = 10.0, h: float = 1e-3) -> ExpansionSeries:
    """Build the series with ``phi_1 = 0``, ``phi_3 = 0`` and the ``mu_1`` ansatz.

    ``mu_1 = -(H^2 - 4K) phi_0' z / 2`` is evaluated in closed form.
    ``phi_2`` is the odd solution of ``-phi_2'' + W'' phi_2 = mu_1``
    (double precision solve) and enters ``mu_2``.
    """
    z = Profile.grid(z_max, h, LD)
    phi0, dphi0, _, _ = optimal_profile(z)
    s = ExpansionSeries(z, float(H), float(K))
    a = -LD(0.5) * (LD(H) ** 2 - 4 * LD(K))
    s.phi = {0: phi0, 1: np.zeros_like(phi0), 3: np.zeros_like(phi0)}
    s.phi[2] = np.asarray(_solve_phi2(z, np.asarray(a * dphi0 * z, float)), dtype=LD)
    s.mu = mu_expansion(s)
    s.mu[1] = _trim(a * dphi0 * z, 2)
    s.e = e_coefficients(s)
    s.s1 = Profile(z, LD(0.5) * dphi0 * z)
    return s


def profile_suite(curvatures=((0.0, 0.0), (2.0, 1.0), (2 / 0.3, 1 / 0.09)),
                  z_max: float = 10.0, h: float = 1e-3) -> dict:
    """All one-dimensional checks as a flat dictionary of sup-norms."""
    z = Profile.grid(z_max, h, LD)
    phi0 = optimal_profile(z)[0]
    out = {"g_sup": profile_ode_residual(Profile(z, phi0)).sup(),
           "s1_residual": s1_check(z_max, h),
           "Z": z_constant(),
           "tail": float(1 - phi0[-1])}
    for H, K in curvatures:
        s = expansion_series(H, K, z_max, h)
        tag = f"H={H:.6g},K={K:.6g}"
        out[f"e-2[{tag}]"] = float(np.max(np.abs(s.e[-2])))
        out[f"e-1[{tag}]"] = float(np.max(np.abs(s.e[-1])))
    return out


# =============================================================================
# study container
# =============================================================================

@dataclass
class ConvergenceStudy:
    name: str
    eps: list
    measured: list
    reference: float
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        e = np.asarray(self.eps, float)
        if len(e) > 1 and not np.all(np.diff(e) < 0):
            raise ValueError("eps sequence must be strictly decreasing")
        if not np.all(np.isfinite(self.measured)):
            raise ValueError("non-finite measurement")

    @property
    def abs_errors(self) -> np.ndarray:
        return np.abs(np.asarray(self.measured, float) - self.reference)

    @property
    def errors(self) -> np.ndarray:
        """Relative errors, or absolute ones when the reference is zero."""
        if self.reference == 0:
            return self.abs_errors
        return self.abs_errors / abs(self.reference)

    @property
    def order(self) -> float:
        e = self.errors
        if len(e) < 2 or np.any(e <= 0):
            return float("nan")
        return float(np.polyfit(np.log(self.eps), np.log(e), 1)[0])

    def extrapolate(self, degree: int | None = None) -> float:
        """Value at ``eps = 0`` from a polynomial fit in ``eps``."""
        e = np.asarray(self.eps, float)
        deg = min(len(e) - 1, 2) if degree is None else degree
        return float(np.polyval(np.polyfit(e, self.measured, deg), 0.0))

    def power_limit(self) -> float:
        """Limit ``a`` of ``a + c eps^q`` through the last three values, with
        ``q`` solved from the data alone; falls back to :meth:`extrapolate`
        when the differences are not monotone."""
        if len(self.eps) < 3:
            return self.extrapolate()
        e1, e2, e3 = map(float, self.eps[-3:])
        m1, m2, m3 = map(float, self.measured[-3:])
        if (m1 - m2) * (m2 - m3) <= 0:
            return self.extrapolate()
        target = (m1 - m2) / (m2 - m3)
        g = lambda q: (e1 ** q - e2 ** q) / (e2 ** q - e3 ** q) - target
        try:
            q = brentq(g, 0.05, 12.0)
        except ValueError:
            return self.extrapolate()
        return m3 - (m2 - m3) / ((e2 / e3) ** q - 1)

    def summary(self) -> dict:
        return {"name": self.name, "eps": list(map(float, self.eps)),
                "measured": list(map(float, self.measured)), "reference": float(self.reference),
                "errors": list(map(float, self.errors)), "order": self.order,
                **{k: v for k, v in self.extra.items()}}

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eps", "measured", "reference", "rel_error"])
            for e, m, r in zip(self.eps, self.measured, self.errors):
                w.writerow([repr(float(e)), repr(float(m)), repr(float(self.reference)), repr(float(r))])
        return path

    def to_json(self, path, extra: dict | None = None) -> Path:
        path = Path(path)
        data = self.summary()
        if extra:
            data.update(extra)
        path.write_text(json.dumps(data, indent=2, default=float))
        return path


# =============================================================================
# banded evaluation of diffuse integrals
# =============================================================================

def _bbox(S: Surface) -> tuple:
    pts = S.quadrature(64).points
    return pts.min(axis=0), pts.max(axis=0)


def band_grid(S: Surface, h: float, margin: float, symmetric: bool = False) -> Grid:
    """Grid of spacing ``h`` covering ``S`` plus ``margin``.

    With ``symmetric`` the grid covers only the positive orthant about the
    surface centre (cell faces on the symmetry planes).
    """
    lo, hi = _bbox(S)
    c = np.asarray(S.center, float)
    if symmetric:
        ext = np.maximum(hi - c, c - lo) + margin
        n = np.ceil(ext / h).astype(int)
        return Grid(tuple(n * h), tuple(n), "physical", origin=tuple(c))
    lo, hi = lo - margin, hi + margin
    n = np.ceil((hi - lo) / h).astype(int)
    mid = 0.5 * (lo + hi)
    return Grid(tuple(n * h), tuple(n), "physical", origin=tuple(mid - 0.5 * n * h))


def _kernel_cut(p: Callable, tol: float = 1e-6) -> float:
    """Smallest ``z`` with kernel mass beyond ``|z|`` below ``tol`` of the total."""
    z = np.linspace(-40, 40, 160001)
    a = np.abs(p(z))
    tot = np.sum(a)
    if tot == 0:
        return 0.0
    order = np.argsort(np.abs(z))
    tail = tot - np.cumsum(a[order])
    i = np.argmax(tail <= tol * tot)
    return float(abs(z[order][i]))


def concentration_limit(p: Callable, f: Callable, S: Surface, eps: float, ratio: float = 5.0,
                        block: int = 32) -> float:
    """Diffuse integral ``eps^-1 int p(d/eps) f dx`` on a banded grid of
    spacing ``eps/ratio``; ``p`` acts on arrays of ``z``, ``f`` on points."""
    zc = _kernel_cut(p)
    half = zc * eps
    if half > default_delta(S, eps):
        raise ValueError(f"eps={eps} too large: the kernel tube {half:.3g} exceeds the "
                         f"uniqueness tube {default_delta(S, eps):.3g}")
    h = eps / ratio
    grid = band_grid(S, h, half + 2 * h)
    total = 0.0
    for b in fd.iter_band_blocks(grid, S.signed_distance, half, block, halo=0):
        pts = np.stack(np.meshgrid(*b.axes, indexing="ij"), -1)
        d = S.signed_distance(pts)
        inside = np.abs(d) <= half
        if inside.any():
            total += float(np.sum(p(d[inside] / eps) * f(pts[inside])))
    return total * grid.cell_volume / eps


def concentration_reference(p: Callable, f: Callable, S: Surface, n: int = 200) -> float:
    """``(int p dz) (int_S f)`` by 1D Simpson and surface quadrature."""
    z = np.linspace(-40, 40, 160001)
    w = np.ones_like(z)
    w[1:-1:2], w[2:-1:2] = 4, 2
    mass = float(np.sum(w * p(z)) * (z[1] - z[0]) / 3)
    q = S.quadrature(n)
    return mass * float(np.sum(q.weights * f(q.points)))


def concentration_study(p: Callable, f: Callable, S: Surface, eps_seq=(0.04, 0.02, 0.01),
                        ratio: float = 5.0) -> ConvergenceStudy:
    ref = concentration_reference(p, f, S)
    vals = [concentration_limit(p, f, S, e, ratio) for e in eps_seq]
    return ConvergenceStudy("concentration", list(eps_seq), vals, ref, {"ratio": ratio})


def _block_points(b: fd.Block) -> np.ndarray:
    return np.stack(np.meshgrid(*b.axes, indexing="ij"), -1)


def _inner(a: np.ndarray, n: int, nd: int | None = None) -> np.ndarray:
    """Strip ``n`` layers from the first ``nd`` (default all) axes."""
    nd = a.ndim if nd is None else nd
    return a[(slice(n, -n),) * nd] if n else a


def _force_blocks(S: Surface, eps: float, h: float, psi: Callable, integrand: str,
                  symmetric: bool, tube: float, block: int) -> float:
    half = tube * eps
    grid = band_grid(S, h, half + 2 * h, symmetric)
    hh = grid.spacing
    total = 0.0
    for b in fd.iter_band_blocks(grid, S.signed_distance, half, block, halo=2):
        pts = _block_points(b)
        q, d = S.closest(pts)
        phi = np.tanh(d / (eps * SQRT2))
        mu = -eps * fd.lap_valid(phi, hh) + double_well(_inner(phi, 1), 1) / eps
        grad = fd.grad_valid(_inner(phi, 1), hh)
        nd = S.dim
        core = _inner(pts, 2, nd)
        ps = np.moveaxis(psi(core, _inner(q, 2, nd)) if _wants_projection(psi) else psi(core), -1, 0)
        proj = np.sum(grad * ps, axis=0)
        if integrand == "gl":
            g = _inner(mu, 1)
        else:
            g = -fd.lap_valid(mu, hh) + double_well(_inner(phi, 2), 2) * _inner(mu, 1) / eps ** 2
        total += float(np.sum(g * proj))
    return total * grid.cell_volume * (2 ** S.dim if symmetric else 1)


def _wants_projection(psi) -> bool:
    return getattr(psi, "needs_projection", False)


def normal_extended(component: Callable, S: Surface) -> Callable:
    """Test field ``psi(x) = g(P x) nu(P x)`` with ``g = component``.

    Its normal component is constant along normal lines.  The returned
    callable takes ``(points, projections)``.
    """
    def psi(x, q):
        return component(q)[..., None] * S.normal(q)
    psi.needs_projection = True
    psi.surface = S
    psi.component = component
    return psi


def _eval_psi(psi, pts, S):
    if _wants_projection(psi):
        return psi(pts, S.project(pts))
    return psi(pts)


def richardson(values, ratio: float = 2.0, order: int = 2) -> float:
    """Repeated Richardson extrapolation for errors in powers ``h^order, h^2order``."""
    v = [float(x) for x in values]
    p = order
    while len(v) > 1:
        f = ratio ** p
        v = [(f * v[i + 1] - v[i]) / (f - 1) for i in range(len(v) - 1)]
        p += order
    return v[0]


def resolution(eps: float, eps_ref: float, ratio: float, law: float = 0.0) -> float:
    """Grid spacing ``h = (eps/ratio) (eps/eps_ref)^law``."""
    return eps / ratio * (eps / eps_ref) ** law


# -- sharp oracles -----------------------------------------------------------------

def _curve_quadrature(S: Surface, n: int):
    q = S.quadrature(n)
    if q.param is None:
        raise ValueError("curve quadrature needs a 2D surface")
    return q


def _spectral_ds(f: np.ndarray, speed: np.ndarray) -> np.ndarray:
    n = len(f)
    k = np.fft.fftfreq(n, 1.0 / n)
    if n % 2 == 0:
        k[n // 2] = 0.0
    shape = (n,) + (1,) * (f.ndim - 1)
    df = np.real(np.fft.ifft(1j * k.reshape(shape) * np.fft.fft(f, axis=0), axis=0))
    return df / speed.reshape(shape)


def cotangent_stiffness(v: np.ndarray, f: np.ndarray) -> sp.csr_matrix:
    """Cotangent matrix ``L`` with ``a^T L b = -int grad a . grad b``."""
    n = len(v)
    rows, cols, vals = [], [], []
    for k in range(3):
        i, j, o = f[:, k], f[:, (k + 1) % 3], f[:, (k + 2) % 3]
        a, b = v[i] - v[o], v[j] - v[o]
        cot = np.sum(a * b, 1) / np.linalg.norm(np.cross(a, b), axis=1)
        rows += [i, j]
        cols += [j, i]
        vals += [0.5 * cot, 0.5 * cot]
    L = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    return L - sp.diags(np.asarray(L.sum(axis=1)).ravel())


def lumped_areas(v: np.ndarray, f: np.ndarray) -> np.ndarray:
    area = 0.5 * np.linalg.norm(np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]]), axis=1)
    out = np.zeros(len(v))
    for k in range(3):
        np.add.at(out, f[:, k], area / 3)
    return out


@dataclass
class SurfaceTraction:
    """Sharp traction terms at surface nodes; ``functional(psi)`` is
    ``sum_i w_i t_i . psi(x_i)`` per term."""

    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    terms: dict

    def functional(self, psi: Callable, term: str | None = None) -> float:
        pv = psi(self.points, self.points) if _wants_projection(psi) else psi(self.points)
        names = self.terms if term is None else [term]
        return float(sum(np.sum(self.weights * np.sum(self.terms[t] * pv, -1)) for t in names))

    def total(self) -> np.ndarray:
        return sum(self.terms.values())


def willmore_integrand_nodes(S: Surface, level: int = 6):
    """Mesh nodes, normals, lumped weights and ``2 Lap_S H + H (H^2 - 4K)``."""
    if S.dim == 2:
        q = _curve_quadrature(S, 2 ** (level + 5))
        k = S.principal_curvatures(q.points)
        H = k.sum(-1)
        Hss = _spectral_ds(_spectral_ds(H, q.speed), q.speed)
        return q.points, q.normals, q.weights, 2 * Hss + H ** 3
    v, f = triangulate(S, level)
    k = S.principal_curvatures(v)
    H, K = k.sum(-1), np.prod(k, -1)
    A = lumped_areas(v, f)
    lapH = (cotangent_stiffness(v, f) @ H) / A
    return v, S.normal(v), A, 2 * lapH + H * (H * H - 4 * K)


def gl_traction(S: Surface, sigma: float = 1.0, n: int = 256) -> SurfaceTraction:
    q = S.quadrature(n)
    H = S.principal_curvatures(q.points).sum(-1)
    return SurfaceTraction(q.points, q.normals, q.weights, {"GL": sigma * H[:, None] * q.normals})


def willmore_traction(S: Surface, b: float = 1.0, level: int = 6) -> SurfaceTraction:
    """``-(b/2)(2 Lap_S H + H(H^2 - 4K)) nu``."""
    x, nu, w, g = willmore_integrand_nodes(S, level)
    return SurfaceTraction(x, nu, w, {"Willmore": -0.5 * b * g[:, None] * nu})


def stretch_correction(S: Surface, psi: Callable, b: float = 1.0, n: int = 128,
                       step: float = 1e-5) -> float:
    """``(b/2) int (H^2 - 4K) d_nu(psi . nu)``: the part of the diffuse
    Willmore force limit that depends on the normal derivative of ``psi``."""
    q = S.quadrature(n)
    k = S.principal_curvatures(q.points)
    H = k.sum(-1)
    K = np.prod(k, -1) if S.dim == 3 else np.zeros_like(H)
    nu = q.normals
    lo = _eval_psi(psi, q.points - step * nu, S)
    hi = _eval_psi(psi, q.points + step * nu, S)
    dn = np.sum((hi - lo) * nu, -1) / (2 * step)
    return 0.5 * b * float(np.sum(q.weights * (H * H - 4 * K) * dn))


def _pair_kernel(X, N, ca, Y, p: ModelParams):
    """Spring density and its derivatives for all pairs (cortex X, membrane Y)."""
    D = X[:, None, :] - Y[None, :, :]
    rho = np.linalg.norm(D, axis=-1)
    if np.any(rho == 0):
        raise ValueError("surfaces intersect")
    e = D / rho[..., None]
    r = np.sum(D * N[:, None, :], -1) / rho
    om = p.omega_hat * np.exp(p.weight_sign * (r - 1) ** 2 / p.s ** 2)
    dom = om * 2 * p.weight_sign * (r - 1) / p.s ** 2
    dc = 0.5 * p.k * rho ** 2 * om
    c = dc * ca[:, None]
    pre = 0.5 * p.k * ca[:, None, None]
    gx = pre * (2 * rho[..., None] * e * om[..., None]
                + rho[..., None] * dom[..., None] * (N[:, None, :] - r[..., None] * e))
    gn = pre * rho[..., None] ** 2 * dom[..., None] * e
    return c, dc, gx, gn


def sharp_jump_rhs(which: str, membrane: Surface, cortex: Surface, c_a: Callable,
                   p: ModelParams, n: int = 512) -> SurfaceTraction:
    """Sharp traction terms on the membrane (``"membrane"``) or the cortex.

    Membrane terms: ``GL``, ``Willmore`` and ``I`` (the coupling part
    ``(-grad_y C0 . nu + H C0) nu``).  Cortex terms: ``GL``, ``Willmore``,
    ``J`` ``(-grad_x C0 . nu + H C0) nu`` with the partial derivative in
    ``x``, ``K`` ``-dC0/dc H c_a nu``, ``L`` ``-c_a grad_S(dC0/dc)`` and
    ``M`` ``-(div_S G + H G . nu) nu`` with ``G = int grad_n c``.  The
    coupling terms need 2D curves.  ``c_a`` maps cortex points to the
    surface density.
    """
    if which not in ("membrane", "cortex"):
        raise ValueError("which must be 'membrane' or 'cortex'")
    if membrane.dim != 2 or cortex.dim != 2:
        raise NotImplementedError("coupling tractions are provided for 2D curves")
    qm, qc = _curve_quadrature(membrane, n), _curve_quadrature(cortex, n)
    ca = np.asarray(c_a(qc.points), float)
    c, dc, gx, gn = _pair_kernel(qc.points, qc.normals, ca, qm.points, p)
    if which == "membrane":
        q, S, sigma, b = qm, membrane, p.sigma_m, p.b_m
    else:
        q, S, sigma, b = qc, cortex, p.sigma_c, p.b_c
    nu = q.normals
    H = S.principal_curvatures(q.points).sum(-1)
    Hss = _spectral_ds(_spectral_ds(H, q.speed), q.speed)
    terms = {"GL": sigma * H[:, None] * nu, "Willmore": -0.5 * b * (2 * Hss + H ** 3)[:, None] * nu}
    if which == "membrane":
        C0 = np.sum(c * qc.weights[:, None], 0)
        gyC0 = -np.sum(gx * qc.weights[:, None, None], 0)
        terms["I"] = (-np.sum(gyC0 * nu, -1) + H * C0)[:, None] * nu
    else:
        C0 = np.sum(c * qm.weights[None, :], 1)
        gxC0 = np.sum(gx * qm.weights[None, :, None], 1)
        dC0 = np.sum(dc * qm.weights[None, :], 1)
        G = np.sum(gn * qm.weights[None, :, None], 1)
        dX = _spectral_ds(q.points, q.speed)
        tau = dX / np.linalg.norm(dX, axis=-1)[:, None]
        divG = np.sum(tau * _spectral_ds(G, q.speed), -1)
        terms["J"] = (-np.sum(gxC0 * nu, -1) + H * C0)[:, None] * nu
        terms["K"] = (-dC0 * H * ca)[:, None] * nu
        terms["L"] = -(ca * _spectral_ds(dC0, q.speed))[:, None] * tau
        terms["M"] = -(divG + H * np.sum(G * nu, -1))[:, None] * nu
    return SurfaceTraction(q.points, nu, q.weights, terms)


def sharp_force(kind: str, S: Surface, psi: Callable, p: ModelParams, cortex: Surface | None = None,
                c_a: Callable | None = None, level: int = 6, n: int = 512) -> float:
    """Sharp functional for a study kind (geometry only, no ``Z`` factors).

    For ``willmore`` on 3D surfaces the cotangent value is Richardson
    extrapolated from mesh levels ``level`` and ``level - 1``.
    """
    if kind == "gl":
        return gl_traction(S, p.sigma_m, n if S.dim == 2 else 128).functional(psi)
    if kind == "willmore":
        if S.dim == 3:
            v1 = willmore_traction(S, p.b_m, level - 1).functional(psi)
            v2 = willmore_traction(S, p.b_m, level).functional(psi)
            return richardson([v1, v2])
        return willmore_traction(S, p.b_m, level).functional(psi)
    term = SHARP_TERM[kind]
    which = "membrane" if term == "I" else "cortex"
    return sharp_jump_rhs(which, S, cortex, c_a, p, n).functional(psi, term)


# -- diffuse functionals -----------------------------------------------------------

def diffuse_force(kind: str, S: Surface, eps: float, h: float, psi: Callable, p: ModelParams,
                  symmetric: bool = False, tube: float = 7.0, block: int = 32) -> float:
    """``sigma int mu grad phi . psi`` (``gl``) or ``b int gradW grad phi . psi``
    (``willmore``) for the optimal-profile field of ``S``, on banded blocks."""
    if eps < 2 * h:
        raise ValueError("under-resolved interface")
    if kind == "gl":
        return p.sigma_m * _force_blocks(S, eps, h, psi, "gl", symmetric, tube, block)
    if kind == "willmore":
        return p.b_m * _force_blocks(S, eps, h, psi, "willmore", symmetric, tube, block)
    raise ValueError(f"unknown banded kind {kind!r}")


def coupling_setup(membrane: Surface, cortex: Surface, c_a: Callable, eps: float, h: float):
    """Grid, phase fields and the tube-masked normal extension of ``c_a``."""
    lo1, hi1 = _bbox(membrane)
    lo2, hi2 = _bbox(cortex)
    lo, hi = np.minimum(lo1, lo2), np.maximum(hi1, hi2)
    margin = 8 * eps + 2 * h
    n = np.ceil((hi - lo + 2 * margin) / h).astype(int)
    mid = 0.5 * (lo + hi)
    grid = Grid(tuple(n * h), tuple(n), "physical", origin=tuple(mid - 0.5 * n * h))
    pts = grid.points()
    qc, dc = cortex.closest(pts)
    _, dm = membrane.closest(pts)
    pm = ScalarField(grid, np.tanh(dm / (eps * SQRT2)))
    pc = ScalarField(grid, np.tanh(dc / (eps * SQRT2)))
    ca = np.asarray(c_a(qc), float)
    return grid, pm, pc, ca


def diffuse_coupling_terms(membrane: Surface, cortex: Surface, c_a: Callable, eps: float, h: float,
                           psi: Callable, p: ModelParams) -> dict:
    """Diffuse coupling force functionals ``AB, CD, E, G, H`` on a full grid.

    ``AB = <grad_{phi_m} C, grad phi_m . psi>``, ``CD`` and ``E`` split
    ``<grad_{phi_c} C, grad phi_c . psi>``, and ``G``, ``H`` are the two
    linker force integrals.
    """
    q = p.replace(eps=eps)
    grid, pm, pc, ca_vals = coupling_setup(membrane, cortex, c_a, eps, h)
    e_c = en.gl_density(pc, q).values
    ca = ScalarField(grid, np.where(en.tube_mask(e_c, q.cutoff_rel), ca_vals, 0.0))
    cs = en.coupling_state(pm, pc, ca, q)
    pts = grid.points()
    ps = np.moveaxis(psi(pts, membrane.project(pts)) if _wants_projection(psi) else psi(pts), -1, 0)
    vol = grid.cell_volume
    kind = grid.default_kind()
    gm = fd.grad_valid(fd.pad(pm.values, kind, 1), grid.spacing)
    gc = fd.grad_valid(fd.pad(pc.values, kind, 1), grid.spacing)
    tm = np.sum(gm * ps, 0)
    tc = np.sum(gc * ps, 0)
    parts = en.coupling_gradient_cortex_terms(pm, pc, ca, q, cs)
    G, Hf = en.species_force_terms(pc, ca, q, cs)
    return {
        "coupling_AB": float(np.sum(en.coupling_gradient_membrane(pm, pc, ca, q, cs).values * tm) * vol),
        "coupling_CD": float(np.sum(parts["CD"] * tc) * vol),
        "coupling_E": float(np.sum(parts["E"] * tc) * vol),
        "coupling_G": float(np.sum(G * ps) * vol),
        "coupling_H": float(np.sum(Hf * ps) * vol),
        "energy": float(np.sum(cs.e_c * cs.Q) * vol),
        "tube_cells": (int(cs.mask_c.sum()), int(cs.mask_m.sum())),
    }


# -- studies -------------------------------------------------------------------------

def force_limit_study(kind: str, S: Surface, psi: Callable, eps_seq, p: ModelParams | None = None,
                      ratio: float = 5.0, law: float = 0.0, richardson_levels: int = 1,
                      symmetric: bool = False, cortex: Surface | None = None,
                      c_a: Callable | None = None, factor: str = "derived",
                      level: int = 6) -> ConvergenceStudy | dict:
    """Diffuse force functional against its sharp limit along ``eps_seq``.

    ``gl`` and ``willmore`` compare with ``Z`` times the sharp functional.
    Grid spacing follows :func:`resolution`; with ``richardson_levels > 1``
    each value is extrapolated from spacings ``h, h/2, ...``.  Coupling
    kinds run all five terms at once on the surfaces ``S`` (membrane) and
    ``cortex`` and return a dictionary of studies keyed by kind, each
    compared with ``factor`` times the sharp term (``factor`` names an
    entry of :data:`FACTORS`).
    """
    p = ModelParams() if p is None else p
    eps_seq = [float(e) for e in eps_seq]
    if kind in ("gl", "willmore"):
        ref = Z_EXACT * sharp_force(kind, S, psi, p, level=level)
        vals, hs = [], []
        for e in eps_seq:
            h = resolution(e, eps_seq[0], ratio, law)
            hs.append(h)
            seq = [diffuse_force(kind, S, e, h / 2 ** j, psi, p, symmetric)
                   for j in range(richardson_levels)]
            vals.append(richardson(seq))
        extra = {"kind": kind, "ratio": ratio, "law": law, "richardson_levels": richardson_levels,
                 "h": hs}
        if kind == "willmore":
            extra["stretch_correction"] = Z_EXACT * stretch_correction(S, psi, p.b_m)
        st = ConvergenceStudy(kind, eps_seq, vals, ref, extra)
        # empirical constant: eps -> 0 limit over the sharp functional (Z expected)
        lim = st.power_limit() if len(eps_seq) > 1 else vals[-1]
        st.extra["limit"] = lim
        st.extra["fitted_constant"] = lim * Z_EXACT / ref if ref else float("nan")
        return st
    if kind not in SHARP_TERM and kind != "coupling":
        raise ValueError(f"unknown study kind {kind!r}")
    if cortex is None or c_a is None:
        raise ValueError("coupling studies need the cortex surface and c_a")
    fac = FACTORS[factor]
    runs = []
    for e in eps_seq:
        runs.append(diffuse_coupling_terms(S, cortex, c_a, e, resolution(e, eps_seq[0], ratio, law),
                                           psi, p))
    out = {}
    for k in SHARP_TERM:
        sharp = sharp_force(k, S, psi, p, cortex, c_a)
        st = ConvergenceStudy(k, eps_seq, [r[k] for r in runs], fac[k] * sharp,
                              {"sharp": sharp, "factor_convention": factor, "factor": fac[k]})
        lim = st.extrapolate()
        st.extra["limit"] = lim
        st.extra["fitted_factor"] = lim / sharp if sharp else float("nan")
        st.extra["ratios"] = [v / sharp if sharp else float("nan") for v in st.measured]
        out[k] = st
    return out if kind == "coupling" else out[kind]
