"""Analytic surfaces, signed distance, interfacial coordinates and curvatures.

Orientation.  ``nu = grad d`` and the extended mean curvature is
``H = -div nu = -lap d``, the sum of the principal curvatures of the level
set through ``x``.  Principal curvatures ``kappa`` of a surface are taken
with the same convention, so that ``H = sum kappa_i / (1 - d kappa_i)``.
With the default ``outer-positive`` orientation (``d > 0`` outside, where
the phase field is +1) a sphere of radius ``R`` has ``kappa = -1/R``; with
``inner-positive`` it has ``kappa = +1/R``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fields import Grid, ScalarField
from ._kernels import ellipsoid_closest

SQRT2 = np.sqrt(2.0)
ORIENTATIONS = ("outer-positive", "inner-positive")


class GeometryError(ValueError):
    """Point outside the region where the requested map is defined."""


class UnderResolvedWarning(UserWarning):
    pass


def _pts(x, dim):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != dim:
        raise ValueError(f"points must have trailing dimension {dim}")
    return x


@dataclass(frozen=True)
class SurfaceQuadrature:
    points: np.ndarray      # (n, dim)
    normals: np.ndarray     # (n, dim), nu = grad d
    weights: np.ndarray     # (n,)
    param: np.ndarray | None = None   # curve parameter for 2D closed curves
    speed: np.ndarray | None = None   # |dx/dparam| for 2D closed curves


@dataclass(frozen=True)
class Surface:
    """Closed analytic surface; see the module docstring for signs."""

    center: tuple = (0.0, 0.0, 0.0)
    orientation: str = "outer-positive"

    kind = "surface"

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.orientation not in ORIENTATIONS:
            raise ValueError(f"orientation must be one of {ORIENTATIONS}")

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def sign(self) -> float:
        return 1.0 if self.orientation == "outer-positive" else -1.0

    # subclasses provide these three
    def _closest(self, x):
        """Return (closest point, outward signed distance)."""
        raise NotImplementedError

    def _outward_normal(self, q):
        raise NotImplementedError

    def _convex_curvatures(self, q):
        """Principal curvatures, positive for convex parts, shape (..., dim-1)."""
        raise NotImplementedError

    @property
    def feature_radius(self) -> float:
        raise NotImplementedError

    def signed_distance(self, x) -> np.ndarray:
        return self.sign * self._closest(_pts(x, self.dim))[1]

    def project(self, x) -> np.ndarray:
        return self._closest(_pts(x, self.dim))[0]

    def closest(self, x) -> tuple:
        """Nearest surface points and signed distances in one pass."""
        q, d = self._closest(_pts(x, self.dim))
        return q, self.sign * d

    def normal(self, q) -> np.ndarray:
        """``nu = grad d`` at surface points ``q``."""
        return self.sign * self._outward_normal(_pts(q, self.dim))

    def principal_curvatures(self, q) -> np.ndarray:
        return -self.sign * self._convex_curvatures(_pts(q, self.dim))

    def quadrature(self, n: int) -> SurfaceQuadrature:
        raise NotImplementedError

    def with_orientation(self, orientation: str) -> "Surface":
        import dataclasses
        return dataclasses.replace(self, orientation=orientation)


@dataclass(frozen=True)
class Ball(Surface):
    """Circle (2D) or sphere (3D)."""

    radius: float = 1.0

    def __post_init__(self):
        super().__post_init__()
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    @property
    def kind(self):
        return "circle" if self.dim == 2 else "sphere"

    @property
    def feature_radius(self):
        return self.radius

    def _closest(self, x):
        c = np.asarray(self.center)
        v = x - c
        r = np.linalg.norm(v, axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            q = c + self.radius * v / r[..., None]
        return q, r - self.radius

    def _outward_normal(self, q):
        v = q - np.asarray(self.center)
        return v / np.linalg.norm(v, axis=-1)[..., None]

    def _convex_curvatures(self, q):
        return np.full(q.shape[:-1] + (self.dim - 1,), 1.0 / self.radius)

    def quadrature(self, n: int) -> SurfaceQuadrature:
        return Ellipsoid(self.center, self.orientation, (self.radius,) * self.dim).quadrature(n)


@dataclass(frozen=True)
class Ellipsoid(Surface):
    """Axis-aligned ellipse (2D) or ellipsoid (3D) with semi-axes ``axes``."""

    axes: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "axes", tuple(float(a) for a in self.axes))
        if len(self.axes) != self.dim or min(self.axes) <= 0:
            raise ValueError("need one positive semi-axis per dimension")

    @property
    def kind(self):
        return "ellipse" if self.dim == 2 else "ellipsoid"

    @property
    def feature_radius(self):
        a = np.asarray(self.axes)
        return float(a.min() ** 2 / a.max())

    def _closest(self, x, tol=1e-15, maxit=200):
        a2 = np.asarray(self.axes, float) ** 2
        p = x - np.asarray(self.center)
        shape = p.shape[:-1]
        p = np.ascontiguousarray(p.reshape(-1, self.dim), dtype=float)
        q, d = ellipsoid_closest(p, a2, tol, maxit)
        inside = np.sum(p * p / a2, axis=1) < 1.0
        d = np.where(inside, -d, d)
        q = q + np.asarray(self.center)
        return q.reshape(shape + (self.dim,)), d.reshape(shape)

    def _outward_normal(self, q):
        g = (q - np.asarray(self.center)) / np.asarray(self.axes) ** 2
        return g / np.linalg.norm(g, axis=-1)[..., None]

    def _convex_curvatures(self, q):
        a = np.asarray(self.axes)
        p = q - np.asarray(self.center)
        s = np.sum(p * p / a ** 4, axis=-1)
        if self.dim == 2:
            return (1.0 / (np.prod(a ** 2) * s ** 1.5))[..., None]
        abc2 = np.prod(a ** 2)
        K = 1.0 / (abc2 * s ** 2)
        Hm = (np.sum(a ** 2) - np.sum(p * p, axis=-1)) / (2.0 * abc2 * s ** 1.5)
        disc = np.sqrt(np.maximum(Hm * Hm - K, 0.0))
        return np.stack([Hm + disc, Hm - disc], axis=-1)

    def quadrature(self, n: int) -> SurfaceQuadrature:
        c = np.asarray(self.center)
        a = np.asarray(self.axes)
        if self.dim == 2:
            th = 2 * np.pi * np.arange(n) / n
            pts = c + np.stack([a[0] * np.cos(th), a[1] * np.sin(th)], -1)
            speed = np.hypot(a[0] * np.sin(th), a[1] * np.cos(th))
            return SurfaceQuadrature(pts, self.normal(pts), speed * 2 * np.pi / n, th, speed)
        u, wu = np.polynomial.legendre.leggauss(n)
        ph = 2 * np.pi * np.arange(2 * n) / (2 * n)
        U, P = np.meshgrid(u, ph, indexing="ij")
        sq = np.sqrt(1 - U ** 2)
        pts = c + np.stack([a[0] * sq * np.cos(P), a[1] * sq * np.sin(P), a[2] * U], -1)
        jac = np.sqrt((1 - U ** 2) * (a[1] ** 2 * a[2] ** 2 * np.cos(P) ** 2
                                      + a[0] ** 2 * a[2] ** 2 * np.sin(P) ** 2)
                      + a[0] ** 2 * a[1] ** 2 * U ** 2)
        w = jac * wu[:, None] * (np.pi / n)
        pts = pts.reshape(-1, 3)
        return SurfaceQuadrature(pts, self.normal(pts), w.ravel())


@dataclass(frozen=True)
class Torus(Surface):
    """Torus about the z axis through ``center``."""

    major: float = 2.0
    minor: float = 0.5

    def __post_init__(self):
        super().__post_init__()
        if self.dim != 3 or not 0 < self.minor < self.major:
            raise ValueError("torus needs 3D centre and 0 < minor < major")

    kind = "torus"

    @property
    def feature_radius(self):
        return self.minor

    def _split(self, x):
        p = x - np.asarray(self.center)
        rho = np.hypot(p[..., 0], p[..., 1])
        w = np.stack([rho - self.major, p[..., 2]], -1)
        return p, rho, w, np.linalg.norm(w, axis=-1)

    def _closest(self, x):
        p, rho, w, wn = self._split(x)
        with np.errstate(invalid="ignore", divide="ignore"):
            er = p[..., :2] / rho[..., None]
            qr = self.major + self.minor * w[..., 0] / wn
            qz = self.minor * w[..., 1] / wn
        q = np.concatenate([er * qr[..., None], qz[..., None]], -1) + np.asarray(self.center)
        return q, wn - self.minor

    def _outward_normal(self, q):
        p, rho, w, wn = self._split(q)
        er = p[..., :2] / rho[..., None]
        return np.concatenate([er * (w[..., :1] / wn[..., None]), w[..., 1:] / wn[..., None]], -1)

    def _convex_curvatures(self, q):
        p, rho, w, wn = self._split(q)
        cos = w[..., 0] / wn
        return np.stack([np.full_like(cos, 1.0 / self.minor), cos / (self.major + self.minor * cos)], -1)

    def check_unique(self, x):
        p, rho, w, wn = self._split(_pts(x, 3))
        if np.any(wn <= 0) or np.any(rho <= 0) or np.any(np.abs(wn - self.minor) >= min(self.minor, self.major - self.minor)):
            raise GeometryError("point outside the torus uniqueness tube")

    def quadrature(self, n: int) -> SurfaceQuadrature:
        u = 2 * np.pi * np.arange(2 * n) / (2 * n)
        v = 2 * np.pi * np.arange(n) / n
        U, V = np.meshgrid(u, v, indexing="ij")
        R, r = self.major, self.minor
        pts = np.stack([(R + r * np.cos(V)) * np.cos(U), (R + r * np.cos(V)) * np.sin(U), r * np.sin(V)], -1)
        pts = pts.reshape(-1, 3) + np.asarray(self.center)
        w = (r * (R + r * np.cos(V)) * (2 * np.pi / (2 * n)) * (2 * np.pi / n)).ravel()
        return SurfaceQuadrature(pts, self.normal(pts), w)


def make_surface(kind: str, params, center=None, orientation="outer-positive") -> Surface:
    params = [float(v) for v in np.atleast_1d(params)]
    kind = kind.lower()
    if kind in ("sphere", "circle"):
        dim = 3 if kind == "sphere" else 2
        c = (0.0,) * dim if center is None else center
        return Ball(tuple(c), orientation, params[0])
    if kind in ("ellipsoid", "ellipse"):
        dim = 3 if kind == "ellipsoid" else 2
        if len(params) != dim:
            raise ValueError(f"{kind} needs {dim} semi-axes")
        c = (0.0,) * dim if center is None else center
        return Ellipsoid(tuple(c), orientation, tuple(params))
    if kind == "torus":
        if len(params) != 2:
            raise ValueError("torus needs major,minor")
        return Torus((0.0, 0.0, 0.0) if center is None else tuple(center), orientation, params[0], params[1])
    raise ValueError(f"unknown surface kind {kind!r}")


def parse_surface(text: str, orientation="outer-positive") -> Surface:
    """Parse ``kind:p1,p2[@c1,c2,c3]``, e.g. ``sphere:0.3`` or ``torus:2,0.5``."""
    try:
        kind, rest = text.split(":", 1)
        center = None
        if "@" in rest:
            rest, ctext = rest.split("@", 1)
            center = tuple(float(v) for v in ctext.split(","))
        params = [float(v) for v in rest.split(",")]
    except ValueError as exc:
        raise ValueError(f"bad surface specification {text!r}") from exc
    return make_surface(kind, params, center, orientation)


# -- distance and interfacial coordinates --------------------------------------

def signed_distance(S: Surface, x) -> np.ndarray:
    """Signed distance, positive on the side where the phase field is +1."""
    if isinstance(S, Torus):
        S.check_unique(x)
    return S.signed_distance(x)


def default_delta(S: Surface, eps: float) -> float:
    return min(0.25 * S.feature_radius, 10.0 * eps)


@dataclass(frozen=True)
class InterfacialCoords:
    surface: Surface
    eps: float
    delta: float | None = None

    def __post_init__(self):
        if self.delta is None:
            object.__setattr__(self, "delta", default_delta(self.surface, self.eps))
        if not 0 < self.eps < self.delta:
            raise ValueError("need 0 < eps < delta")

    def inverse(self, s, z) -> np.ndarray:
        s = np.asarray(s, float)
        return s + self.eps * np.asarray(z)[..., None] * self.surface.normal(s)


def interfacial_coords(ic: InterfacialCoords, x) -> tuple:
    """``(P x, d(x)/eps)`` for points inside the tube ``|d| < delta``."""
    x = _pts(x, ic.surface.dim)
    if isinstance(ic.surface, Torus):
        ic.surface.check_unique(x)
    q, d_out = ic.surface._closest(x)
    d = ic.surface.sign * d_out
    if np.any(~np.isfinite(q)) or np.any(np.abs(d) >= ic.delta):
        raise GeometryError("point outside the interfacial tube")
    return q, d / ic.eps


@dataclass(frozen=True)
class ExtendedCurvatures:
    H: np.ndarray
    K: np.ndarray
    kappa: np.ndarray       # extended principal curvatures, (..., dim-1)


def extended_curvatures(S: Surface, x) -> ExtendedCurvatures:
    """Curvatures of the distance level set through ``x``."""
    x = _pts(x, S.dim)
    q, d_out = S._closest(x)
    d = S.sign * d_out
    kh = S.principal_curvatures(q)
    den = 1.0 - d[..., None] * kh
    if np.any(np.abs(den) < 1e-12):
        raise GeometryError("focal point: 1 - d kappa vanishes")
    kb = kh / den
    H = kb.sum(-1)
    K = kb.prod(-1) if S.dim == 3 else np.zeros_like(H)
    return ExtendedCurvatures(H, K, kb)


@dataclass(frozen=True)
class CurvatureIdentities:
    normal_derivative: np.ndarray        # H^2 - 2K
    normal_derivative_fd: np.ndarray
    hessian_normal: np.ndarray           # 2H(H^2 - 3K)
    hessian_normal_fd: np.ndarray


def curvature_identities(S: Surface, x, h: float = 1e-3) -> CurvatureIdentities:
    """Closed forms of the normal derivatives of ``H`` and finite differences.

    The normal lines of the distance function are straight, so the normal
    derivatives are derivatives of ``H(x + t nu)`` in ``t``.
    """
    x = _pts(x, S.dim)
    ec = extended_curvatures(S, x)
    nu = S.normal(S.project(x))
    Hp = extended_curvatures(S, x + h * nu).H
    Hm = extended_curvatures(S, x - h * nu).H
    return CurvatureIdentities(
        ec.H ** 2 - 2 * ec.K,
        (Hp - Hm) / (2 * h),
        2 * ec.H * (ec.H ** 2 - 3 * ec.K),
        (Hp - 2 * ec.H + Hm) / h ** 2,
    )


def tube_expansion_defect(S: Surface, q, d) -> np.ndarray:
    """``|H(q + d nu) - (sum k + d sum k^2)|`` for surface points ``q`` and
    offsets ``d`` (broadcast against each other)."""
    q = _pts(q, S.dim)
    d = np.asarray(d, float)
    k = S.principal_curvatures(q)
    nu = S.normal(q)
    x = q + d[..., None] * nu
    H = extended_curvatures(S, x).H
    return np.abs(H - (k.sum(-1) + d * (k * k).sum(-1)))


def tube_expansion_order(S: Surface, q, d_values=(0.04, 0.02, 0.01, 0.005)) -> float:
    """Log-log slope of the first-order tube expansion defect in ``d``
    (maximum over the points ``q``)."""
    q = _pts(q, S.dim)
    d = np.asarray(d_values, float)
    err = np.array([tube_expansion_defect(S, q, np.full(len(q), di)).max() for di in d])
    return float(np.polyfit(np.log(d), np.log(err), 1)[0])


# -- optimal profile -------------------------------------------------------------

def optimal_profile(z) -> tuple:
    """``tanh(z/sqrt 2)`` and its first three derivatives (dtype preserved)."""
    z = np.asarray(z)
    if not np.issubdtype(z.dtype, np.floating):
        z = z.astype(float)
    s2 = np.sqrt(np.asarray(2, dtype=z.dtype))
    t = np.tanh(z / s2)
    sech2 = 1 - t * t
    return t, sech2 / s2, -t * sech2, (3 * t * t - 1) * sech2 / s2


@dataclass
class Profile:
    """Function of the stretched normal variable on a symmetric odd grid."""

    z: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.z = np.asarray(self.z)
        self.values = np.asarray(self.values)
        if self.z.shape != self.values.shape or self.z.ndim != 1:
            raise ValueError("z and values must be 1D of equal length")
        if len(self.z) % 2 != 1:
            raise ValueError("profile grids have an odd node count")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("profile values must be finite")

    @staticmethod
    def grid(z_max: float = 10.0, h: float = 1e-3, dtype=float) -> np.ndarray:
        n = int(round(z_max / h))
        return np.arange(-n, n + 1, dtype=dtype) * np.asarray(h, dtype=dtype)

    @property
    def h(self):
        return self.z[1] - self.z[0]

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def to_csv(self, path) -> Path:
        path = Path(path)
        data = np.column_stack([np.asarray(self.z, float), np.asarray(self.values, float)])
        np.savetxt(path, data, delimiter=",", header="z,value", comments="", fmt="%.17g")
        return path


# -- phase fields --------------------------------------------------------------

def phase_field(S: Surface, eps: float, x) -> np.ndarray:
    return np.tanh(S.signed_distance(x) / (eps * SQRT2))


def build_phase_field(S: Surface, eps: float, grid: Grid) -> ScalarField:
    """Optimal-profile phase field ``tanh(d/(eps sqrt 2))`` on the grid."""
    if S.dim != grid.dim:
        raise ValueError("surface and grid dimensions differ")
    if eps < 2 * max(grid.spacing):
        warnings.warn(f"under-resolved interface: eps={eps} < 2h={2 * max(grid.spacing)}",
                      UnderResolvedWarning, stacklevel=2)
    return ScalarField(grid, phase_field(S, eps, grid.points()))


# -- triangle meshes for sharp-side oracles -----------------------------------------

def _icosphere(level: int):
    t = (1 + 5 ** 0.5) / 2
    v = np.array([[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
                  [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], float)
    f = np.array([[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
                  [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
                  [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    v /= np.linalg.norm(v, axis=1)[:, None]
    for _ in range(level):
        edges = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        uniq, inv = np.unique(edges, axis=0, return_inverse=True)
        mid = v[uniq[:, 0]] + v[uniq[:, 1]]
        mid /= np.linalg.norm(mid, axis=1)[:, None]
        m = inv.reshape(3, -1).T + len(v)
        v = np.vstack([v, mid])
        a, b, c = f.T
        f = np.concatenate([np.stack([a, m[:, 0], m[:, 2]], 1), np.stack([b, m[:, 1], m[:, 0]], 1),
                            np.stack([c, m[:, 2], m[:, 1]], 1), m])
    return v, f


def triangulate(S: Surface, level: int = 5) -> tuple:
    """Vertices lying on ``S`` and triangle index triples."""
    if isinstance(S, (Ball, Ellipsoid)) and S.dim == 3:
        v, f = _icosphere(level)
        axes = np.full(3, S.radius) if isinstance(S, Ball) else np.asarray(S.axes)
        return v * axes + np.asarray(S.center), f
    if isinstance(S, Torus):
        nv = 8 * 2 ** level // 4
        nu = 2 * nv
        u = 2 * np.pi * np.arange(nu) / nu
        w = 2 * np.pi * np.arange(nv) / nv
        U, W = np.meshgrid(u, w, indexing="ij")
        R, r = S.major, S.minor
        v = np.stack([(R + r * np.cos(W)) * np.cos(U), (R + r * np.cos(W)) * np.sin(U), r * np.sin(W)], -1)
        v = v.reshape(-1, 3) + np.asarray(S.center)
        i, j = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
        a = (i * nv + j).ravel()
        b = (((i + 1) % nu) * nv + j).ravel()
        c = (((i + 1) % nu) * nv + (j + 1) % nv).ravel()
        d = (i * nv + (j + 1) % nv).ravel()
        f = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
        return v, f
    raise ValueError("triangulation is provided for closed 3D surfaces")
