"""Uniform Cartesian grids, cell-centred fields and second-order stencils.

Cell ``i`` along an axis has its centre at ``origin + (i + 1/2) h``.  All
operators act on plain arrays internally; the :class:`ScalarField` and
:class:`VectorField` wrappers carry the grid and validate their values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np
import scipy.sparse as sp

GHOST = 3
BOUNDARY_KINDS = ("neumann-zero", "dirichlet-zero", "flux-zero", "periodic")


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centred grid on a box in 1, 2 or 3 dimensions."""

    extents: tuple
    cells: tuple
    boundary: str = "physical"
    origin: tuple | None = None

    def __post_init__(self):
        ext = tuple(float(e) for e in np.atleast_1d(self.extents))
        n = tuple(int(c) for c in np.atleast_1d(self.cells))
        if len(ext) != len(n) or not 1 <= len(n) <= 3:
            raise ValueError("extents and cells must have the same length 1..3")
        if any(e <= 0 for e in ext) or any(c < 1 for c in n):
            raise ValueError("extents and cell counts must be positive")
        if self.boundary not in ("periodic", "physical"):
            raise ValueError(f"unknown boundary kind {self.boundary!r}")
        org = (0.0,) * len(n) if self.origin is None else tuple(float(o) for o in self.origin)
        if len(org) != len(n):
            raise ValueError("origin has wrong length")
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "cells", n)
        object.__setattr__(self, "origin", org)

    @classmethod
    def centered(cls, half_width, h, dim, boundary="physical", center=None):
        """Box ``center +- half_width`` with spacing close to (and at most) ``h``."""
        n = int(np.ceil(2 * half_width / h))
        ext = n * h
        c = np.zeros(dim) if center is None else np.asarray(center, float)
        return cls((ext,) * dim, (n,) * dim, boundary, tuple(c - ext / 2))

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple:
        return self.cells

    @property
    def spacing(self) -> tuple:
        return tuple(e / c for e, c in zip(self.extents, self.cells))

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def size(self) -> int:
        return int(np.prod(self.cells))

    def axis_centers(self, axis: int) -> np.ndarray:
        h = self.spacing[axis]
        return self.origin[axis] + (np.arange(self.cells[axis]) + 0.5) * h

    def mesh(self, sparse=False) -> list:
        axes = [self.axis_centers(a) for a in range(self.dim)]
        return np.meshgrid(*axes, indexing="ij", sparse=sparse)

    def points(self) -> np.ndarray:
        """Cell centres as an array of shape ``(*cells, dim)``."""
        return np.stack(self.mesh(), axis=-1)

    def default_kind(self) -> str:
        return "periodic" if self.periodic else "neumann-zero"


def _check_finite(values, what):
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{what} contains non-finite values")


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} != grid {self.grid.shape}")
        _check_finite(self.values, "ScalarField")

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())


@dataclass
class VectorField:
    """``values[a]`` is component ``a``.

    With ``staggered=True`` component ``a`` lives on the face between cell
    ``i`` and ``i+1`` along axis ``a`` (MAC layout).  On physical grids the
    last face along each axis is the wall and holds zero.
    """

    grid: Grid
    values: np.ndarray
    staggered: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.dim, *self.grid.shape):
            raise ValueError("VectorField needs shape (dim, *cells)")
        _check_finite(self.values, "VectorField")

    def copy(self) -> "VectorField":
        return VectorField(self.grid, self.values.copy(), self.staggered)


@dataclass(frozen=True)
class BoundarySpec:
    """Boundary kind per named field."""

    kinds: dict = field(default_factory=dict)

    @classmethod
    def default(cls, grid: Grid) -> "BoundarySpec":
        if grid.periodic:
            names = ("phi_m", "phi_c", "mu", "u", "p", "c_a", "c_i", "flux")
            return cls({k: "periodic" for k in names})
        return cls({
            "phi_m": "neumann-zero", "phi_c": "neumann-zero", "mu": "neumann-zero",
            "p": "neumann-zero", "u": "dirichlet-zero", "c_a": "dirichlet-zero",
            "c_i": "dirichlet-zero", "flux": "flux-zero",
        })

    def kind(self, name: str, grid: Grid) -> str:
        try:
            k = self.kinds[name]
        except KeyError:
            raise ValueError(f"no boundary kind given for field {name!r}") from None
        validate_kind(k, grid)
        return k


def validate_kind(kind: str, grid: Grid) -> None:
    if kind not in BOUNDARY_KINDS:
        raise ValueError(f"unknown boundary kind {kind!r}")
    if (kind == "periodic") != grid.periodic:
        raise ValueError(f"boundary kind {kind!r} does not match a {grid.boundary} grid")


# -- ghost layers -----------------------------------------------------------

def pad(a: np.ndarray, kind: str, width: int = 1, axes=None) -> np.ndarray:
    """Pad the spatial axes of ``a`` with ghost cells realising ``kind``.

    ``axes`` defaults to all axes.  ``dirichlet-zero`` mirrors with a sign
    flip so that the face value interpolates to zero.
    """
    axes = range(a.ndim) if axes is None else axes
    widths = [(width, width) if ax in axes else (0, 0) for ax in range(a.ndim)]
    if kind == "periodic":
        return np.pad(a, widths, mode="wrap")
    out = np.pad(a, widths, mode="symmetric")
    if kind == "dirichlet-zero":
        for ax in axes:
            lo = [slice(None)] * a.ndim
            hi = [slice(None)] * a.ndim
            lo[ax] = slice(0, width)
            hi[ax] = slice(out.shape[ax] - width, None)
            out[tuple(lo)] *= -1
            out[tuple(hi)] *= -1
    elif kind not in ("neumann-zero",):
        raise ValueError(f"kind {kind!r} is not a scalar ghost rule")
    return out


def apply_boundary(f, kind: str, width: int = GHOST) -> np.ndarray:
    """Return the field values with ``width`` ghost layers filled per ``kind``.

    For a cell-centred :class:`VectorField` with ``flux-zero`` the normal
    component is reflected with a sign flip (zero normal flux on the wall)
    and tangential components are mirrored.
    """
    grid = f.grid
    validate_kind(kind, grid)
    if isinstance(f, ScalarField):
        if kind == "flux-zero":
            raise ValueError("flux-zero applies to vector fluxes")
        return pad(f.values, kind, width)
    comps = []
    for a in range(grid.dim):
        if kind == "flux-zero":
            # normal axis flips sign, tangential axes mirror
            c = pad(f.values[a], "dirichlet-zero", width, axes=[a])
            c = pad(c, "neumann-zero", width, axes=[ax for ax in range(grid.dim) if ax != a])
        else:
            c = pad(f.values[a], kind, width)
        comps.append(c)
    return np.stack(comps)


def zero_boundary_flux(flux: np.ndarray, axis: int) -> np.ndarray:
    """Face fluxes of length n+1 along ``axis``: zero the two wall faces."""
    out = flux.copy()
    sl = [slice(None)] * out.ndim
    sl[axis] = 0
    out[tuple(sl)] = 0.0
    sl[axis] = -1
    out[tuple(sl)] = 0.0
    return out


# -- stencils on padded arrays (valid mode) -----------------------------------

def _shift(a, axis, lo, hi):
    sl = [slice(1, -1)] * a.ndim
    sl[axis] = slice(lo, a.shape[axis] - hi if hi else None)
    return a[tuple(sl)]


def lap_valid(a: np.ndarray, h) -> np.ndarray:
    """Compact (2d+1)-point Laplacian; output loses one cell on every side."""
    h = np.broadcast_to(np.asarray(h, float), (a.ndim,))
    out = 0.0
    for ax in range(a.ndim):
        out = out + (_shift(a, ax, 2, 0) - 2 * _shift(a, ax, 1, 1) + _shift(a, ax, 0, 2)) / h[ax] ** 2
    return out


def grad_valid(a: np.ndarray, h) -> np.ndarray:
    """Central gradient, shape ``(ndim, *reduced)``."""
    h = np.broadcast_to(np.asarray(h, float), (a.ndim,))
    return np.stack([(_shift(a, ax, 2, 0) - _shift(a, ax, 0, 2)) / (2 * h[ax]) for ax in range(a.ndim)])


def div_valid(v: np.ndarray, h) -> np.ndarray:
    h = np.broadcast_to(np.asarray(h, float), (v.shape[0],))
    return sum((_shift(v[ax], ax, 2, 0) - _shift(v[ax], ax, 0, 2)) / (2 * h[ax]) for ax in range(v.shape[0]))


def face_diff(a: np.ndarray, kind: str, axis: int, h: float) -> np.ndarray:
    """Differences on all faces along ``axis`` (n+1 values, walls included)."""
    p = pad(a, kind, 1, axes=[axis])
    return np.diff(p, axis=axis) / h


def face_mean(a: np.ndarray, kind: str, axis: int) -> np.ndarray:
    p = pad(a, kind, 1, axes=[axis])
    lo = [slice(None)] * a.ndim
    hi = [slice(None)] * a.ndim
    lo[axis] = slice(0, -1)
    hi[axis] = slice(1, None)
    return 0.5 * (p[tuple(lo)] + p[tuple(hi)])


def face_grad_sq(a: np.ndarray, kind: str, h) -> np.ndarray:
    """Per-cell ``|grad a|^2`` as the mean of squared face differences."""
    out = np.zeros_like(a)
    for ax in range(a.ndim):
        f2 = face_diff(a, kind, ax, h[ax]) ** 2
        lo = [slice(None)] * a.ndim
        hi = [slice(None)] * a.ndim
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        out += 0.5 * (f2[tuple(lo)] + f2[tuple(hi)])
    return out


def weighted_laplacian(a: np.ndarray, w: np.ndarray | None, kind: str, h) -> np.ndarray:
    """``div(w grad a)`` in conservative face form; ``w`` is averaged to faces.

    Wall faces of physical grids carry zero flux.  With ``w=None`` this is
    the compact Laplacian, the exact negative adjoint partner of
    :func:`face_grad_sq`.
    """
    out = np.zeros_like(a, dtype=float)
    for ax in range(a.ndim):
        flux = face_diff(a, kind, ax, h[ax])
        if w is not None:
            flux = flux * face_mean(w, kind, ax)
        if kind != "periodic":
            flux = zero_boundary_flux(flux, ax)
        out += np.diff(flux, axis=ax) / h[ax]
    return out


# -- public operators ---------------------------------------------------------

def _kind_for(f, kind):
    kind = f.grid.default_kind() if kind is None else kind
    validate_kind(kind, f.grid)
    return kind


def gradient(f: ScalarField, kind: str | None = None) -> VectorField:
    """Second-order central gradient using one ghost layer per ``kind``."""
    kind = _kind_for(f, kind)
    return VectorField(f.grid, grad_valid(pad(f.values, kind, 1), f.grid.spacing))


def divergence(v: VectorField, kind: str | None = None) -> ScalarField:
    kind = v.grid.default_kind() if kind is None else kind
    validate_kind(kind, v.grid)
    if kind == "flux-zero":
        p = apply_boundary(v, kind, 1)
    else:
        p = np.stack([pad(c, kind, 1) for c in v.values])
    return ScalarField(v.grid, div_valid(p, v.grid.spacing))


def laplacian(f: ScalarField, kind: str | None = None) -> ScalarField:
    kind = _kind_for(f, kind)
    return ScalarField(f.grid, lap_valid(pad(f.values, kind, 1), f.grid.spacing))


def integrate(f) -> float:
    """Midpoint (cell-sum) quadrature."""
    return float(np.sum(f.values) * f.grid.cell_volume)


# -- sparse operators -------------------------------------------------------

def _central_1d(n: int, h: float, periodic: bool) -> sp.csr_matrix:
    off = np.full(n - 1, 1.0 / (2 * h))
    m = sp.diags([-off, off], [-1, 1], shape=(n, n), format="lil")
    if periodic:
        m[0, n - 1] = -1.0 / (2 * h)
        m[n - 1, 0] = 1.0 / (2 * h)
    else:
        # mirror ghost: a[-1] = a[0], a[n] = a[n-1]
        m[0, 0] = -1.0 / (2 * h)
        m[n - 1, n - 1] = 1.0 / (2 * h)
    return m.tocsr()


def central_gradient_matrices(grid: Grid) -> list:
    """Sparse central-difference matrices (C order), one per axis.

    Physical grids use the mirror ghost rule, periodic grids wrap.  Their
    transposes give exact discrete adjoints.
    """
    mats = []
    for ax in range(grid.dim):
        factors = [sp.identity(n, format="csr") for n in grid.cells]
        factors[ax] = _central_1d(grid.cells[ax], grid.spacing[ax], grid.periodic)
        m = factors[0]
        for f in factors[1:]:
            m = sp.kron(m, f, format="csr")
        mats.append(m)
    return mats


# -- band blocks -------------------------------------------------------------

@dataclass(frozen=True)
class Block:
    start: tuple          # first interior cell index per axis
    size: tuple           # interior cells per axis
    halo: int
    axes: tuple           # 1D cell-centre coordinates including halo


def iter_band_blocks(grid: Grid, distance: Callable, half_width: float,
                     block: int = 24, halo: int = 2) -> Iterator[Block]:
    """Blocks of cells that may lie within ``half_width`` of a surface.

    ``distance`` maps points ``(..., dim)`` to a 1-Lipschitz distance.  A
    block is kept when the distance at its centre is below ``half_width``
    plus its half diagonal.  Halo cells extend past the grid when the block
    touches the box; callers evaluate analytic fields there.
    """
    h = np.asarray(grid.spacing)
    nb = [int(np.ceil(n / block)) for n in grid.cells]
    idx = np.stack(np.meshgrid(*[np.arange(m) for m in nb], indexing="ij"), -1).reshape(-1, grid.dim)
    starts = idx * block
    sizes = np.minimum(block, np.asarray(grid.cells) - starts)
    centres = np.asarray(grid.origin) + (starts + sizes / 2) * h
    reach = half_width + 0.5 * np.linalg.norm(sizes * h, axis=1)
    keep = np.abs(distance(centres)) <= reach
    for s, n in zip(starts[keep], sizes[keep]):
        axes = tuple(grid.origin[a] + (s[a] + np.arange(-halo, n[a] + halo) + 0.5) * h[a]
                     for a in range(grid.dim))
        yield Block(tuple(int(v) for v in s), tuple(int(v) for v in n), halo, axes)


# -- field dumps ------------------------------------------------------------

def write_vtk(path, f: ScalarField, name: str = "field") -> Path:
    """Legacy VTK STRUCTURED_POINTS, ASCII, point data at cell centres."""
    path = Path(path)
    g = f.grid
    dims = list(g.cells) + [1] * (3 - g.dim)
    org = list(np.asarray(g.origin) + 0.5 * np.asarray(g.spacing)) + [0.0] * (3 - g.dim)
    spc = list(g.spacing) + [1.0] * (3 - g.dim)
    # VTK wants x fastest
    vals = np.asarray(f.values).transpose(*reversed(range(g.dim))).ravel()
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"{name}\nASCII\nDATASET STRUCTURED_POINTS\n")
        fh.write("DIMENSIONS {} {} {}\n".format(*dims))
        fh.write("ORIGIN {:.17g} {:.17g} {:.17g}\n".format(*org))
        fh.write("SPACING {:.17g} {:.17g} {:.17g}\n".format(*spc))
        fh.write(f"POINT_DATA {vals.size}\nSCALARS {name} double 1\nLOOKUP_TABLE default\n")
        for chunk in np.array_split(vals, max(1, vals.size // 6)):
            fh.write(" ".join(f"{v:.17g}" for v in chunk) + "\n")
    return path


def write_raw(path, f: ScalarField, name: str = "field", time: float = 0.0, extra: dict | None = None) -> Path:
    """Raw little-endian float64 (C order) plus a JSON sidecar."""
    path = Path(path)
    np.asarray(f.values, dtype="<f8").tofile(path)
    meta = {
        "dims": list(f.grid.cells), "spacing": list(f.grid.spacing),
        "origin": list(f.grid.origin), "field": name, "time": time,
        "boundary": f.grid.boundary, "dtype": "<f8", "order": "C",
    }
    if extra:
        meta.update(extra)
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2))
    return path


def read_raw(path) -> tuple:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    grid = Grid(np.asarray(meta["spacing"]) * np.asarray(meta["dims"]), meta["dims"],
                meta.get("boundary", "physical"), meta["origin"])
    vals = np.fromfile(path, dtype="<f8").reshape(meta["dims"])
    return ScalarField(grid, vals), meta
