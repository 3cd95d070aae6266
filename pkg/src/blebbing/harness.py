"""Command line driver, configuration schema and reports.

Configuration files are flat INI-style text (``[section]`` then
``key = value``).  Every key is validated against :data:`SCHEMA` before any
computation; a violation exits with status 2 and names the offending line.
Exit status 3 marks a numerical failure, 1 a completed run with at least
one failed check and 0 a clean pass.
"""

from __future__ import annotations

import configparser
import csv
import json
import logging
import re
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import click
import numpy as np

from . import asymptotics as A
from . import energies as en
from . import fields as fd
from . import geometry as G
from . import solver as S
from .energies import ModelParams
from .fields import Grid

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    """Schema violation; ``line`` is 1-based or ``None`` for flag values."""

    def __init__(self, msg: str, line: int | None = None, path: str | None = None):
        where = f"{path or '<config>'}:{line}: " if line else ""
        super().__init__(where + msg)
        self.line = line


# =============================================================================
# schema
# =============================================================================

def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> list:
    vals = [float(v) for v in re.split(r"[,\s]+", text.strip()) if v]
    if not vals:
        raise ValueError("empty list")
    return vals


def _opt_float(text: str):
    return None if text.strip().lower() in ("", "none") else float(text)


def _choice(*options):
    def conv(text):
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return t
    return conv


def _surface(text: str) -> str:
    G.parse_surface(text)
    return text.strip()


def _opt_surface(text: str):
    return None if text.strip().lower() in ("", "none") else _surface(text)


def _model_schema():
    conv = {"weight_sign": float}
    return {f.name: (conv.get(f.name, float), f.default) for f in fields(ModelParams)}


def _step_schema():
    out = {}
    for f in fields(S.StepConfig):
        if f.type in ("bool", bool):
            out[f.name] = (_bool, f.default)
        elif f.name == "mobility":
            out[f.name] = (_opt_float, f.default)
        else:
            out[f.name] = (float, f.default)
    return out


SCHEMA = {
    "run": {"version": (int, CONFIG_VERSION), "seed": (int, 0), "threads": (int, 1),
            "out": (str, "out")},
    "tolerances": {
        "profile": (float, 1e-5), "z_const": (float, 1e-8), "expansion": (float, 1e-5),
        "s1": (float, 1e-5), "tail": (float, 1e-8), "curvature": (float, 1e-4),
        "slope_lo": (float, 1.9), "slope_hi": (float, 2.1), "concentration": (float, 0.02),
        "gl": (float, 0.03), "gl_order": (float, 0.8), "willmore": (float, 0.05),
        "coupling": (float, 0.05), "drift": (float, 1e-10), "div": (float, 1e-8),
        "energy_slack": (float, 1e-6), "species_drift": (float, 1e-8),
    },
    "profile": {"z_max": (float, 10.0), "h": (float, 1e-3), "tail_z_max": (float, 14.0)},
    "geometry": {"h": (float, 1e-3), "offset": (float, 0.01), "points": (int, 6),
                 "surfaces": (str, "sphere:1;torus:2,0.5")},
    "study": {
        "eps_seq": (_floats, None), "ratio": (float, 5.0), "law": (float, None),
        "richardson": (int, None), "kind": (_choice(*A.KINDS, "coupling"), "gl"),
        "surface": (_surface, None), "cortex": (_opt_surface, None),
        "symmetric": (_bool, None), "factor": (_choice(*A.FACTORS), "paper"),
        "psi": (_choice("auto", "radial-bump", "normal-x", "linear"), "auto"),
        "function": (_choice("one", "poly"), "poly"),
    },
    "grid": {"dim": (int, 2), "cells": (int, 64), "extent": (float, 1.0),
             "boundary": (_choice("physical", "periodic"), "physical")},
    "model": _model_schema(),
    "step": _step_schema(),
    "simulate": {"steps": (int, 100), "membrane": (_opt_surface, "circle:0.3"),
                 "cortex": (_opt_surface, "circle:0.2"), "c_a": (float, 1.0),
                 "c_i": (float, 0.0), "checkpoint_every": (int, 0), "vtk": (_bool, True),
                 "noise": (float, 0.0)},
    "species": {"steps": (int, 50), "dt": (float, 1e-3)},
}


@dataclass
class RunConfig:
    """Resolved configuration: ``values[section][key]`` plus the source
    line of every key that came from a file."""

    values: dict
    lines: dict = field(default_factory=dict)
    path: str | None = None

    def __getitem__(self, section):
        return self.values[section]

    def resolved(self) -> dict:
        return json.loads(json.dumps(self.values, default=str))

    def model(self) -> ModelParams:
        return ModelParams(**self.values["model"])

    def step(self) -> S.StepConfig:
        return S.StepConfig(**self.values["step"])

    def set(self, section: str, key: str, text: str) -> None:
        conv, _ = SCHEMA[section][key]
        try:
            self.values[section][key] = conv(text)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from None


def defaults() -> RunConfig:
    return RunConfig({s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})


def load_config(path: str | Path | None) -> RunConfig:
    """Parse and validate a config file against :data:`SCHEMA`."""
    cfg = defaults()
    if path is None:
        return cfg
    path = Path(path)
    text = path.read_text()
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=("#",), strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(path))
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside of a section", exc.lineno, str(path)) from None
    except configparser.ParsingError as exc:
        ln = exc.errors[0][0] if exc.errors else None
        raise ConfigError("syntax error", ln, str(path)) from None
    except (configparser.DuplicateSectionError, configparser.DuplicateOptionError) as exc:
        raise ConfigError(str(exc.message if hasattr(exc, "message") else exc).split(": ", 1)[-1],
                          exc.lineno, str(path)) from None
    lines, section = {}, None
    for i, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        m = re.match(r"^\[(.+)\]$", s)
        if m:
            section = m.group(1).strip()
            lines[(section, None)] = i
        elif section and "=" in s and not s.startswith(("#", ";")):
            lines[(section, s.split("=", 1)[0].strip())] = i
    cfg.lines, cfg.path = lines, str(path)
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]", lines.get((sec, None)), str(path))
        for key, val in cp.items(sec):
            ln = lines.get((sec, key))
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]", ln, str(path))
            try:
                cfg.set(sec, key, val)
            except ConfigError as exc:
                raise ConfigError(str(exc), ln, str(path)) from None
    if cfg["run"]["version"] != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {cfg['run']['version']}",
                          lines.get(("run", "version")), str(path))
    return cfg


def validate(cfg: RunConfig, command: str) -> None:
    """Cross-field rules checked before any computation."""
    def line(sec, key):
        return cfg.lines.get((sec, key))

    def blame(sec, exc):
        # the first key of the section named in the message, else the header
        for key in SCHEMA[sec]:
            if re.search(rf"\b{key}\b", str(exc)) and line(sec, key):
                return line(sec, key)
        return line(sec, None)
    try:
        model = cfg.model()
    except ValueError as exc:
        raise ConfigError(f"[model] {exc}", blame("model", exc), cfg.path) from None
    try:
        cfg.step()
    except ValueError as exc:
        raise ConfigError(f"[step] {exc}", blame("step", exc), cfg.path) from None
    st = cfg["study"]
    if st["eps_seq"] is not None:
        e = st["eps_seq"]
        if any(v <= 0 for v in e) or any(b >= a for a, b in zip(e, e[1:])):
            raise ConfigError("eps_seq must be positive and strictly decreasing",
                              line("study", "eps_seq"), cfg.path)
    if st["ratio"] < 2:
        raise ConfigError(f"under-resolved interface: eps/h = {st['ratio']} < 2",
                          line("study", "ratio"), cfg.path)
    if command in ("simulate", "species-check"):
        g = cfg["grid"]
        h = g["extent"] / g["cells"]
        if model.eps < 2 * h:
            raise ConfigError(f"under-resolved interface: eps = {model.eps} < 2h = {2 * h:.4g}",
                              line("model", "eps") or line("grid", "cells"), cfg.path)
        if g["dim"] not in (1, 2, 3):
            raise ConfigError("grid dim must be 1, 2 or 3", line("grid", "dim"), cfg.path)
        sim = cfg["simulate"]
        for key in ("membrane", "cortex"):
            if sim[key] is not None and G.parse_surface(sim[key]).dim != g["dim"]:
                raise ConfigError(f"{key} surface dimension differs from the grid",
                                  line("simulate", key), cfg.path)


# =============================================================================
# results and reports
# =============================================================================

@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float | str
    order: float | None = None
    detail: dict = field(default_factory=dict)

    def row(self) -> list:
        o = "" if self.order is None or not np.isfinite(self.order) else f"{self.order:.3f}"
        return [self.name, "pass" if self.passed else "FAIL", f"{self.value:.6g}",
                str(self.tolerance), o]


REPORT_HEADER = ["check", "status", "value", "tolerance", "order"]


def report(results: list, out: str | Path | None = None, title: str = "Report") -> int:
    """Markdown table and CSV of the results; returns the exit status
    (0 when all pass, 1 otherwise)."""
    lines = [f"# {title}", "", "| " + " | ".join(REPORT_HEADER) + " |",
             "|" + "---|" * len(REPORT_HEADER)]
    for r in results:
        lines.append("| " + " | ".join(r.row()) + " |")
    md = "\n".join(lines) + "\n"
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.md").write_text(md)
        with open(out / "report.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_HEADER)
            for r in results:
                w.writerow(r.row())
    else:
        click.echo(md)
    return EXIT_PASS if all(r.passed for r in results) else EXIT_FAIL


def _sidecar(path: Path, cfg: RunConfig, payload: dict) -> Path:
    data = {"config": cfg.resolved(), "config_path": cfg.path, **payload}
    path.write_text(json.dumps(data, indent=2, default=_json_default))
    return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def write_summary(out: Path, cfg: RunConfig, command: str, results: list, extra: dict | None = None) -> Path:
    payload = {"command": command, "passed": all(r.passed for r in results),
               "checks": [asdict(r) for r in results], **(extra or {})}
    return _sidecar(out / "summary.json", cfg, payload)


# =============================================================================
# commands
# =============================================================================

def cmd_profile_check(cfg: RunConfig, out: Path) -> list:
    pc, tol = cfg["profile"], cfg["tolerances"]
    suite = A.profile_suite(z_max=pc["z_max"], h=pc["h"])
    res = [CheckResult("profile ODE residual g", suite["g_sup"] <= tol["profile"], suite["g_sup"], tol["profile"]),
           CheckResult("Z constant", abs(suite["Z"] - A.Z_EXACT) <= tol["z_const"],
                       abs(suite["Z"] - A.Z_EXACT), tol["z_const"], detail={"Z": suite["Z"]}),
           CheckResult("s1 residual", suite["s1_residual"] <= tol["s1"], suite["s1_residual"], tol["s1"])]
    for k, v in suite.items():
        if k.startswith("e-"):
            res.append(CheckResult(k, v <= tol["expansion"], v, tol["expansion"]))
    z = G.Profile.grid(pc["tail_z_max"], pc["h"])
    tail = float(1 - np.tanh(z[-1] / np.sqrt(2)))
    res.append(CheckResult(f"tail at z_max={pc['tail_z_max']:g}", tail <= tol["tail"], tail, tol["tail"]))
    zg = G.Profile.grid(pc["z_max"], pc["h"], A.LD)
    s = A.expansion_series(2.0, 1.0, pc["z_max"], pc["h"])
    G.Profile(zg, G.optimal_profile(zg)[0]).to_csv(out / "phi0.csv")
    s.s1.to_csv(out / "s1.csv")
    A.profile_ode_residual(G.Profile(zg, G.optimal_profile(zg)[0])).to_csv(out / "g_residual.csv")
    s.profile("e", -1).to_csv(out / "e-1_sphere.csv")
    return res


def _sample_points(Sf: G.Surface, n: int, offset: float) -> np.ndarray:
    q = Sf.quadrature(max(n, 4)).points
    idx = np.linspace(0, len(q) - 1, n).astype(int)
    q = q[idx]
    return q + offset * Sf.normal(q)


def cmd_geometry_check(cfg: RunConfig, out: Path) -> list:
    gc, tol = cfg["geometry"], cfg["tolerances"]
    res, rows = [], []
    for text in gc["surfaces"].split(";"):
        Sf = G.parse_surface(text.strip())
        x = _sample_points(Sf, gc["points"], gc["offset"])
        ci = G.curvature_identities(Sf, x, gc["h"])
        e1 = float(np.max(np.abs(ci.normal_derivative_fd - ci.normal_derivative) /
                          np.maximum(np.abs(ci.normal_derivative), 1e-300)))
        e2 = float(np.max(np.abs(ci.hessian_normal_fd - ci.hessian_normal) /
                          np.maximum(np.abs(ci.hessian_normal), 1e-300)))
        q = Sf.project(x)
        slope = G.tube_expansion_order(Sf, q)
        # |grad d| = 1 by central differences
        hh = 1e-4
        grad = np.stack([(Sf.signed_distance(x + hh * np.eye(Sf.dim)[a]) -
                          Sf.signed_distance(x - hh * np.eye(Sf.dim)[a])) / (2 * hh)
                         for a in range(Sf.dim)], -1)
        eik = float(np.max(np.abs(np.linalg.norm(grad, axis=-1) - 1)))
        res += [CheckResult(f"{text}: dH/dnu = H^2-2K", e1 <= tol["curvature"], e1, tol["curvature"]),
                CheckResult(f"{text}: d2H/dnu2 = 2H(H^2-3K)", e2 <= tol["curvature"], e2, tol["curvature"]),
                CheckResult(f"{text}: tube expansion slope", tol["slope_lo"] <= slope <= tol["slope_hi"],
                            slope, f"[{tol['slope_lo']}, {tol['slope_hi']}]"),
                CheckResult(f"{text}: |grad d| - 1", eik <= 1e-6, eik, 1e-6)]
        rows.append([text, e1, e2, slope, eik])
    with open(out / "geometry.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["surface", "rel_err_normal_derivative", "rel_err_hessian", "tube_slope", "eikonal"])
        w.writerows(rows)
    return res


def _kernel_sq(z):
    return optimal_dphi(z) ** 2


def optimal_dphi(z):
    return G.optimal_profile(np.asarray(z, float))[1]


def _test_function(name: str) -> Callable:
    if name == "one":
        return lambda x: np.ones(x.shape[:-1])
    return lambda x: 1 + x[..., 0] ** 2 + 0.5 * x[..., -1]


def cmd_concentration(cfg: RunConfig, out: Path) -> list:
    st, tol = cfg["study"], cfg["tolerances"]
    Sf = G.parse_surface(st["surface"] or "sphere:1")
    eps = st["eps_seq"] or [0.04, 0.02, 0.01]
    study = A.concentration_study(_kernel_sq, _test_function(st["function"]), Sf, eps, st["ratio"])
    study.to_csv(out / "concentration.csv")
    err = study.errors
    dec = bool(np.all(np.diff(err) < 0))
    ok = dec and err[-1] <= tol["concentration"]
    _sidecar(out / "concentration.json", cfg, {"study": study.summary(), "passed": ok})
    return [CheckResult(f"concentration on {Sf.kind}", ok, float(err[-1]), tol["concentration"],
                        study.order, {"strictly_decreasing": dec})]


def _psi(name: str, kind: str, Sf: G.Surface):
    if name == "auto":
        name = {"gl": "radial-bump", "willmore": "normal-x"}.get(kind, "linear")
    if name == "radial-bump":
        c = np.asarray(Sf.center, float)
        return lambda x: (x - c) * np.exp(-np.sum((x - c) ** 2, -1))[..., None]
    if name == "normal-x":
        return A.normal_extended(lambda q: (q[..., 0] - Sf.center[0]) * Sf.normal(q)[..., 0], Sf)
    if Sf.dim != 2:
        return lambda x: x + 0.1 * x[..., ::-1]
    return lambda x: np.stack([x[..., 0] + 0.5 * x[..., 1] + 0.2,
                               x[..., 1] - 0.3 * x[..., 0] + 0.1 * x[..., 0] ** 2], -1)


def default_study(kind: str, Sf: G.Surface) -> dict:
    """Default eps sequence and resolution rule per study kind."""
    if kind == "gl":
        return {"eps_seq": [0.04, 0.02, 0.01], "law": 0.0, "richardson": 1}
    if kind == "willmore":
        if Sf.kind in ("sphere", "circle"):
            r = Sf.feature_radius
            return {"eps_seq": [0.16 * r, 0.12 * r, 0.09 * r], "law": 1.5, "richardson": 1}
        return {"eps_seq": [0.14, 0.1, 0.07], "law": 0.0, "richardson": 2}
    return {"eps_seq": [0.04, 0.03, 0.02], "law": 0.0, "richardson": 1}


def cmd_force_limit(cfg: RunConfig, out: Path) -> list:
    st, tol = cfg["study"], cfg["tolerances"]
    kind = st["kind"]
    p = cfg.model()
    if kind in ("gl", "willmore"):
        Sf = G.parse_surface(st["surface"] or "sphere:0.3")
        d = default_study(kind, Sf)
        eps = st["eps_seq"] or d["eps_seq"]
        law = d["law"] if st["law"] is None else st["law"]
        rich = d["richardson"] if st["richardson"] is None else st["richardson"]
        sym = (Sf.dim == 3) if st["symmetric"] is None else st["symmetric"]
        study = A.force_limit_study(kind, Sf, _psi(st["psi"], kind, Sf), eps, p, st["ratio"], law,
                                    rich, sym)
        study.to_csv(out / f"force_{kind}.csv")
        err = study.errors
        if kind == "gl":
            ok_err, ok_ord = err[-1] <= tol["gl"], study.order >= tol["gl_order"]
            ok = bool(ok_err and ok_ord)
            res = [CheckResult(f"gl force limit on {Sf.kind}", ok, float(err[-1]), tol["gl"], study.order,
                               {"order_ok": bool(ok_ord)})]
        elif study.reference == 0 or abs(study.reference) < 1e-10 * max(1.0, np.max(np.abs(study.measured))):
            mags = np.abs(study.measured)
            ok = bool(np.all(np.diff(mags) < 0))
            res = [CheckResult(f"willmore force on {Sf.kind} decreasing to 0", ok, float(mags[-1]),
                               "decreasing", study.order)]
        else:
            ok = bool(err[-1] <= tol["willmore"])
            res = [CheckResult(f"willmore force limit on {Sf.kind}", ok, float(err[-1]), tol["willmore"],
                               study.order, {"fitted_constant": study.extra["fitted_constant"],
                                             "Z": A.Z_EXACT})]
        _sidecar(out / f"force_{kind}.json", cfg, {"study": study.summary(), "passed": res[0].passed})
        return res
    Sm = G.parse_surface(st["surface"] or "circle:0.45@0.05,0")
    Sc = G.parse_surface(st["cortex"] or "circle:0.3")
    eps = st["eps_seq"] or default_study(kind, Sm)["eps_seq"]
    ca = lambda q: 1 + 0.5 * np.cos(np.arctan2(q[..., 1] - Sc.center[1], q[..., 0] - Sc.center[0]))
    studies = A.force_limit_study("coupling", Sm, _psi(st["psi"], kind, Sm), eps, p, st["ratio"],
                                  st["law"] or 0.0, cortex=Sc, c_a=ca, factor=st["factor"])
    if kind != "coupling":
        studies = {kind: studies[kind]}
    res = []
    for k, s in studies.items():
        s.to_csv(out / f"force_{k}.csv")
        fac = s.extra["factor"]
        dev = abs(s.extra["fitted_factor"] / fac - 1)
        ok = bool(dev <= tol["coupling"])
        _sidecar(out / f"force_{k}.json", cfg, {"study": s.summary(), "passed": ok})
        res.append(CheckResult(f"{k} factor ({st['factor']})", ok, dev, tol["coupling"], s.order,
                               {"fitted_factor": s.extra["fitted_factor"], "factor": fac}))
    return res


def _grid(cfg: RunConfig) -> Grid:
    g = cfg["grid"]
    L = g["extent"]
    return Grid((L,) * g["dim"], (g["cells"],) * g["dim"], g["boundary"], (-L / 2,) * g["dim"])


def build_state(cfg: RunConfig, rng: np.random.Generator | None = None) -> tuple:
    """Grid, parameters and initial state of a ``simulate`` run."""
    grid = _grid(cfg)
    p = cfg.model()
    sim = cfg["simulate"]
    Sm = G.parse_surface(sim["membrane"]) if sim["membrane"] else None
    Sc = G.parse_surface(sim["cortex"]) if sim["cortex"] else None
    pm = G.build_phase_field(Sm, p.eps, grid) if Sm else None
    pc = G.build_phase_field(Sc, p.eps, grid) if Sc else None
    if rng is not None and sim["noise"] > 0:
        pm = fd.ScalarField(grid, pm.values + sim["noise"] * rng.standard_normal(grid.shape)) if pm else None
    ca = ci = None
    if Sc is not None:
        ca = S.initial_species(Sc, lambda q: np.full(q.shape[:-1], sim["c_a"]), grid, p)
        ci = S.initial_species(Sc, lambda q: np.full(q.shape[:-1], sim["c_i"]), grid, p)
    return grid, p, S.PhaseState.from_fields(grid, pm, pc, ca, ci)


def cmd_simulate(cfg: RunConfig, out: Path) -> list:
    tol = cfg["tolerances"]
    sim = cfg["simulate"]
    rng = np.random.default_rng(cfg["run"]["seed"])
    grid, p, st0 = build_state(cfg, rng)
    step_cfg = cfg.step()
    traj = S.run(st0, p, step_cfg, steps=sim["steps"], out=out, checkpoint_every=sim["checkpoint_every"])
    fin = traj.final
    res = []
    for name in ("phi_m", "phi_c"):
        m0 = float(np.sum(getattr(st0, name).values))
        m1 = float(np.sum(getattr(fin, name).values))
        drift = abs(m1 - m0) / max(abs(m0), 1e-300)
        res.append(CheckResult(f"mass drift {name}", drift <= tol["drift"], drift, tol["drift"]))
    div = float(np.max(np.abs(S.mac_divergence(fin.u))))
    res.append(CheckResult("max |div u|", div <= tol["div"], div, tol["div"]))
    E = traj.series("total")
    F0 = abs(E[0]) if E[0] else 1.0
    inc = float(np.max(np.diff(E))) / F0 if len(E) > 1 else 0.0
    res.append(CheckResult("energy increase per step / E(0)", inc <= tol["energy_slack"], inc,
                           tol["energy_slack"]))
    if sim["vtk"]:
        for name in ("phi_m", "phi_c", "c_a", "c_i", "p"):
            fd.write_vtk(out / f"{name}.vtk", getattr(fin, name), name)
    S.write_checkpoint(out / "final", fin, {"config": cfg.resolved()})
    return res


def species_checks(p: ModelParams, grid: Grid, cortex: G.Surface, membrane: G.Surface | None,
                   steps: int, dt: float) -> list:
    """Reaction exchange, weighted diffusion and linear decay checks."""
    pm = G.build_phase_field(membrane, p.eps, grid) if membrane else None
    pc = G.build_phase_field(cortex, p.eps, grid)
    c = np.asarray(cortex.center, float)
    ca = S.initial_species(cortex, lambda q: 1 + 0.5 * (q[..., 0] - c[0]) / cortex.feature_radius, grid, p)
    ci = S.initial_species(cortex, lambda q: np.full(q.shape[:-1], 0.5), grid, p)
    st = S.PhaseState.from_fields(grid, pm, pc, ca, ci)
    out = {}
    # reaction-only exchange
    q = p.replace(beta=max(p.beta, 1.0), zeta0=max(p.zeta0, 1.0))
    cfg = S.StepConfig(dt=dt, evolve_fluid=False, evolve_phase=False, reaction_only=True)
    m0 = S.weighted_mass(st, q)
    s = st
    for _ in range(steps):
        s = S.step_species(s, q, cfg)
    out["reaction_drift"] = abs(S.weighted_mass(s, q) - m0) / m0
    # weighted diffusion on a stationary tube
    q = p.replace(beta=0.0, zeta0=0.0)
    cfg = S.StepConfig(dt=dt, evolve_fluid=False, evolve_phase=False)
    e, act = S.species_weight(st, q)

    def stats(state):
        v = state.c_a.values[act]
        w = e[act]
        mean = np.sum(w * v) / np.sum(w)
        return np.sum(w * v), np.sum(w * (v - mean) ** 2)
    m0, v0 = stats(st)
    s, var = st, [v0]
    for _ in range(steps):
        s = S.step_species(s, q, cfg)
        var.append(stats(s)[1])
    out["diffusion_drift"] = abs(stats(s)[0] - m0) / m0
    out["variance_decreasing"] = bool(np.all(np.diff(var) < 0))
    # linear decay of c_i with zeta = 0
    q = p.replace(beta=2.0, zeta0=0.0, D_a=0.0, D_i=0.0)
    errs = []
    for k in (1, 2):
        cfg = S.StepConfig(dt=dt / k, evolve_fluid=False, evolve_phase=False, reaction_only=True)
        s = st
        for _ in range(steps * k):
            s = S.step_species(s, q, cfg)
        T = steps * dt
        ref = st.c_i.values[act] * np.exp(-q.beta * T)
        errs.append(float(np.max(np.abs(s.c_i.values[act] - ref))))
    out["decay_errors"] = errs
    out["decay_ratio"] = errs[0] / errs[1]
    return out


def cmd_species_check(cfg: RunConfig, out: Path) -> list:
    tol = cfg["tolerances"]
    sim, sp_ = cfg["simulate"], cfg["species"]
    grid = _grid(cfg)
    Sc = G.parse_surface(sim["cortex"] or "circle:0.2")
    Sm = G.parse_surface(sim["membrane"]) if sim["membrane"] else None
    r = species_checks(cfg.model(), grid, Sc, Sm, sp_["steps"], sp_["dt"])
    _sidecar(out / "species.json", cfg, {"results": r})
    return [CheckResult("reaction-only weighted mass drift", r["reaction_drift"] <= tol["drift"],
                        r["reaction_drift"], tol["drift"]),
            CheckResult("weighted diffusion mass drift", r["diffusion_drift"] <= tol["species_drift"],
                        r["diffusion_drift"], tol["species_drift"]),
            CheckResult("tube variance strictly decreasing", r["variance_decreasing"],
                        float(r["variance_decreasing"]), "true"),
            CheckResult("c_i decay error ratio under dt halving", 1.6 <= r["decay_ratio"] <= 2.4,
                        r["decay_ratio"], "[1.6, 2.4]", detail={"errors": r["decay_errors"]})]


COMMANDS = {
    "profile-check": cmd_profile_check,
    "geometry-check": cmd_geometry_check,
    "concentration": cmd_concentration,
    "force-limit": cmd_force_limit,
    "simulate": cmd_simulate,
    "species-check": cmd_species_check,
}


# =============================================================================
# click front end
# =============================================================================

def _set_threads(n: int) -> None:
    import warnings

    import numba
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))
        except ValueError:
            pass


def execute(command: str, config: str | None = None, out: str | None = None, eps_seq: str | None = None,
            surface: str | None = None, seed: int | None = None, threads: int | None = None,
            overrides: dict | None = None) -> int:
    """Run one subcommand; returns the exit status."""
    try:
        cfg = load_config(config)
        if eps_seq:
            cfg.set("study", "eps_seq", eps_seq)
        if surface:
            cfg.set("study", "surface", surface)
            if command in ("simulate", "species-check"):
                cfg.set("simulate", "membrane", surface)
        if seed is not None:
            cfg["run"]["seed"] = seed
        if threads is not None:
            cfg["run"]["threads"] = threads
        if out is not None:
            cfg["run"]["out"] = out
        for (sec, key), val in (overrides or {}).items():
            if sec not in SCHEMA or key not in SCHEMA[sec]:
                raise ConfigError(f"unknown option [{sec}] {key}")
            cfg.set(sec, key, str(val))
        validate(cfg, command)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return EXIT_CONFIG
    _set_threads(cfg["run"]["threads"])
    outdir = Path(cfg["run"]["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        with np.errstate(over="raise", invalid="raise", divide="ignore"):
            results = COMMANDS[command](cfg, outdir)
    except (S.SolverError, FloatingPointError, np.linalg.LinAlgError, G.GeometryError) as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        _sidecar(outdir / "summary.json", cfg, {"command": command, "passed": False,
                                                "numeric_failure": str(exc)})
        return EXIT_NUMERIC
    write_summary(outdir, cfg, command, results, {"runtime_s": time.perf_counter() - t0})
    status = report(results, outdir, title=command)
    for r in results:
        click.echo(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.value:.6g} (tol {r.tolerance})")
    return status


def _common(f):
    f = click.option("--threads", type=int, default=None, help="Worker threads.")(f)
    f = click.option("--seed", type=int, default=None, help="Random seed.")(f)
    f = click.option("--surface", default=None, help="Surface as kind:params[@centre].")(f)
    f = click.option("--eps-seq", default=None, help="Comma-separated decreasing eps values.")(f)
    f = click.option("--out", default=None, type=click.Path(), help="Output directory.")(f)
    f = click.option("--config", default=None, type=click.Path(exists=True, dir_okay=False),
                     help="Configuration file.")(f)
    return f


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress.")
def cli(verbose):
    """Diffuse-interface membrane/cortex model: checks, studies and runs."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


HELP = {
    "profile-check": "One-dimensional profile and expansion residuals.",
    "geometry-check": "Curvature identities and tube expansion order.",
    "concentration": "Concentration of diffuse integrals onto a surface.",
    "force-limit": "Diffuse force functionals against their sharp limits.",
    "simulate": "Time integration of the coupled system.",
    "species-check": "Conservation and decay checks of the linker equations.",
}


def _make(name: str):
    def cmd(kind=None, **kw):
        over = {("study", "kind"): kind} if kind else {}
        sys.exit(execute(name, overrides=over, **kw))
    cmd = _common(cmd)
    if name == "force-limit":
        cmd = click.option("--kind", type=click.Choice(list(A.KINDS) + ["coupling"]), default=None,
                           help="Force study kind.")(cmd)
    return cli.command(name, help=HELP[name])(cmd)


for _name in COMMANDS:
    _make(_name)


def main(argv=None):
    return cli.main(args=argv, prog_name="blebbing")


if __name__ == "__main__":
    main()
