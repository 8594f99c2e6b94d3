"""Batch front end: ``diracspec <command> --config run.yaml --out results/``.

Every command writes ``<command>.csv`` (first line names the columns and their
units) and ``<command>.json`` holding the full configuration with defaults
filled in, the library version and the command's summary. Exit codes: 0 ok,
1 numerical anomaly, 2 configuration error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
from pathlib import Path

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import __version__
from .boundary import (PRESETS, BoundaryError, BoundaryForm, classify, green0_apply,
                       resolvent0_norm_scan)
from .diagnostics import (asymptotics_report, basis_report, eigenfunction_asymptotics,
                          traceless)
from .potential import GridFunction, Potential, lp_norm, normalize_trace, weight_E
from .quadrature import PI, Mesh
from .solutions import DomainError, fundamental_pair, pruefer_solve
from .spectrum import SpectrumError, free_reference, localize

COMMANDS = ("classify", "spectrum0", "fundsys", "pruefer", "spectrum", "green0", "verify", "gauge")

DEFAULTS = {
    "potential": {"kind": "expression", "q1": 0, "q2": 0, "q3": 0, "q4": 0, "p_class": 2.0,
                  "breakpoints": [], "singular": [], "edges": None, "pieces": None},
    "boundary": {"preset": "dirichlet", "alpha": 0.5, "matrix": None},
    "solver": {"alpha": 1.0, "eps": 0.4, "p": None, "grid_size": 4097, "biorth_tol": 1e-6,
               "gauge_tol": 1e-8},
    "command": {"n_range": [-10, 10], "lambdas": [10.0], "x_points": 65, "kind": "s",
                "lam": [0.0, 5.0], "f": ["sin(x)", "cos(2*x)"], "taus": [4, 8, 16, 32],
                "n_probes": 64, "N": 16, "bracket": False},
    "seed": 0,
}


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"config error at {path}: {message}")


# config parsing -------------------------------------------------------------------

def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        where = f"{path}.{k}" if path else k
        if k not in base:
            raise ConfigError(where, "unknown key")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(where, "expected a mapping")
            out[k] = _merge(base[k], v, where)
        else:
            out[k] = v
    return out


def _complex(v, path: str) -> complex:
    if isinstance(v, (list, tuple)):
        if len(v) != 2:
            raise ConfigError(path, f"complex numbers are [re, im] pairs, got {v!r}")
        return complex(float(v[0]), float(v[1]))
    try:
        return complex(v)
    except (TypeError, ValueError):
        raise ConfigError(path, f"not a number: {v!r}") from None


def _real(v, path: str, positive: bool = False) -> float:
    try:
        r = float(v)
    except (TypeError, ValueError):
        raise ConfigError(path, f"not a real number: {v!r}") from None
    if positive and not r > 0:
        raise ConfigError(path, f"must be positive, got {r}")
    return r


def _int(v, path: str, minimum: int | None = None) -> int:
    if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
        raise ConfigError(path, f"not an integer: {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(path, f"must be >= {minimum}, got {v}")
    return int(v)


def _entry(v, path: str):
    if isinstance(v, str):
        return v
    return _complex(v, path)


def build_potential(cfg: dict) -> Potential:
    kind = cfg["kind"]
    kw = {"p_class": _real(cfg["p_class"], "potential.p_class"),
          "singular": tuple(_real(s, "potential.singular") for s in cfg["singular"] or ())}
    names = ("q1", "q2", "q3", "q4")
    try:
        if kind == "expression":
            ents = {q: _entry(cfg[q], f"potential.{q}") for q in names}
            if all(not isinstance(e, str) and e == 0 for e in ents.values()):
                return Potential.zero()
            kw["breakpoints"] = tuple(_real(b, "potential.breakpoints")
                                      for b in cfg["breakpoints"] or ())
            return Potential.from_expressions(**ents, **kw)
        if kind == "grid":
            vals, size = {}, None
            for q in names:
                v = cfg[q]
                if isinstance(v, (int, float)) and v == 0:
                    continue
                if not isinstance(v, list) or len(v) < 2:
                    raise ConfigError(f"potential.{q}", "grid entries are lists of samples")
                vals[q] = np.array([_complex(s, f"potential.{q}[{i}]") for i, s in enumerate(v)])
                if size is not None and vals[q].size != size:
                    raise ConfigError(f"potential.{q}", "all grid entries need the same length")
                size = vals[q].size
            if size is None:
                return Potential.zero()
            return Potential.from_grid(np.linspace(0, PI, size), **vals, **kw)
        if kind == "piecewise":
            edges = cfg.get("edges")
            pieces = cfg.get("pieces")
            if edges is None or pieces is None:
                raise ConfigError("potential", "piecewise potentials need 'edges' and 'pieces'")
            pcs = [{q: _entry(pc.get(q, 0), f"potential.pieces[{i}].{q}") for q in names}
                   for i, pc in enumerate(pieces)]
            return Potential.piecewise([_real(e, "potential.edges") for e in edges], pcs, **kw)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("potential", str(exc)) from None
    raise ConfigError("potential.kind", f"expected expression, grid or piecewise, got {kind!r}")


def build_boundary(cfg: dict) -> BoundaryForm:
    if cfg["matrix"] is not None:
        m = cfg["matrix"]
        if not isinstance(m, list) or len(m) != 2 or any(
                not isinstance(r, list) or len(r) != 4 for r in m):
            shape = (f"{len(m)}x{len(m[0])}" if isinstance(m, list) and m
                     and isinstance(m[0], list) else repr(m))
            raise ConfigError("boundary.matrix", f"expected a 2x4 matrix, got {shape}")
        M = np.array([[_complex(v, f"boundary.matrix[{i}][{j}]") for j, v in enumerate(r)]
                      for i, r in enumerate(m)])
        try:
            return BoundaryForm(M, label="custom")
        except BoundaryError as exc:
            raise ConfigError("boundary.matrix", str(exc)) from None
    if cfg["preset"] not in PRESETS:
        raise ConfigError("boundary.preset", f"unknown preset {cfg['preset']!r}; "
                          f"choose from {', '.join(PRESETS)}")
    return BoundaryForm.preset(cfg["preset"], _real(cfg["alpha"], "boundary.alpha"))


def load_config(path: str | None, seed: int | None = None, preset: str | None = None) -> dict:
    user = {}
    if path is not None:
        try:
            with open(path) as fh:
                user = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError("--config", str(exc)) from None
        except yaml.YAMLError as exc:
            raise ConfigError("--config", f"not valid YAML: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("<root>", "expected a mapping")
    cfg = _merge(DEFAULTS, user)
    if seed is not None:
        cfg["seed"] = seed
    if preset is not None:
        cfg["boundary"]["preset"] = preset
        cfg["boundary"]["matrix"] = None
    if cfg["boundary"]["matrix"] is not None:
        cfg["boundary"]["preset"] = None
    if cfg["solver"]["p"] is None:
        cfg["solver"]["p"] = cfg["potential"]["p_class"]
    _int(cfg["seed"], "seed", 0)
    s = cfg["solver"]
    for key in ("alpha", "eps", "biorth_tol", "gauge_tol"):
        _real(s[key], f"solver.{key}", positive=True)
    _int(s["grid_size"], "solver.grid_size", 3)
    c = cfg["command"]
    nr = c["n_range"]
    if not (isinstance(nr, list) and len(nr) == 2):
        raise ConfigError("command.n_range", "expected [n_min, n_max]")
    lo, hi = (_int(v, "command.n_range") for v in nr)
    if lo > hi:
        raise ConfigError("command.n_range", "n_min exceeds n_max")
    _int(c["x_points"], "command.x_points", 2)
    _int(c["N"], "command.N", 1)
    _int(c["n_probes"], "command.n_probes", 1)
    if c["kind"] not in ("s", "c"):
        raise ConfigError("command.kind", "expected 's' or 'c'")
    return cfg


# output ---------------------------------------------------------------------------

def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (complex, np.complexfloating)):
        return [_jsonable(float(v.real)), _jsonable(float(v.imag))]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return None if not np.isfinite(v) else float(v)
    return v


def _cell(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_outputs(out: Path, name: str, tables: dict, summary: dict, cfg: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for suffix, (header, rows) in tables.items():
        fname = f"{name}.csv" if suffix == "" else f"{name}_{suffix}.csv"
        with open(out / fname, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_cell(v) for v in r])
    side = {"command": name, "version": __version__, "config": cfg, "summary": summary}
    with open(out / f"{name}.json", "w") as fh:
        json.dump(_jsonable(side), fh, indent=2, sort_keys=True)
        fh.write("\n")


# commands -------------------------------------------------------------------------

def _n_range(cfg):
    lo, hi = cfg["command"]["n_range"]
    return range(lo, hi + 1)


def _lambdas(cfg) -> list[complex]:
    lams = cfg["command"]["lambdas"]
    if not isinstance(lams, list) or not lams:
        raise ConfigError("command.lambdas", "expected a non-empty list")
    return [_complex(v, f"command.lambdas[{i}]") for i, v in enumerate(lams)]


def _output_mesh(Q: Potential, lam_scale: float, n_out: int) -> tuple[Mesh, np.ndarray]:
    """Mesh resolving frequency lam_scale whose panel edges include n_out uniform points."""
    base = Mesh.for_frequency(lam_scale, Q.breakpoints, Q.singular).edges
    uni = np.linspace(0, PI, n_out)
    keep = np.min(np.abs(base[:, None] - uni[None, :]), axis=1) > 1e-9
    edges = np.sort(np.concatenate([uni, base[keep]]))
    mesh = Mesh(edges)
    return mesh, mesh.edge_index[np.searchsorted(edges, uni)]


def cmd_classify(Q, U, cfg):
    E = complex(weight_E(Q, PI))
    c = classify(U, E)
    d = c.as_dict()
    d["kind"] = d["class"]
    d["E_pi"] = E
    a, b2, cc = c.coefficients
    rows = [[nm, v.real, v.imag] for nm, v in (("a", a), ("2b", b2), ("c", cc),
                                              ("discriminant", c.discriminant))]
    return {"": (["coefficient[-]", "re[-]", "im[-]"], rows)}, d, []


def cmd_spectrum0(Q, U, cfg):
    Up, sp = free_reference(Q, U)
    rows = [[n, lam.real, lam.imag, m] for n, lam, m in sp.points(_n_range(cfg))] \
        if sp.kind != "empty" else []
    summary = {"kind": sp.kind, "kappa": list(sp.kappa), "roots": list(sp.roots),
               "class": sp.classification.regularity.value}
    return {"": (["n[index]", "re_lambda0[1/length]", "im_lambda0[1/length]",
                  "multiplicity[count]"], rows)}, summary, []


def cmd_fundsys(Q, U, cfg):
    lams = _lambdas(cfg)
    scale = max(abs(l.real) + abs(l.imag) for l in lams) + 1
    mesh, idx = _output_mesh(Q, scale, cfg["command"]["x_points"])
    rows, summary = [], []
    for lam in lams:
        fp = fundamental_pair(Q, lam, mesh=mesh)
        C = fp.matrix()[idx]
        for x, M in zip(mesh.x[idx], C):
            rows.append([lam.real, lam.imag, x] + [v for z in (M[0, 0], M[1, 0], M[0, 1], M[1, 1])
                                                   for v in (z.real, z.imag)])
        summary.append({"lambda": lam, "wronskian_pi": fp.wronskian()[-1],
                        "err_estimate": fp.err_estimate})
    header = ["re_lambda[1/length]", "im_lambda[1/length]", "x[length]"] + [
        f"{p}_{nm}[-]" for nm in ("c1", "c2", "s1", "s2") for p in ("re", "im")]
    return {"": (header, rows)}, {"solutions": summary}, []


def cmd_pruefer(Q, U, cfg):
    # the phase/amplitude form needs q4 = -q1
    Q, shift = traceless(Q)
    lams = _lambdas(cfg)
    kind = cfg["command"]["kind"]
    alpha = cfg["solver"]["alpha"]
    scale = max(abs(l.real) + abs(l.imag) for l in lams) + 1
    mesh, idx = _output_mesh(Q, scale, cfg["command"]["x_points"])
    rows, summary, flags = [], [], []
    for lam in lams:
        sol = pruefer_solve(Q, lam, alpha, kind, mesh, strict=False)
        if not sol.in_domain:
            flags.append(f"lambda={lam}: outside D_(Q, alpha) (Upsilon {sol.Upsilon:.3e}, "
                         f"threshold {sol.threshold:.3e}); Picard convergence not guaranteed")
        direct = fundamental_pair(Q, lam, mesh=mesh)
        ref = direct.s if kind == "s" else direct.c
        diff = float(np.abs(sol.y - ref).max())
        for x, th, r in zip(mesh.x[idx], sol.theta[idx], sol.r[idx]):
            rows.append([lam.real, lam.imag, x, th.real, th.imag, r.real, r.imag])
        summary.append({"lambda": lam, "iterations": sol.iterations, "method": sol.method,
                        "observed_contraction": sol.observed_contraction,
                        "contraction_bound": sol.contraction_bound, "Upsilon": sol.Upsilon,
                        "Upsilon_nu": sol.Upsilon_nu, "threshold": sol.threshold,
                        "in_domain": sol.in_domain,
                        "max_diff_direct": diff})
        if sol.observed_contraction > sol.contraction_bound:
            flags.append(f"lambda={lam}: observed contraction exceeds the bound")
    header = ["re_lambda[1/length]", "im_lambda[1/length]", "x[length]", "re_theta[rad]",
              "im_theta[rad]", "re_r[-]", "im_r[-]"]
    return {"": (header, rows)}, {"kind": kind, "trace_shift": shift, "solutions": summary,
                                  "flags": flags}, flags


def cmd_spectrum(Q, U, cfg):
    pts = localize(Q, U, _n_range(cfg), cfg["solver"]["eps"])
    rows = [[p.n, p.lam.real, p.lam.imag, p.anchor.real, p.anchor.imag, p.radius,
             p.multiplicity, p.residual * p.scale] for p in pts]
    flags = [f"n={p.n}: winding {p.multiplicity} != expected {p.expected}"
             for p in pts if not p.ok]
    summary = {"count": len(pts), "members": {str(p.n): list(p.members) for p in pts
                                              if len(p.members) > 1},
               "flags": flags}
    header = ["n[index]", "re_lambda[1/length]", "im_lambda[1/length]", "re_lambda0[1/length]",
              "im_lambda0[1/length]", "radius[1/length]", "multiplicity[count]",
              "abs_delta[-]"]
    return {"": (header, rows)}, summary, flags


def cmd_green0(Q, U, cfg):
    c = cfg["command"]
    lam = _complex(c["lam"], "command.lam")
    f_src = c["f"]
    if not (isinstance(f_src, list) and len(f_src) == 2):
        raise ConfigError("command.f", "expected two component expressions")
    n = cfg["solver"]["grid_size"]
    x = np.linspace(0, PI, n)
    comp = Potential.from_expressions(q1=f_src[0], q2=f_src[1])
    f = GridFunction(x, np.stack([comp.q1(x), comp.q2(x)], -1))
    try:
        y = green0_apply(U, lam, f)
    except BoundaryError as exc:
        return {}, {"error": str(exc)}, [str(exc)]
    # residual -B y' - lam y - f with fourth-order differences in the interior
    h = x[1] - x[0]
    v = y.values
    dy = (v[:-4] - 8 * v[1:-3] + 8 * v[3:-1] - v[4:]) / (12 * h)
    Bdy = np.stack([dy[:, 1], -dy[:, 0]], -1)
    res = -Bdy - lam * v[2:-2] - f.values[2:-2]
    residual = float(np.abs(res).max() / max(1.0, np.abs(f.values).max()))
    scans = {}
    for p, q in ((2.0, 2.0), (1.0, 2.0), (1.0, np.inf)):
        try:
            sc = resolvent0_norm_scan(U, c["taus"], p, q, c["n_probes"], cfg["seed"])
            scans[f"{p:g}->{q:g}"] = {"slope": sc.slope, "expected": sc.expected_slope,
                                      "taus": sc.taus, "norms": sc.norms}
        except BoundaryError as exc:
            scans[f"{p:g}->{q:g}"] = {"error": str(exc)}
    stride = max(1, (n - 1) // (c["x_points"] - 1))
    rows = [[xi, *(t for z in yi for t in (z.real, z.imag))]
            for xi, yi in zip(x[::stride], v[::stride])]
    header = ["x[length]", "re_y1[-]", "im_y1[-]", "re_y2[-]", "im_y2[-]"]
    return {"": (header, rows)}, {"lambda": lam, "residual": residual, "resolvent": scans}, []


def cmd_verify(Q, U, cfg):
    s, c = cfg["solver"], cfg["command"]
    flags: list[str] = []
    rep = asymptotics_report(Q, U, _n_range(cfg), s["eps"], s["p"])
    flags += [f"n={p.n}: winding {p.multiplicity} != expected {p.expected}"
              for p in rep.points if not p.ok]
    res = rep.resolved
    flags += [f"n={n}: deviation exceeds r_n" for n in rep.n[res & ~rep.within_r]]
    flags += [f"n={n}: deviation exceeds (M/c) s_n(eps)" for n in rep.n[~rep.within_bound]]
    tables = {"asymptotics": (["n[index]", "re_lambda[1/length]", "im_lambda[1/length]",
                               "re_lambda0[1/length]", "im_lambda0[1/length]",
                               "deviation[1/length]", "s_eps[-]", "r_n[1/length]",
                               "bound[1/length]"], rep.rows())}
    Nps, sums = rep.partial_sums("s_eps")
    summary = {"asymptotics": {"M": rep.M, "strong": rep.strong, "nu": rep.nu,
                               "slope": rep.slope(max(1, int(np.min(np.abs(rep.n))))),
                               "resolved": int(res.sum()), "partial_sums_N": Nps,
                               "partial_sums_s": sums}}
    if rep.strong:
        ef = eigenfunction_asymptotics(Q, U, _n_range(cfg), s["eps"], s["p"])
        flags += ef.flags
        tables["eigenfunctions"] = (["n[index]", "b[-]", "b_adjoint[-]"],
                                    [[n, b, ba] for n, b, ba in zip(ef.n, ef.b, ef.b_adjoint)])
        summary["eigenfunctions"] = {"nu": ef.nu, "flags": ef.flags}
    basis = basis_report(Q, U, c["N"], "bracket" if c["bracket"] else "plain", s["eps"],
                         seed=cfg["seed"])
    if basis.biorthogonality_error > s["biorth_tol"]:
        flags.append(f"biorthogonality error {basis.biorthogonality_error:.2e} "
                     f"exceeds {s['biorth_tol']:g}")
    summary["basis"] = basis.as_dict()
    tables["basis"] = (["index[count]", "re_alpha[-]", "im_alpha[-]"],
                       [[i, a.real, a.imag] for i, a in enumerate(basis.alpha)])
    summary["flags"] = flags
    return tables, summary, flags


def cmd_gauge(Q, U, cfg):
    Qh, shift = normalize_trace(Q)
    trace = lp_norm(lambda x: Qh.q1(x) + Qh.q4(x), 1, like=Q)
    flags = []
    tol = cfg["solver"]["gauge_tol"]
    if trace > tol:
        flags.append(f"trace norm {trace:.2e} exceeds {tol:g}")
    p0 = localize(Q, U, _n_range(cfg), cfg["solver"]["eps"])
    p1 = localize(Qh, U, _n_range(cfg), cfg["solver"]["eps"])
    diff = max((abs(a.lam - (b.lam + shift)) for a, b in zip(p0, p1)), default=0.0)
    if diff > tol:
        flags.append(f"spectral shift mismatch {diff:.2e} exceeds {tol:g}")
    x = np.linspace(0, PI, cfg["command"]["x_points"])
    rows = [[xi, *(t for z in Qh.entries(xi) for t in (complex(z).real, complex(z).imag))]
            for xi in x]
    header = ["x[length]"] + [f"{p}_{q}[1/length]" for q in ("q1", "q2", "q3", "q4")
                              for p in ("re", "im")]
    summary = {"shift": shift, "trace_l1": trace, "max_spectral_mismatch": diff, "flags": flags}
    return {"": (header, rows)}, summary, flags


HANDLERS = {"classify": cmd_classify, "spectrum0": cmd_spectrum0, "fundsys": cmd_fundsys,
            "pruefer": cmd_pruefer, "spectrum": cmd_spectrum, "green0": cmd_green0,
            "verify": cmd_verify, "gauge": cmd_gauge}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="diracspec", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="YAML run configuration")
    ap.add_argument("--out", default="out", help="output directory (default: out)")
    ap.add_argument("--seed", type=int, help="seed for randomized probes (overrides config)")
    ap.add_argument("--threads", type=int, help="limit BLAS threads")
    ap.add_argument("--preset", choices=PRESETS, help="boundary preset (overrides config)")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed, args.preset)
        Q = build_potential(cfg["potential"])
        U = build_boundary(cfg["boundary"])
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    try:
        with threadpool_limits(args.threads):
            tables, summary, flags = HANDLERS[args.command](Q, U, cfg)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except (SpectrumError, BoundaryError, DomainError, np.linalg.LinAlgError) as exc:
        print(f"numerical anomaly: {exc}", file=sys.stderr)
        write_outputs(Path(args.out), args.command, {}, {"error": str(exc)}, cfg)
        return 1
    write_outputs(Path(args.out), args.command, tables, summary, cfg)
    for f in flags:
        print(f"anomaly: {f}", file=sys.stderr)
    return 1 if flags else 0


if __name__ == "__main__":
    sys.exit(main())
