"""Command-line driver.

Config files are INI-style (``key = value`` under sections) and parsed
strictly: unknown sections or keys are configuration errors (exit 2).
Recognised sections and keys::

    [case]         name dim n degree gamma tau tau0 bc flux scaling rhs
    [physics]      mu1 mu2 rho1 rho2 delta_factor
    [solver]       nu1 nu2 tol max_iter seed
    [sweep]        taus epsilon
    [convergence]  grids exact
    [spectrum]     krylov_dim taus identity
    [output]       format            (binary | text)

Exit codes: 0 success, 1 numerical non-convergence, 2 configuration error.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import os
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .cases import CaseConfig
from .verify import ERROR_KEYS, fit_order

log = logging.getLogger("ldgstokes")

EXIT_OK, EXIT_DIVERGED, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s):
    return [float(t) for t in str(s).replace(",", " ").split()]


def _ints(s):
    return [int(t) for t in str(s).replace(",", " ").split()]


def _opt(conv):
    return lambda s: None if str(s).strip().lower() in ("", "none", "default") else conv(s)


# section -> key -> (CaseConfig field or run-option name, converter)
SCHEMA = {
    "case": {
        "name": ("case", str), "dim": ("dim", int), "n": ("n", int), "degree": ("degree", int),
        "gamma": ("gamma", int), "tau": ("tau", _opt(float)), "tau0": ("tau0", _opt(float)),
        "bc": ("bc", _opt(str)), "flux": ("flux", str), "scaling": ("scaling", _opt(_bool)),
        "rhs": ("rhs", str),
    },
    "physics": {
        "mu1": ("mu1", float), "mu2": ("mu2", float), "rho1": ("rho1", float),
        "rho2": ("rho2", float), "delta_factor": ("delta_factor", float),
    },
    "solver": {
        "nu1": ("nu1", int), "nu2": ("nu2", int), "tol": ("tol", float),
        "max_iter": ("max_iter", int), "seed": ("seed", int),
    },
    "sweep": {"taus": ("sweep_taus", _floats), "epsilon": ("epsilon", float)},
    "convergence": {"grids": ("grids", _ints), "exact": ("exact", _bool)},
    "spectrum": {"krylov_dim": ("krylov_dim", int), "taus": ("spectrum_taus", _floats),
                 "identity": ("identity", _bool)},
    "output": {"format": ("format", str)},
}


@dataclass
class RunOptions:
    sweep_taus: list = field(default_factory=lambda: [1e-3, 1e-2, 0.1, 1.0])
    epsilon: float = 1.0 / 9.0
    grids: list = field(default_factory=lambda: [8, 16, 32])
    exact: bool = False
    krylov_dim: int = 60
    spectrum_taus: list = field(default_factory=list)
    identity: bool = False
    format: str = "binary"


def parse_config(text):
    """Parse config text into ``(CaseConfig kwargs, RunOptions)``; strict."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"malformed config: {err}") from None
    if cp.defaults():
        raise ConfigError("keys outside a section are not allowed")
    case_kw, run = {}, RunOptions()
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key, raw in cp.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key '{key}' in [{sec}]")
            name, conv = SCHEMA[sec][key]
            try:
                val = conv(raw)
            except ValueError as err:
                raise ConfigError(f"bad value for {sec}.{key}: {err}") from None
            if hasattr(run, name):
                setattr(run, name, val)
            else:
                case_kw[name] = val
    if run.format not in ("binary", "text"):
        raise ConfigError("output.format must be 'binary' or 'text'")
    if run.epsilon < 0 or run.epsilon >= 1:
        raise ConfigError("sweep.epsilon must lie in [0, 1)")
    if any(t <= 0 for t in run.sweep_taus + run.spectrum_taus):
        raise ConfigError("tau values must be positive")
    return case_kw, run


def make_config(case_kw, seed=None):
    kw = dict(case_kw)
    if seed is not None:
        kw["seed"] = seed
    try:
        return CaseConfig(**kw)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from None


def config_hash(cfg: CaseConfig, run: RunOptions):
    blob = json.dumps({"case": cfg.as_dict(), "run": run.__dict__}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# output helpers
# --------------------------------------------------------------------------

class Output:
    def __init__(self, out_dir, cfg, run, command):
        self.dir = out_dir
        self.cfg = cfg
        self.run = run
        self.command = command
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name):
        return os.path.join(self.dir, name)

    def meta_lines(self):
        return [f"# ldgstokes {__version__}", f"# command: {self.command}",
                f"# config_hash: {config_hash(self.cfg, self.run)}", f"# seed: {self.cfg.seed}",
                f"# case: {self.cfg.case}"]

    def csv(self, name, header, rows):
        with open(self.path(name), "w", newline="") as fh:
            for line in self.meta_lines():
                fh.write(line + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
        return self.path(name)

    def columns(self, name, x, y, comment=""):
        with open(self.path(name), "w") as fh:
            for line in self.meta_lines():
                fh.write(line + "\n")
            if comment:
                fh.write(f"# {comment}\n")
            for a, b in zip(x, y):
                fh.write(f"{_fmt(a)} {_fmt(b)}\n")

    def json(self, name, obj):
        with open(self.path(name), "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return str(v)


def _map(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_solve(cfg, run, out, threads=1):
    from .driver import errors, prepare, solve
    from .io import SolutionFile, write_solution

    prep = prepare(cfg)
    x, rep = solve(prep)
    ext = "txt" if run.format == "text" else "bin"
    write_solution(out.path(f"solution.{ext}"), SolutionFile(cfg.dim, cfg.degree, cfg.n, x), run.format)
    out.csv("residual_history.csv", ["iteration", "residual"], enumerate(rep.residual_history))
    report = {"config": cfg.as_dict(), **rep.as_dict(), **rep.extra}
    if cfg.rhs == "manufactured":
        report["errors"] = errors(prep, x)
    out.json("report.json", report)
    log.info("solve: %d iterations, converged=%s, relative residual %.3e",
             rep.iterations, rep.converged, rep.extra["relative_residual"])
    return EXIT_OK if rep.converged else EXIT_DIVERGED


RHO_HEADER = ["case", "d", "p", "n", "tau", "rho", "iterations", "converged", "wall_time"]


def _rho_row(cfg):
    from .driver import prepare, rho

    prep = prepare(cfg)
    rep = rho(prep)
    tau = prep.system.penalties.tau
    return [cfg.case, cfg.dim, cfg.degree, cfg.n, tau, rep.rho, rep.iterations, rep.converged,
            rep.wall_time]


def cmd_rho(cfg, run, out, threads=1):
    row = _rho_row(cfg)
    out.csv("rho.csv", RHO_HEADER, [row])
    log.info("rho = %.4f after %d iterations (converged=%s)", row[5], row[6], row[7])
    return EXIT_OK if row[7] else EXIT_DIVERGED


def tau_window(taus, rhos, epsilon):
    """Argmin tau and the taus with ``rho <= (min rho)^(1 - epsilon)``."""
    taus = np.asarray(taus, dtype=float)
    rhos = np.asarray(rhos, dtype=float)
    i = int(np.argmin(rhos))
    cut = rhos[i] ** (1.0 - epsilon)
    win = np.sort(taus[rhos <= cut])
    return float(taus[i]), float(rhos[i]), win


def cmd_sweep_tau(cfg, run, out, threads=1):
    taus = sorted(run.sweep_taus)

    def point(t):
        try:
            return _rho_row(cfg.with_(tau=t))
        except Exception as err:  # recorded, sweep continues
            log.warning("tau=%g failed: %s", t, err)
            return [cfg.case, cfg.dim, cfg.degree, cfg.n, t, float("nan"), 0, False, 0.0]

    rows = _map(point, taus, threads)
    out.csv("sweep_tau.csv", RHO_HEADER, rows)
    out.columns("sweep_tau.dat", [r[4] for r in rows], [r[5] for r in rows], "tau rho")
    ok = [r for r in rows if np.isfinite(r[5])]
    if not ok:
        return EXIT_DIVERGED
    tbest, rbest, win = tau_window([r[4] for r in ok], [r[5] for r in ok], run.epsilon)
    out.csv("sweep_tau_window.csv",
            ["epsilon", "argmin_tau", "min_rho", "window_lo", "window_hi", "window_taus"],
            [[run.epsilon, tbest, rbest, win[0], win[-1], " ".join(repr(float(t)) for t in win)]])
    log.info("argmin tau = %g (rho %.4f); window [%g, %g]", tbest, rbest, win[0], win[-1])
    return EXIT_OK


def cmd_convergence(cfg, run, out, threads=1):
    from .driver import errors, prepare, solve
    from .verify import project_exact

    grids = sorted(run.grids)
    if len(grids) < 3:
        raise ConfigError("convergence needs at least three grids")

    def point(n):
        prep = prepare(cfg.with_(n=n))
        if run.exact:
            x = project_exact(prep.system.mesh, prep.system.basis, prep.case.solution, cfg.degree + 3)
            conv, its = True, 0
        else:
            x, rep = solve(prep)
            conv, its = rep.converged, rep.iterations
        err = errors(prep, x)
        return [n, prep.system.mesh.h, *[err[k] for k in ERROR_KEYS], its, conv]

    rows = _map(point, grids, threads)
    out.csv("convergence.csv", ["n", "h", *ERROR_KEYS, "iterations", "converged"], rows)
    hs = [r[1] for r in rows]
    fits = []
    for j, key in enumerate(ERROR_KEYS):
        errs = [r[2 + j] for r in rows]
        out.columns(f"convergence_{key}.dat", hs, errs, f"h {key}")
        f = fit_order(hs, errs)
        fits.append([key, f.order, " ".join(repr(h) for h in f.used), f.reason])
    out.csv("convergence_orders.csv", ["quantity", "order", "grids_used_h", "reason"], fits)
    for key, order, _, reason in fits:
        log.info("%s order: %s %s", key, "n/a" if order is None else f"{order:.3f}", reason)
    return EXIT_OK if all(r[-1] for r in rows) else EXIT_DIVERGED


SPECTRUM_HEADER = ["tau", "max_real", "min_real", "max_imag", "cutoff", "n_excluded", "steps"]


def cmd_spectrum(cfg, run, out, threads=1):
    from .driver import prepare, spectrum
    from .krylov import spectrum_estimate

    rows = []
    if run.identity:
        dim = max(run.krylov_dim, 1)
        ident = lambda v: v  # noqa: E731
        est = spectrum_estimate(ident, ident, dim, min(run.krylov_dim, dim), cfg.seed)
        rows.append([float("nan"), est.max_real, est.min_real, est.max_imag, est.cutoff,
                     est.n_excluded, est.steps])
        out.columns("ritz_identity.dat", est.ritz.real, est.ritz.imag, "real imag")
    else:
        taus = run.spectrum_taus or [cfg.penalties().tau]

        def point(t):
            prep = prepare(cfg.with_(tau=t))
            return t, spectrum(prep, min(run.krylov_dim, prep.system.size))

        for t, est in _map(point, sorted(taus), threads):
            rows.append([t, est.max_real, est.min_real, est.max_imag, est.cutoff, est.n_excluded, est.steps])
            out.columns(f"ritz_tau{t:g}.dat", est.ritz.real, est.ritz.imag, "real imag")
    out.csv("spectrum.csv", SPECTRUM_HEADER, rows)
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "rho": cmd_rho,
    "sweep-tau": cmd_sweep_tau,
    "convergence": cmd_convergence,
    "spectrum": cmd_spectrum,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS)
    common.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS)
    common.add_argument("--seed", metavar="N", type=int, default=argparse.SUPPRESS)
    common.add_argument("--threads", metavar="N", type=int, default=argparse.SUPPRESS)
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)

    ap = argparse.ArgumentParser(prog="ldgstokes", parents=[common],
                                 description="LDG Stokes multigrid experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "sweep-tau":
            sp.add_argument("--taus", type=_floats, default=argparse.SUPPRESS)
            sp.add_argument("--epsilon", type=float, default=argparse.SUPPRESS)
        elif name == "convergence":
            sp.add_argument("--grids", type=_ints, default=argparse.SUPPRESS)
            sp.add_argument("--exact", action="store_true", default=argparse.SUPPRESS)
        elif name == "spectrum":
            sp.add_argument("--krylov-dim", dest="krylov_dim", type=int, default=argparse.SUPPRESS)
            sp.add_argument("--taus", dest="spectrum_taus", type=_floats, default=argparse.SUPPRESS)
            sp.add_argument("--identity", action="store_true", default=argparse.SUPPRESS)
    return ap


def _set_threads(n):
    try:
        import numba
    except ImportError:  # pragma: no cover
        return
    with warnings.catch_warnings():
        # threading-layer probing warns about old TBB builds; harmless here
        warnings.simplefilter("ignore")
        numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as err:
        return EXIT_CONFIG if err.code else EXIT_OK
    opts = vars(args)
    quiet = opts.get("quiet", False)
    logging.basicConfig(level=logging.WARNING if quiet else logging.INFO,
                        format="%(levelname)s %(message)s", force=True)
    threads = opts.get("threads", 1)
    try:
        if threads < 1:
            raise ConfigError("--threads must be at least 1")
        text = ""
        if "config" in opts:
            try:
                with open(opts["config"]) as fh:
                    text = fh.read()
            except OSError as err:
                raise ConfigError(f"cannot read config: {err}") from None
        case_kw, run = parse_config(text)
        for k in ("sweep_taus", "taus", "epsilon", "grids", "exact", "krylov_dim", "spectrum_taus",
                  "identity"):
            if k in opts:
                setattr(run, "sweep_taus" if k == "taus" else k, opts[k])
        cfg = make_config(case_kw, opts.get("seed"))
        _set_threads(threads)
        out = Output(opts.get("out", "."), cfg, run, args.command)
        t0 = time.perf_counter()
        code = COMMANDS[args.command](cfg, run, out, threads)
        log.info("%s finished in %.1fs (exit %d)", args.command, time.perf_counter() - t0, code)
        return code
    except ConfigError as err:
        print(f"ldgstokes: configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG


def entry():  # console script
    sys.exit(main())


if __name__ == "__main__":
    entry()
