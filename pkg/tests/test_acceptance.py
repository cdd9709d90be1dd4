"""End-to-end acceptance checks, one test per criterion.

Each test records a single ``criterion N: PASS|FAIL`` line; the lines are
repeated in the terminal summary (see conftest.py) so they survive output
capture.  These runs are long (the n=128 cases dominate); select them with
``-m acceptance`` or skip them with ``-m "not acceptance"``.
"""
import gc
import time

import numpy as np
import pytest
import scipy.sparse as sp

from ldgstokes.cases import CaseConfig, build_case
from ldgstokes.driver import Prepared, errors, prepare, rho, solve, spectrum
from ldgstokes.ldg import PenaltyConfig, ProblemSpec, assemble_stokes, build_operators
from ldgstokes.mesh import build_hierarchy, build_mesh
from ldgstokes.multigrid import (coarsen, direct_solve, make_level, pinv_solve,
                                 smooth, transfer_ops)
from ldgstokes.polyspace import Basis
from ldgstokes.verify import fit_order, remove_kernel

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

RESULTS = []


def record(num, ok, detail):
    line = f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line, flush=True)
    return ok


def run_rho(**kw):
    t = time.perf_counter()
    prep = prepare(CaseConfig(**kw))
    rep = rho(prep)
    out = (rep.rho, rep.iterations, rep.converged, time.perf_counter() - t)
    del prep
    gc.collect()
    return out


def fro(A):
    return sp.linalg.norm(A) if sp.issparse(A) else np.linalg.norm(A)


def mem_available():
    with open("/proc/meminfo") as fh:
        for line in fh:
            if line.startswith("MemAvailable:"):
                return int(line.split()[1]) * 1024
    return None  # pragma: no cover


def hierarchy_bytes(mg):
    tot = 0
    for lvl in mg.levels:
        A = lvl.matrix
        tot += A.data.nbytes + A.indices.nbytes + A.indptr.nbytes
        if lvl.factors is not None:
            tot += lvl.factors.lu.nbytes + lvl.factors.piv.nbytes
    return tot


# ---------------------------------------------------------------------------

def test_criterion_01_symmetry_and_kernel():
    worst_sym, worst_ker, bad = 0.0, 0.0, []
    for bc in ("periodic", "dirichlet", "stress"):
        for gamma in (0, 1):
            for p in (1, 2, 3):
                m = build_mesh(2, 16, None, bc)
                s = assemble_stokes(m, Basis(p, 2, m.h), ProblemSpec(gamma=gamma),
                                    PenaltyConfig.default(gamma, 2, p))
                A = s.matrix
                sym = fro(A - A.T) / fro(A)
                ker = max((float(np.linalg.norm(A @ k)) for k in s.kernel.T), default=0.0)
                worst_sym, worst_ker = max(worst_sym, sym), max(worst_ker, ker)
                if sym > 1e-12 or ker > 1e-10:
                    bad.append(f"{bc}/g{gamma}/p{p}")
    ok = record(1, not bad, f"max sym {worst_sym:.1e} (<=1e-12), max |Ak| {worst_ker:.1e} (<=1e-10)"
                + (f" failing: {bad}" if bad else ""))
    assert ok


def test_criterion_02_galerkin_coarsening():
    m = build_mesh(2, 32, None, "periodic")
    b = Basis(2, 2, m.h)
    prob, pen = ProblemSpec(), PenaltyConfig.default(0, 2, 2)
    hier = build_hierarchy(m)
    fine = build_operators(m, b, prob, pen)
    T = transfer_ops(hier, 0, b)
    cm = hier.meshes[1]
    c = coarsen(fine, T.scalar, cm.n_elements)
    I = T.scalar.toarray()

    def var(X, f=1.0):
        return f * (I.T @ X.toarray() @ I)

    def rel(X, Y):
        X = X.toarray() if sp.issparse(X) else X
        Y = Y.toarray() if sp.issparse(Y) else Y
        ny = np.linalg.norm(Y)
        # Et vanishes on a periodic mesh (no interior velocity penalty)
        return np.linalg.norm(X - Y) / ny if ny else np.linalg.norm(X)

    errs = {f"G{k}": rel(c.G[k], var(fine.G[k])) for k in range(2)}
    errs["Mmu"] = rel(c.Mmu, var(fine.Mmu))
    errs["Et"] = rel(c.Et, var(fine.Et, 0.5))
    errs["E"] = rel(c.E, var(fine.E, 2.0))
    direct = build_operators(cm, Basis(2, 2, cm.h), prob, pen)
    for k in range(2):
        errs[f"G{k} vs direct"] = rel(c.G[k], direct.G[k])
    worst = max(errs.values())
    ok = record(2, worst <= 1e-12, f"max relative deviation {worst:.1e} (<=1e-12) over {sorted(errs)}")
    assert ok


def test_criterion_03_steady_multigrid_speed():
    lines, ok = [], True
    for p in (2, 3):
        for n in (32, 64, 128):
            r, it, conv, t = run_rho(case="periodic", n=n, degree=p)
            ok &= conv and r <= 0.15
            lines.append(f"2D p{p} n{n} rho={r:.3f} ({t:.0f}s)")
    for n in (8, 16):
        r, it, conv, t = run_rho(case="periodic", dim=3, n=n, degree=2)
        ok &= conv and r <= 0.2
        lines.append(f"3D p2 n{n} rho={r:.3f} ({t:.0f}s)")
    # n=32 in 3D: run it only if memory allows, judged from the n=16 hierarchy
    prep = prepare(CaseConfig(case="periodic", dim=3, n=16, degree=2))
    est = 8 * hierarchy_bytes(prep.mg)
    del prep
    gc.collect()
    avail = mem_available()
    if avail is not None and est < 0.8 * avail:
        r, it, conv, t = run_rho(case="periodic", dim=3, n=32, degree=2)
        ok &= conv and r <= 0.2
        lines.append(f"3D p2 n32 rho={r:.3f} ({t:.0f}s)")
    else:
        ok = False
        lines.append(f"3D p2 n32 not run: estimated {est / 2**30:.1f} GiB for operators and "
                     f"smoother factors vs {avail / 2**30:.1f} GiB available")
    ok = record(3, ok, "; ".join(lines))
    assert ok


def test_criterion_04_dirichlet_and_stress_speed():
    lines, ok = [], True
    for case, gamma in (("dirichlet", 0), ("stress", 1)):
        for p in (2, 3):
            for n in (32, 64, 128):
                r, it, conv, t = run_rho(case=case, gamma=gamma, n=n, degree=p)
                ok &= conv and r <= 0.2
                lines.append(f"{case} g{gamma} p{p} n{n} rho={r:.3f}")
    ok = record(4, ok, "; ".join(lines))
    assert ok


def test_criterion_05_tau_breakdown_and_valley():
    rhos, spec = {}, {}
    for tau in (1e-3, 1e-2, 0.1, 1.0):
        prep = prepare(CaseConfig(case="periodic", n=128, degree=2, tau=tau))
        rhos[tau] = rho(prep).rho
        if tau in (1e-3, 0.1):
            spec[tau] = spectrum(prep, 60).min_real
        del prep
        gc.collect()
    ok = (rhos[1e-3] >= 0.9 and rhos[0.1] < rhos[1.0] and rhos[0.1] < rhos[1e-2]
          and spec[1e-3] <= 0 < spec[0.1])
    ok = record(5, ok, "rho " + ", ".join(f"{t:g}:{r:.3f}" for t, r in rhos.items())
                + f"; min Re(ritz) tau=1e-3: {spec[1e-3]:.3g}, tau=0.1: {spec[0.1]:.3g}")
    assert ok


def test_criterion_06_multiphase_extremes():
    lines, ok = [], True
    for mu1 in (1e-6, 1e6):
        for n in (32, 64):
            r, it, conv, t = run_rho(case="multiphase-square", gamma=1, n=n, degree=2,
                                     mu1=mu1, mu2=1.0)
            ok &= conv and it <= 15
            lines.append(f"mu1/mu2={mu1:g} n{n}: {it} it (rho={r:.3f})")
    ok = record(6, ok, "; ".join(lines))
    assert ok


def test_criterion_07_timedep_acceleration():
    lines, ok = [], True
    for mu, target in ((1e-4, 0.05), (1e-2, 0.2)):
        for n in (64, 128):
            r, it, conv, t = run_rho(case="timedep-single", n=n, degree=2, mu1=mu)
            ok &= conv and r <= target
            lines.append(f"mu={mu:g} n{n} rho={r:.3f} (<= {target})")
    # informational: the same high-Re case with a larger tau0
    r, *_ = run_rho(case="timedep-single", n=64, degree=2, mu1=1e-4, tau0=8.0)
    lines.append(f"[info] mu=1e-4 n64 tau0=8: rho={r:.3f}")
    ok = record(7, ok, "; ".join(lines))
    assert ok


def _orders(case, p, grids, **kw):
    hs, errs = [], []
    for n in grids:
        prep = prepare(CaseConfig(case=case, n=n, degree=p, tol=1e-10, **kw))
        x, rep = solve(prep, 1e-10)
        assert rep.converged, f"{case} p{p} n{n} did not reach 1e-10"
        hs.append(1.0 / n)
        errs.append(errors(prep, x))
        del prep
        gc.collect()
    return {k: fit_order(hs, [e[k] for e in errs]).order for k in errs[0]}


def test_criterion_08_convergence_orders():
    grids = (16, 32, 64)
    checks = []
    o = _orders("periodic", 2, grids)
    checks += [("periodic p2 " + k, o[k], 3.0) for k in o]
    for p in (2, 3):
        o = _orders("dirichlet", p, grids)
        checks += [(f"dirichlet p{p} velocity_max", o["velocity_max"], p + 1),
                   (f"dirichlet p{p} pressure_l2", o["pressure_l2"], p + 0.5),
                   (f"dirichlet p{p} pressure_max", o["pressure_max"], p)]
    o = _orders("timedep-single", 2, grids, mu1=1e-4)
    checks.append(("timedep mu=1e-4 p2 pressure_max", o["pressure_max"], 3.0))
    bad = [c for c in checks if c[1] is None or abs(c[1] - c[2]) > 0.25]
    ok = record(8, not bad, "; ".join(f"{name} {val:.2f} ({want:g})" if val is not None
                                      else f"{name} n/a" for name, val, want in checks))
    assert ok


def test_criterion_09_tau_insensitivity():
    taus = np.logspace(-3, 0, 7)
    errs = []
    for tau in taus:
        case = build_case(CaseConfig(case="periodic", n=16, degree=2, tau=float(tau)))
        s = case.assemble()
        x = direct_solve(s)
        errs.append(errors(Prepared(case, s, None), s.unscale(x)))
    spread = {}
    for k in errs[0]:
        v = np.array([e[k] for e in errs])
        spread[k] = float(v.max() / v.min() - 1.0)
    worst = max(spread.values())
    ok = record(9, worst <= 0.15, "max spread over tau in [1e-3, 1]: "
                + ", ".join(f"{k} {100 * v:.1f}%" for k, v in spread.items()) + " (<=15%)")
    assert ok


def test_criterion_10_small_oracles():
    prep = prepare(CaseConfig(case="periodic", n=4, degree=1, tol=1e-13, max_iter=300))
    s = prep.system
    x, rep = solve(prep, 1e-13)
    ref = pinv_solve(s)
    K = s.kernel
    diff = float(np.linalg.norm(remove_kernel(x, K) - remove_kernel(ref, K)) / np.linalg.norm(ref))

    A = s.matrix
    bs = 3 * 4
    lvl = make_level(A, bs)
    rng = np.random.default_rng(0)
    x0, b = rng.uniform(-1, 1, (2, A.shape[0]))
    Ad = A.toarray()
    want = x0.copy()
    for e in lvl.order():
        r = slice(e * bs, (e + 1) * bs)
        want[r] = np.linalg.solve(Ad[r, r], b[r] - Ad[r] @ want + Ad[r, r] @ want[r])
    gs = max(float(np.abs(smooth(lvl, x0.copy(), b, 1, use_numba=u) - want).max()) for u in (False, True))
    gs_rel = gs / float(np.abs(want).max())
    ok = record(10, diff <= 1e-8 and gs_rel <= 1e-13,
                f"GMRES vs pinv {diff:.1e} (<=1e-8); one sweep vs dense GS {gs_rel:.1e} (<=1e-13)")
    assert ok
