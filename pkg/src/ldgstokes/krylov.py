"""Left-preconditioned GMRES, the average convergence rate, and Ritz spectra."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

MAX_ITER = 200
RITZ_CUTOFF = 1e-8


@dataclass
class SolveReport:
    iterations: int
    residual_history: list
    converged: bool
    wall_time: float
    breakdown: bool = False
    rho: float = float("nan")
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        return {"iterations": self.iterations, "rho": self.rho, "converged": self.converged,
                "breakdown": self.breakdown, "wall_time": self.wall_time,
                "residual_history": list(self.residual_history), "seed": self.seed}


def average_rate(history):
    """``(|r_n| / |r_0|)^(1/n)`` from a residual history."""
    n = len(history) - 1
    if n <= 0 or history[0] == 0:
        return 0.0
    return float((history[-1] / history[0]) ** (1.0 / n))


def gmres(apply_A, apply_V, b, x0=None, tol=1e-8, max_iter=MAX_ITER):
    """Non-restarted GMRES on ``V A x = V b`` with modified Gram-Schmidt.

    The residual history holds preconditioned residual norms, starting with
    ``|V(b - A x0)|``.  Stops when the ratio to the initial value is at most
    ``tol``.
    """
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float, copy=True)
    r = apply_V(b - apply_A(x))
    beta = float(np.linalg.norm(r))
    history = [beta]
    if beta == 0.0:
        return x, SolveReport(0, history, True, time.perf_counter() - t0, rho=0.0)
    m = max_iter
    Vb = np.empty((m + 1, b.shape[0]))
    H = np.zeros((m + 1, m))
    cs = np.zeros(m)
    sn = np.zeros(m)
    g = np.zeros(m + 1)
    g[0] = beta
    Vb[0] = r / beta
    converged = False
    breakdown = False
    k = 0
    for j in range(m):
        # copy: the operators may hand back their argument
        w = np.array(apply_V(apply_A(Vb[j])), dtype=float)
        for i in range(j + 1):
            H[i, j] = float(np.dot(w, Vb[i]))
            w -= H[i, j] * Vb[i]
        hn = float(np.linalg.norm(w))
        H[j + 1, j] = hn
        for i in range(j):
            t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
            H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
            H[i, j] = t
        den = math.hypot(H[j, j], H[j + 1, j])
        if den == 0.0:
            breakdown = True
            break
        cs[j], sn[j] = H[j, j] / den, H[j + 1, j] / den
        H[j, j] = den
        H[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        k = j + 1
        res = abs(g[j + 1])
        history.append(res)
        if res <= tol * beta:
            converged = True
            break
        if hn <= 1e-14 * beta:
            # invariant subspace reached with a nonzero residual
            breakdown = True
            break
        Vb[j + 1] = w / hn
    if k:
        y = np.linalg.solve(np.triu(H[:k, :k]), g[:k]) if np.all(np.diag(H[:k, :k]) != 0) \
            else np.linalg.lstsq(np.triu(H[:k, :k]), g[:k], rcond=None)[0]
        x += Vb[:k].T @ y
    rep = SolveReport(k, history, converged, time.perf_counter() - t0, breakdown)
    rep.rho = average_rate(history) if converged else 1.0
    return x, rep


def random_start(n, seed):
    """Uniform entries in [-1, 1] from ``numpy.random.default_rng(seed)``."""
    return np.random.default_rng(seed).uniform(-1.0, 1.0, n)


def convergence_rate(apply_A, apply_V, n, seed=0, tol=1e-8, max_iter=MAX_ITER):
    """Average residual reduction from ``b = 0`` and a random start.

    Non-convergence yields ``rho = 1.0`` with ``converged = False``.
    """
    x0 = random_start(n, seed)
    _, rep = gmres(apply_A, apply_V, np.zeros(n), x0, tol=tol, max_iter=max_iter)
    rep.seed = seed
    if rep.converged:
        rep.rho = average_rate(rep.residual_history)
    else:
        rep.rho = 1.0
    return rep


@dataclass
class SpectrumEstimate:
    ritz: np.ndarray
    max_real: float
    min_real: float
    max_imag: float
    cutoff: float
    n_excluded: int
    steps: int


def spectrum_estimate(apply_A, apply_V, dim, krylov_dim, seed=0, cutoff=RITZ_CUTOFF, kernel=None):
    """Ritz values of ``V A`` from an Arnoldi run started at ``V A x0``.

    Starting from ``V A x0`` keeps the start vector in the range of the
    operator, so kernel modes only enter through round-off.  If ``kernel``
    (orthonormal columns with ``A K = 0``) is given, those directions are
    projected out of every Krylov vector; since ``V A`` maps them to zero this
    leaves its remaining eigenvalues unchanged.  Ritz values with modulus
    below ``cutoff * max|lambda|`` are excluded from the summary.
    """
    if krylov_dim > dim:
        raise ValueError("krylov_dim must not exceed the problem dimension")
    K = kernel if kernel is not None and kernel.shape[1] else None

    def deflate(w):
        return w if K is None else w - K @ (K.T @ w)

    x0 = random_start(dim, seed)
    v = deflate(apply_V(apply_A(x0)))
    m = krylov_dim
    Q = np.empty((m + 1, dim))
    H = np.zeros((m + 1, m))
    Q[0] = v / np.linalg.norm(v)
    k = m
    for j in range(m):
        w = deflate(np.array(apply_V(apply_A(Q[j])), dtype=float))
        for i in range(j + 1):
            H[i, j] = float(np.dot(w, Q[i]))
            w -= H[i, j] * Q[i]
        hn = float(np.linalg.norm(w))
        H[j + 1, j] = hn
        if hn <= 1e-12 * max(1.0, abs(H[j, j])):
            k = j + 1
            break
        Q[j + 1] = w / hn
    ritz = np.linalg.eigvals(H[:k, :k])
    mag = np.abs(ritz)
    cut = cutoff * mag.max() if mag.size else 0.0
    keep = ritz[mag >= cut]
    return SpectrumEstimate(ritz, float(keep.real.max()), float(keep.real.min()),
                            float(np.abs(keep.imag).max()), cut, int((mag < cut).sum()), k)
