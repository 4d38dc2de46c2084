"""Hard-margin l_p SVMs over attention logits and over the prediction head.

Both problems have the form ``min ||w||_p  s.t.  A w >= 1`` for a constraint
matrix ``A`` whose rows are ``vec((X_{i,alpha_i} - X_{i,t}) z_i^T)`` (attention
SVM) or ``y_i X_{i,alpha_i}`` (head SVM).  The solver is

1. a phase-I linear program that finds a strictly feasible point or proves
   infeasibility,
2. a primal log-barrier method with damped Newton steps, where ``|x|^p`` is
   smoothed to ``(x^2 + eps^2)^(p/2)`` and ``eps`` shrinks with the barrier
   weight,
3. an exact polish on the active set: the stationarity condition
   ``sign(w)|w|^(p-1) = A_act^T lam`` is inverted in closed form and the
   multipliers solve ``A_act w(lam) = 1`` by Newton's method.

The result carries its KKT residual as an optimality certificate.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .core import dual_exponent, pq_norm
from .errors import DomainError, InfeasibleError, MaxIterError, ParameterError
from .mirror import directional_bregman
from .model import attn_probs, dataset_probs, dataset_scores

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
MAXITER = "maxiter"

FEAS_TOL = 1e-8
KKT_TOL = 1e-6
ACTIVE_TOL = 1e-4


@dataclass
class SvmSolution:
    weights: np.ndarray
    margins: np.ndarray
    constraints: list  # (sample, token) pairs, or sample ids for the head SVM
    active_set: list
    objective: float
    status: str
    p: float
    duals: np.ndarray = field(repr=False, default=None)
    kkt_residual: float = math.inf
    iterations: int = 0

    @property
    def label_margin(self):
        return 1.0 / self.objective

    def require_optimal(self):
        if self.status != OPTIMAL:
            raise MaxIterError(f"SVM solver stopped with KKT residual {self.kkt_residual:.3g}")
        return self

    def to_dict(self):
        return {
            "p": self.p,
            "status": self.status,
            "objective": self.objective,
            "weights": self.weights.tolist(),
            "margins": self.margins.tolist(),
            "constraints": [list(c) if isinstance(c, tuple) else c for c in self.constraints],
            "active_set": [list(c) if isinstance(c, tuple) else c for c in self.active_set],
            "kkt_residual": self.kkt_residual,
            "iterations": self.iterations,
        }


# ---------------------------------------------------------------------------
# generic solver for min (1/p)||w||_p^p  s.t.  A w >= 1
# ---------------------------------------------------------------------------


def _phase_one(A):
    """Maximize ``s`` subject to ``A w >= s`` and ``|w|_inf <= 1``."""
    m, dim = A.shape
    c = np.zeros(dim + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-A, np.ones((m, 1))])
    bounds = [(-1.0, 1.0)] * dim + [(None, 1.0)]
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(m), bounds=bounds, method="highs")
    if res.status != 0:
        raise InfeasibleError(f"phase-I linear program failed: {res.message}")
    return res.x[:dim], -res.fun


def _smooth(w, p, eps):
    r = w * w + eps * eps
    val = np.sum(r ** (p / 2.0)) / p
    grad = w * r ** (p / 2.0 - 1.0)
    hess = r ** (p / 2.0 - 2.0) * ((p - 1.0) * w * w + eps * eps)
    return val, grad, hess


def _newton_dir(hdiag, A, sinv, g):
    """Solve ``(diag(hdiag) + A^T diag(sinv^2) A) x = -g``, via Woodbury when short and wide."""
    m, dim = A.shape
    if m < dim:
        Dinv = 1.0 / hdiag
        B = A * sinv[:, None]
        K = np.eye(m) + (B * Dinv) @ B.T
        rhs = B @ (Dinv * g)
        y = np.linalg.solve(K, rhs)
        return -(Dinv * g - Dinv * (B.T @ y))
    H = np.diag(hdiag) + (A.T * sinv**2) @ A
    return -np.linalg.solve(H, g)


def _barrier(A, p, w, max_newton=200):
    m, dim = A.shape
    t = 1.0
    eps = 1e-2
    total = 0
    while True:
        for _ in range(max_newton):
            s = A @ w - 1.0
            f, gf, hf = _smooth(w, p, eps)
            sinv = 1.0 / s
            g = t * gf - A.T @ sinv
            dx = _newton_dir(t * hf, A, sinv, g)
            dec = -g @ dx
            total += 1
            if dec / 2.0 <= 1e-10:
                break
            As = A @ dx
            neg = As < 0
            step = 1.0
            if np.any(neg):
                step = min(1.0, 0.99 * np.min(-s[neg] / As[neg]))
            phi0 = t * f - np.sum(np.log(s))
            while step > 1e-14:
                wn = w + step * dx
                sn = A @ wn - 1.0
                if np.all(sn > 0):
                    phin = t * _smooth(wn, p, eps)[0] - np.sum(np.log(sn))
                    if phin <= phi0 - 0.25 * step * dec:
                        break
                step *= 0.5
            else:
                break
            w = wn
        if m / t < 1e-9:
            break
        t *= 10.0
        eps = max(1e-10, eps * 0.1)
    s = A @ w - 1.0
    lam = 1.0 / (t * s)
    return w, lam, s, total


def _polish(A, p, lam0, active, max_iter=100):
    """Solve the equality-constrained KKT system on ``active`` for the multipliers."""
    inv = 1.0 / (p - 1.0)
    Aa = A[active]
    live = np.any(Aa != 0.0, axis=0)
    Al = Aa[:, live]
    lam = lam0.copy()

    def primal(lam):
        u = Al.T @ lam
        return np.sign(u) * np.abs(u) ** inv, u

    wl, u = primal(lam)
    res = Al @ wl - 1.0
    for _ in range(max_iter):
        rn = np.max(np.abs(res))
        if rn < 1e-14:
            break
        with np.errstate(divide="ignore"):
            dphi = inv * np.abs(u) ** (inv - 1.0)
        if not np.all(np.isfinite(dphi)):
            return None
        J = (Al * dphi) @ Al.T
        dl = np.linalg.lstsq(J, -res, rcond=None)[0]
        step = 1.0
        while step > 1e-10:
            wn, un = primal(lam + step * dl)
            rnew = Al @ wn - 1.0
            if np.max(np.abs(rnew)) < (1.0 - 1e-4 * step) * rn:
                break
            step *= 0.5
        else:
            return None
        lam = lam + step * dl
        wl, u = wn, un
        res = rnew
    if np.max(np.abs(res)) > 1e-10:
        return None
    w = np.zeros(A.shape[1])
    w[live] = wl
    return w, lam


def kkt_residual(A, p, w, lam):
    g = np.sign(w) * np.abs(w) ** (p - 1.0)
    scale = max(np.max(np.abs(g)), 1e-300)
    stat = np.max(np.abs(g - A.T @ lam)) / scale
    marg = A @ w - 1.0
    feas = max(0.0, -np.min(marg))
    dual = max(0.0, -np.min(lam) / max(np.max(np.abs(lam)), 1e-300))
    comp = np.max(np.abs(lam * marg)) / max(np.max(np.abs(lam)), 1e-300)
    return float(max(stat, feas, dual, comp))


def solve_min_pnorm(A, p, active_tol=ACTIVE_TOL):
    """Minimize ``||w||_p`` subject to ``A w >= 1``.

    Returns ``(w, lam, status, kkt, iterations)``.  Raises
    :class:`InfeasibleError` when no feasible point exists.
    """
    if not p > 1:
        raise ParameterError(f"p must exceed 1, got {p}")
    A = np.asarray(A, dtype=np.float64)
    m, dim = A.shape
    if m == 0:
        raise ParameterError("constraint set is empty")
    w1, s1 = _phase_one(A)
    if s1 <= 1e-12 * max(1.0, np.max(np.abs(A))):
        raise InfeasibleError(f"no W separates the selected tokens (phase-I slack {s1:.3g})")
    # scale so the starting point has unit norm; keeps the barrier well conditioned
    w0 = 2.0 * w1 / s1
    sigma = pq_norm(w0, p)
    As = A * sigma
    w, lam, slack, iters = _barrier(As, p, w0 / sigma)

    best = (w, lam, kkt_residual(As, p, w, lam))
    active = slack <= active_tol
    if not np.any(active):
        active = slack <= np.min(slack) * 10.0
    for _ in range(2 * m + 2):
        out = _polish(As, p, lam[active], np.flatnonzero(active))
        if out is None:
            break
        wp, lam_a = out
        lam_full = np.zeros(m)
        lam_full[active] = lam_a
        marg = As @ wp - 1.0
        if np.min(lam_a) < -1e-12 * np.max(np.abs(lam_a)):
            idx = np.flatnonzero(active)[np.argmin(lam_a)]
            active[idx] = False
            continue
        if np.min(marg) < -1e-12:
            active[np.argmin(marg)] = True
            continue
        lam_full = np.maximum(lam_full, 0.0)
        kkt = kkt_residual(As, p, wp, lam_full)
        if kkt <= best[2]:
            best = (wp, lam_full, kkt)
        break
    w, lam, kkt = best
    # undo the scaling: w = sigma * w', multipliers pick up sigma^p
    w_true = sigma * w
    lam_true = lam * sigma**p
    status = OPTIMAL if kkt < KKT_TOL and np.min(A @ w_true) >= 1.0 - FEAS_TOL else MAXITER
    return w_true, lam_true, status, kkt, iters


# ---------------------------------------------------------------------------
# attention SVM and head SVM
# ---------------------------------------------------------------------------


def att_constraints(ds, alpha):
    """Constraint rows ``vec((X_{i,alpha_i} - X_{i,t}) z_i^T)`` and their ``(i, t)`` ids."""
    alpha = np.asarray(alpha, dtype=np.int64)
    if alpha.shape != (ds.n,) or np.any(alpha < 0) or np.any(alpha >= ds.T):
        raise DomainError(f"token selection must hold {ds.n} indices in [0, {ds.T})")
    rows, ids = [], []
    for i in range(ds.n):
        xa = ds.X[i, alpha[i]]
        for t in range(ds.T):
            if t == alpha[i]:
                continue
            rows.append(np.outer(xa - ds.X[i, t], ds.Z[i]).ravel())
            ids.append((i, t))
    return np.array(rows), ids


def solve_att_svm(ds, alpha, p):
    """Minimum p,p-norm ``W`` with ``(X_{i,alpha_i} - X_{it})^T W z_i >= 1`` for every ``t != alpha_i``."""
    A, ids = att_constraints(ds, alpha)
    for row, pair in zip(A, ids):
        if not np.any(row):
            raise InfeasibleError(f"constraint {pair} is identically zero", pair=pair)
    w, lam, status, kkt, iters = solve_min_pnorm(A, p)
    W = w.reshape(ds.d, ds.d)
    margins = A @ w
    active = [ids[k] for k in np.flatnonzero(np.abs(margins - 1.0) <= ACTIVE_TOL)]
    return SvmSolution(W, margins, ids, active, pq_norm(W, p), status, float(p), lam, kkt, iters)


def solve_v_svm(points, p):
    """Minimum p-norm head ``v`` with ``y_i x_i^T v >= 1``; ``points`` is a sequence of ``(x_i, y_i)``."""
    A = np.array([y * np.asarray(x, dtype=np.float64) for x, y in points])
    ids = list(range(len(A)))
    for k, row in enumerate(A):
        if not np.any(row):
            raise InfeasibleError(f"point {k} is the origin and cannot be separated", pair=(k,))
    w, lam, status, kkt, iters = solve_min_pnorm(A, p)
    margins = A @ w
    active = [k for k in ids if abs(margins[k] - 1.0) <= ACTIVE_TOL]
    return SvmSolution(w, margins, ids, active, pq_norm(w, p), status, float(p), lam, kkt, iters)


def head_svm_points(ds, alpha):
    return [(ds.X[i, a], int(ds.y[i])) for i, a in enumerate(np.asarray(alpha))]


# ---------------------------------------------------------------------------
# supports, local optimality, diagnostic constants, cones
# ---------------------------------------------------------------------------


def support_tokens(ds, alpha, sol, tol=ACTIVE_TOL):
    """Per-sample sets of tokens whose margin constraint is active (within ``tol``)."""
    sets = [set() for _ in range(ds.n)]
    for (i, t), mg in zip(sol.constraints, sol.margins):
        if abs(mg - 1.0) <= tol:
            sets[i].add(t)
    if any(not s for s in sets):
        warnings.warn("some samples have no support tokens at this tolerance", RuntimeWarning, stacklevel=2)
    return sets


def non_support_tokens(ds, alpha, supports):
    return [set(range(ds.T)) - supports[i] - {int(alpha[i])} for i in range(ds.n)]


@dataclass
class LocalOptimalityReport:
    supports: list
    sample_ok: list
    min_gap: float
    verdict: bool
    solution: SvmSolution


def verify_local_optimality(ds, v, alpha, p, tol=ACTIVE_TOL):
    """Check that each selected token outscores all of its support tokens."""
    sol = solve_att_svm(ds, alpha, p)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sup = support_tokens(ds, alpha, sol, tol)
    G = dataset_scores(v, ds)
    ok, gaps = [], []
    for i in range(ds.n):
        a = int(alpha[i])
        diffs = [G[i, a] - G[i, t] for t in sup[i]]
        gaps.extend(diffs)
        ok.append(all(g > 0 for g in diffs))
    min_gap = min(gaps) if gaps else math.inf
    return LocalOptimalityReport(sup, ok, float(min_gap), all(ok), sol)


@dataclass
class Diagnostics:
    delta: float
    delta_prime: float
    A: float
    mu0: float
    gamma_gap: np.ndarray
    gamma_bar_gap: np.ndarray
    Gamma: float
    S: np.ndarray
    Q: np.ndarray


def compute_constants(ds, v, alpha, sol, p, W=None, tol=ACTIVE_TOL):
    alpha = np.asarray(alpha, dtype=np.int64)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sup = support_tokens(ds, alpha, sol, tol)
    nonsup = non_support_tokens(ds, alpha, sup)
    margin_of = {c: mg for c, mg in zip(sol.constraints, sol.margins)}
    slack = [margin_of[(i, t)] - 1.0 for i in range(ds.n) for t in nonsup[i]]
    delta_prime = 0.5 * min(slack) if slack else math.inf
    delta = min(0.25, delta_prime)

    q = dual_exponent(p)
    xz = max(pq_norm(ds.X[i, t], q) * pq_norm(ds.Z[i], q) for i in range(ds.n) for t in range(ds.T))
    A = max(1.0, pq_norm(sol.weights, p) * xz)
    if p >= 2:
        mu0 = (delta / (8.0 * A)) ** p / p
    else:
        mu0 = (delta * (p - 1.0) / (4.0 * A * ds.d ** (2.0 / p - 1.0))) ** 2 / p

    G = dataset_scores(v, ds)
    gap = np.full(ds.n, np.nan)
    gap_bar = np.full(ds.n, np.nan)
    for i in range(ds.n):
        if sup[i]:
            vals = [G[i, t] for t in sup[i]]
            gap[i] = G[i, alpha[i]] - max(vals)
            gap_bar[i] = G[i, alpha[i]] - min(vals)
    Gamma = float(np.max(G.max(axis=1) - G.min(axis=1)))

    W = sol.weights if W is None else W
    P = dataset_probs(np.asarray(W, dtype=np.float64), ds)
    S = np.array([sum(P[i, t] for t in sup[i]) for i in range(ds.n)])
    Q = np.array([sum(P[i, t] for t in nonsup[i]) for i in range(ds.n)])
    return Diagnostics(delta, delta_prime, A, mu0, gap, gap_bar, Gamma, S, Q)


@dataclass(frozen=True)
class ConeSpec:
    p: float
    mu: float
    R: float
    reference: np.ndarray

    def __post_init__(self):
        if not 0 < self.mu < 1:
            raise ParameterError("mu must lie in (0, 1)")
        if not self.R > 0:
            raise ParameterError("R must be positive")
        if not np.any(self.reference):
            raise DomainError("cone reference must be nonzero")


def cone_membership(spec, W):
    """Return ``(in_S, in_C, divergence)`` for ``W`` against the cone around ``spec.reference``."""
    W = np.asarray(W, dtype=np.float64)
    if not np.any(W):
        raise DomainError("cone membership is undefined for the zero matrix")
    div = directional_bregman(spec.p, spec.reference, W)
    in_s = div <= spec.mu
    return in_s, bool(in_s and pq_norm(W, spec.p) >= spec.R), div


def attention_on_alpha(W, ds, alpha):
    return np.array([attn_probs(W, s)[a] for s, a in zip(ds.samples, alpha)])
