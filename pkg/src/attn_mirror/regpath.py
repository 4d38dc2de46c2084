"""Norm-ball constrained ERM (the regularization path) solved by Frank-Wolfe.

The l_p,p ball has a closed-form linear minimization oracle, so no
projection is ever needed.  The constrained problem is nonconvex in ``W``;
each radius is solved from several starts and the lowest loss wins.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .core import dual_exponent, make_rng, pq_norm
from .errors import DomainError, InfeasibleError, MaxIterError, ParameterError
from .losses import LossKind
from .mirror import directional_bregman, normalize_pq
from .model import globally_optimal_tokens
from .svm import head_svm_points, solve_att_svm, solve_v_svm, verify_local_optimality

log = logging.getLogger(__name__)

ARMIJO_C = 1e-4
ARMIJO_BETA = 0.5
MAX_BACKTRACKS = 200


def lp_ball_lmo(grad, p, R):
    """Minimizer of ``<grad, S>`` over ``||S||_{p,p} <= R``.

    ``S = -R sign(G) |G|^(q-1) / ||G||_q^(q-1)`` with ``1/p + 1/q = 1``; zero
    gradient returns zero.
    """
    g = np.asarray(grad, dtype=np.float64)
    q = dual_exponent(p)
    gn = pq_norm(g, q) if np.any(g) else 0.0
    if gn == 0.0:
        return np.zeros_like(g)
    a = np.abs(g) / gn  # scale first so |g|^(q-1) cannot overflow
    return -R * np.sign(g) * a ** (q - 1.0)


@dataclass(frozen=True)
class RpConfig:
    p: float
    radii: tuple
    loss: LossKind = LossKind.LOGISTIC
    fw_iters: int = 5000
    fw_tol: float = 1e-10
    joint: bool = False
    r_schedule: tuple = (1.0, 0.8)
    inner_iters: int = 5
    starts: tuple = ("zero", "cone", "random")
    seed: int = 0

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii)
        if not radii or radii[0] <= 0:
            raise DomainError("radii must be positive")
        if any(b <= a for a, b in zip(radii, radii[1:])):
            raise ParameterError("radii must be strictly increasing")
        if not self.fw_tol > 0:
            raise ParameterError("fw_tol must be positive")
        if not self.p > 1:
            raise ParameterError("p must exceed 1")
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "loss", LossKind.parse(self.loss))

    def r_of(self, R):
        c0, c1 = self.r_schedule
        return c0 * math.exp(c1 * R)


@dataclass
class RpResult:
    W: np.ndarray
    loss: float
    log_excess: float
    gap: float  # Frank-Wolfe gap of log F
    iterations: int
    converged: bool


# In W the solver minimizes log F, where F = log L - log L* is the excess over
# the loss at perfect attention.  The minimizers match those of L, F is
# computed without cancellation, and the Frank-Wolfe gap of log F is relative,
# so progress stays visible once the attention saturates.  In v it minimizes
# log L, which stays well scaled as the head grows.


def _excess_grad_W(ds, W, v, code):
    _, F, gW, _ = kernels.log_objective_grads(ds.X, ds.y, ds.Z, W, v, code)
    if not F > 0.0:
        return -math.inf, np.zeros_like(W)
    return math.log(F), gW / F


def _log_loss_grad_v(ds, W, v, code):
    out = kernels.log_objective_grads(ds.X, ds.y, ds.Z, W, v, code)
    return out[0], out[3]


def _erm(ds, W, v, code):
    return float(kernels.objective_grads(ds.X, ds.y, ds.Z, W, v, code)[0])


def frank_wolfe(fun, x0, p, R, iters, tol):
    """Frank-Wolfe with Armijo backtracking on ``||x||_p <= R``.

    ``fun(x)`` returns ``(value, gradient)``.  Returns ``(x, value, gap, k,
    converged, gaps)``; every recorded gap is nonnegative.
    """
    x = np.array(x0, dtype=np.float64)
    f, g = fun(x)
    gaps = []
    gap = math.inf
    for k in range(iters):
        s = lp_ball_lmo(g, p, R)
        d = s - x
        gap = max(0.0, float(-np.sum(g * d)))
        gaps.append(gap)
        if gap <= tol:
            return x, f, gap, k, True, gaps
        step = 1.0
        for _ in range(MAX_BACKTRACKS):
            xn = x + step * d
            fn, gn = fun(xn)
            if fn <= f - ARMIJO_C * step * gap:
                break
            step *= ARMIJO_BETA
        else:
            return x, f, gap, k, False, gaps
        x, f, g = xn, fn, gn
        if f == -math.inf:
            return x, f, 0.0, k + 1, True, gaps
    return x, f, gap, iters, False, gaps


def solve_rp(ds, v, p, R, loss=LossKind.LOGISTIC, fw_iters=5000, fw_tol=1e-10, starts=None, strict=False):
    """Approximate ``argmin L(W)`` over ``||W||_{p,p} <= R`` with head ``v`` fixed.

    ``starts`` is a list of initial matrices (each scaled into the ball);
    the default is the origin.  With ``strict`` an unconverged run raises
    :class:`MaxIterError`.
    """
    if not R > 0:
        raise ParameterError(f"radius must be positive, got {R}")
    v = np.asarray(v, dtype=np.float64)
    code = LossKind.parse(loss).value
    if starts is None:
        starts = [np.zeros((ds.d, ds.d))]
    best = None
    for W0 in starts:
        W0 = np.asarray(W0, dtype=np.float64)
        nrm = pq_norm(W0, p)
        if nrm > R:
            W0 = W0 * (R / nrm)
        W, f, gap, k, ok, _ = frank_wolfe(lambda W: _excess_grad_W(ds, W, v, code), W0, p, R, fw_iters, fw_tol)
        if best is None or f < best.log_excess:
            best = RpResult(W, _erm(ds, W, v, code), f, gap, k, ok)
    if strict and not best.converged:
        raise MaxIterError(f"Frank-Wolfe stopped with gap {best.gap:.3g}", gap=best.gap)
    return best


def _starts(kind_list, d, p, R, reference, rng, warm):
    out = []
    for kind in kind_list:
        if kind == "zero":
            out.append(np.zeros((d, d)))
        elif kind == "cone" and reference is not None:
            out.append(R * normalize_pq(reference, p))
        elif kind == "random":
            M = rng.standard_normal((d, d))
            out.append(0.5 * R * normalize_pq(M, p))
    if warm is not None:
        out.append(warm)
    return out


@dataclass
class SweepRow:
    R: float
    r: float
    loss: float
    w_dir_div: float
    v_dir_div: float
    gap: float
    converged: bool
    W: Optional[np.ndarray] = field(default=None, repr=False)
    v: Optional[np.ndarray] = field(default=None, repr=False)


SWEEP_COLUMNS = ("R", "r", "loss", "w_dir_div", "v_dir_div")


def sweep_to_csv(rows):
    lines = [",".join(SWEEP_COLUMNS)]
    for row in rows:
        vals = []
        for name in SWEEP_COLUMNS:
            x = getattr(row, name)
            vals.append("" if x is None or (isinstance(x, float) and math.isnan(x)) else format(float(x), ".17g"))
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def rp_sweep(ds, v, cfg, reference=None):
    """Solve the constrained problem along ``cfg.radii`` and compare with the max-margin direction.

    The reference defaults to the attention-SVM solution for the globally
    optimal tokens of ``v``.
    """
    v = np.asarray(v, dtype=np.float64)
    if reference is None:
        opt = globally_optimal_tokens(v, ds)
        reference = solve_att_svm(ds, opt, cfg.p).require_optimal().weights
    rng = make_rng(cfg.seed)
    rows, warm = [], None
    for R in cfg.radii:
        starts = _starts(cfg.starts, ds.d, cfg.p, R, reference, rng, warm)
        res = solve_rp(ds, v, cfg.p, R, cfg.loss, cfg.fw_iters, cfg.fw_tol, starts)
        if not res.converged:
            log.warning("radius %g: Frank-Wolfe gap %.3g above tolerance", R, res.gap)
        div = directional_bregman(cfg.p, reference, res.W) if np.any(res.W) else math.nan
        rows.append(SweepRow(R, math.nan, res.loss, div, math.nan, res.gap, res.converged, res.W, v))
        warm = res.W
    return rows


def joint_rp(ds, cfg, alpha=None, outer_iters=2000):
    """Alternating block Frank-Wolfe on ``||W|| <= R``, ``||v|| <= r(R)`` with logistic loss.

    Directions are compared with the attention SVM for ``alpha`` and the head
    SVM on the selected tokens.  ``alpha`` defaults to the tokens the
    largest-radius solution attends to most.
    """
    if cfg.loss is not LossKind.LOGISTIC:
        raise ParameterError("the joint path is defined for the logistic loss")
    p = cfg.p
    code = cfg.loss.value
    rng = make_rng(cfg.seed)
    d = ds.d
    W = 1e-3 * rng.standard_normal((d, d))
    v = 1e-3 * rng.standard_normal(d)
    solved = []
    for R in cfg.radii:
        r = cfg.r_of(R)
        if solved:
            # warm start: previous solution rescaled to the new radii
            W = W * (R / solved[-1][0])
            v = v * (r / solved[-1][1])
        gap = math.inf
        for _ in range(outer_iters):
            W, _, gw, _, _, _ = frank_wolfe(lambda M: _excess_grad_W(ds, M, v, code), W, p, R, cfg.inner_iters, 0.0)
            v, _, gv, _, _, _ = frank_wolfe(lambda u: _log_loss_grad_v(ds, W, u, code), v, p, r, cfg.inner_iters, 0.0)
            gap = gw + gv
            if gap <= cfg.fw_tol:
                break
        solved.append((R, r, W.copy(), v.copy(), _erm(ds, W, v, code), gap))

    if alpha is None:
        S = kernels.objective_grads(ds.X, ds.y, ds.Z, solved[-1][2], solved[-1][3], code)[3]
        alpha = np.argmax(S, axis=1)
    alpha = np.asarray(alpha, dtype=np.int64)
    W_ref = solve_att_svm(ds, alpha, p).require_optimal().weights
    v_ref = solve_v_svm(head_svm_points(ds, alpha), p).require_optimal().weights
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        report = verify_local_optimality(ds, solved[-1][3], alpha, p)
    if not report.verdict:
        warnings.warn("selected tokens are not locally optimal for the final head", RuntimeWarning, stacklevel=2)
    rows = []
    for R, r, Wk, vk, f, gap in solved:
        wd = directional_bregman(p, W_ref, Wk) if np.any(Wk) else math.nan
        vd = directional_bregman(p, v_ref, vk) if np.any(vk) else math.nan
        rows.append(SweepRow(R, r, f, wd, vd, gap, gap <= cfg.fw_tol, Wk, vk))
    return rows
