"""Experiment drivers, dataset generators and convergence-law checkers."""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import AttnDataset, ModelParams, dumps, make_rng, unit_sphere_vector
from .errors import DomainError, InfeasibleError, ParameterError
from .losses import LossKind, erm_objective, finite_diff_grad, grad_W, grad_v, rel_error
from .mirror import NearZero, Trajectory, TrainConfig, train_attention
from .plotting import emit_svg
from .svm import solve_att_svm

log = logging.getLogger(__name__)

BUDGETS = {1.75: 1500, 2.0: 2000, 3.0: 20000}
DEFAULT_PS = (1.75, 2.0, 3.0)


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def gen_synthetic(n, T, d, seed):
    """Tokens, queries and head on the unit sphere, labels uniform in {-1, +1}."""
    if d < 1 or T < 2 or n < 1:
        raise DomainError(f"need n >= 1, T >= 2, d >= 1 (got n={n}, T={T}, d={d})")
    rng = make_rng(seed)
    X = np.array([[unit_sphere_vector(d, rng) for _ in range(T)] for _ in range(n)])
    Z = np.array([unit_sphere_vector(d, rng) for _ in range(n)])
    y = rng.choice([-1.0, 1.0], size=n)
    v = unit_sphere_vector(d, rng)
    return AttnDataset(X, y, Z), v


def example1_dataset():
    """Two mirrored 2x2 samples; returns the dataset and the selection (0, 0)."""
    X1 = np.array([[5.0, 0.0], [0.0, 1.0]])
    X2 = -X1
    ds = AttnDataset(np.stack([X1, X2]), [1, -1], np.stack([X1[0], X2[0]]))
    return ds, np.array([0, 0])


def example2_dataset():
    X1 = np.array([[-5.4, 2.4], [2.8, 4.2], [2.6, -0.2]])
    X2 = np.array([[0.8, -4.4], [-2.2, -0.8], [1.8, 0.2]])
    return AttnDataset(np.stack([X1, X2]), [1, -1], np.stack([X1[0], X2[0]]))


def load_source(source, seed, n=6, T=8, d=10):
    """Resolve a dataset source to ``(ds, v)``.

    Only generated data comes with its own head; for the fixed examples and
    files ``v`` is drawn on the unit sphere from ``seed``.
    """
    if source == "generated":
        return gen_synthetic(n, T, d, seed)
    if source == "example1":
        ds = example1_dataset()[0]
    elif source == "example2":
        ds = example2_dataset()
    else:
        ds = AttnDataset.load(source)
    return ds, unit_sphere_vector(ds.d, make_rng(seed))


# ---------------------------------------------------------------------------
# cross-p divergence experiment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentSpec:
    name: str = "fig-corr"
    source: str = "generated"
    ps: tuple = DEFAULT_PS
    trials: int = 20
    seed: int = 0
    n: int = 6
    T: int = 8
    d: int = 10
    eta: float = 0.1
    budgets: Optional[dict] = None
    record_every: int = 10
    normalize_grad: bool = True
    loss: LossKind = LossKind.LOGISTIC
    reference: str = "cross-p"
    out: Optional[str] = None
    workers: int = 1

    def __post_init__(self):
        ps = tuple(float(p) for p in self.ps)
        if not ps:
            raise ParameterError("p list is empty")
        if any(not p > 1 for p in ps):
            raise ParameterError("every p must exceed 1")
        if self.trials < 1:
            raise ParameterError("need at least one trial")
        if self.reference not in ("cross-p", "match-p"):
            raise ParameterError(f"unknown reference policy {self.reference!r}")
        object.__setattr__(self, "ps", ps)
        object.__setattr__(self, "loss", LossKind.parse(self.loss))
        if self.out is not None:
            root = Path(self.out)
            root.mkdir(parents=True, exist_ok=True)
            if not os.access(root, os.W_OK):
                raise ParameterError(f"output directory {root} is not writable")

    def iters_for(self, p):
        table = BUDGETS if self.budgets is None else {float(k): v for k, v in self.budgets.items()}
        if p in table:
            return int(table[p])
        return 2000

    def refs_for(self, p):
        return self.ps if self.reference == "cross-p" else (p,)


def _run_trial(spec, trial):
    seed = spec.seed ^ trial
    ds, v = load_source(spec.source, seed, spec.n, spec.T, spec.d)
    out = {}
    for p in spec.ps:
        cfg = TrainConfig(
            eta=spec.eta, max_iters=spec.iters_for(p), loss=spec.loss,
            normalize_grad=spec.normalize_grad, init=NearZero(1e-3, seed),
            record_every=spec.record_every,
        )
        _, traj = train_attention(ds, v, p, cfg)
        # reference tokens: the highest-attention token of each sample at the end of the path
        alpha = traj.final_alpha()
        for q in spec.refs_for(p):
            try:
                ref = solve_att_svm(ds, alpha, q).require_optimal().weights
            except InfeasibleError as exc:
                log.warning("trial %d skipped: %s", trial, exc)
                return trial, None
            out[(p, q)] = (traj.iters, traj.dir_bregman(ref, p))
    return trial, out


@dataclass
class FigCorrResult:
    ps: tuple
    iters: dict  # p -> record iterations
    mean: dict  # (p, q) -> mean divergence per record
    std: dict
    terminal: np.ndarray  # (trials, P, Q) final divergence, NaN for skipped trials
    skipped: list = field(default_factory=list)

    @property
    def terminal_mean(self):
        return np.nanmean(self.terminal, axis=0)

    def matched_is_row_min(self, p):
        i = self.ps.index(p)
        row = self.terminal_mean[i]
        return bool(np.all(row[i] < np.delete(row, i)))

    def dominance_fraction(self, p):
        """Share of trials whose matched terminal divergence beats every mismatched one."""
        i = self.ps.index(p)
        ok = []
        for t in self.terminal:
            if np.all(np.isnan(t)):
                continue
            ok.append(bool(np.all(t[i, i] < np.delete(t[i], i))))
        return float(np.mean(ok)) if ok else math.nan

    def summary(self):
        tm = self.terminal_mean
        return {
            "ps": list(self.ps),
            "trials": int(self.terminal.shape[0]),
            "skipped": list(self.skipped),
            "terminal_mean": {f"{p:g}": {f"{q:g}": float(tm[i, j]) for j, q in enumerate(self.ps)} for i, p in enumerate(self.ps)},
            "matched_is_row_min": {f"{p:g}": self.matched_is_row_min(p) for p in self.ps},
            "dominance_fraction": {f"{p:g}": self.dominance_fraction(p) for p in self.ps},
        }

    def csv_for(self, p):
        cols = ["iter"]
        for q in self.ps:
            cols += [f"mean_ref_{q:g}", f"std_ref_{q:g}"]
        lines = [",".join(cols)]
        for r, k in enumerate(self.iters[p]):
            vals = [str(int(k))]
            for q in self.ps:
                for arr in (self.mean.get((p, q)), self.std.get((p, q))):
                    x = math.nan if arr is None else arr[r]
                    vals.append("" if math.isnan(x) else format(float(x), ".17g"))
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"

    def svg_for(self, p):
        series = []
        for q in self.ps:
            if (p, q) not in self.mean:
                continue
            series.append({
                "label": f"ref p={q:g}",
                "x": self.iters[p].tolist(),
                "y": self.mean[(p, q)].tolist(),
                "err": self.std[(p, q)].tolist(),
            })
        return emit_svg(series, {"title": f"path p={p:g}", "xlabel": "iteration", "ylabel": "directional Bregman divergence", "logy": True})

    def write(self, root):
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        for p in self.ps:
            sub = root / f"{p:g}"
            sub.mkdir(exist_ok=True)
            (sub / "trajectory.csv").write_text(self.csv_for(p))
            (sub / "plot.svg").write_text(self.svg_for(p))
        (root / "summary.json").write_text(dumps(self.summary(), null_nonfinite=True) + "\n")


def run_fig_corr(spec):
    """Train one path per p on each trial and compare it with every p's max-margin solution."""
    trials = range(spec.trials)
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_run_trial, [spec] * spec.trials, trials))
    else:
        results = [_run_trial(spec, t) for t in trials]
    results.sort(key=lambda r: r[0])
    P = len(spec.ps)
    terminal = np.full((spec.trials, P, P), np.nan)
    stacks = {}
    iters = {}
    skipped = []
    for t, out in results:
        if out is None:
            skipped.append(t)
            continue
        for (p, q), (ks, div) in out.items():
            iters[p] = ks
            stacks.setdefault((p, q), []).append(div)
            terminal[t, spec.ps.index(p), spec.ps.index(q)] = div[-1]
    if not stacks:
        raise InfeasibleError("every trial was infeasible")
    mean = {key: np.nanmean(np.array(v), axis=0) if len(v) else None for key, v in stacks.items()}
    std = {key: np.nanstd(np.array(v), axis=0) for key, v in stacks.items()}
    res = FigCorrResult(spec.ps, iters, mean, std, terminal, skipped)
    if spec.out is not None:
        res.write(Path(spec.out) / spec.name)
    return res


# ---------------------------------------------------------------------------
# convergence-law checkers
# ---------------------------------------------------------------------------


@dataclass
class FitReport:
    model: str  # "LogGrowth" or "RateEnvelope"
    constants: dict
    residual: float
    passed: bool

    def to_dict(self):
        return {"model": self.model, "constants": self.constants, "residual": self.residual, "passed": self.passed}


def _tail(k, y, kmin):
    k = np.asarray(k, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    keep = (k >= kmin) & np.isfinite(y)
    k, y = k[keep], y[keep]
    start = len(k) // 2
    return k[start:], y[start:]


def fit_log_growth(traj, min_tail=50):
    """Least-squares fit ``||W(k)|| ~ a log k + b`` over the last half of the records with ``k >= 10``.

    Passes iff ``a > 0`` and every tail point sits within ``0.2 a log k`` of the fit.
    Accepts a :class:`Trajectory` or an ``(iters, norms)`` pair.
    """
    k, y = (traj.iters, traj.pq_norm) if isinstance(traj, Trajectory) else traj
    k, y = _tail(k, y, 10)
    if len(k) < min_tail:
        raise DomainError(f"need at least {min_tail} tail records with k >= 10, got {len(k)}")
    lk = np.log(k)
    (a, b), *_ = np.linalg.lstsq(np.column_stack([lk, np.ones_like(lk)]), y, rcond=None)
    res = np.abs(y - (a * lk + b))
    # slopes at rounding level of the data count as flat
    positive = a > 1e-9 * (1.0 + float(np.max(np.abs(y))))
    rel = float(np.max(res / (a * lk))) if positive else math.inf
    return FitReport("LogGrowth", {"a": float(a), "b": float(b)}, rel, bool(positive and rel < 0.2))


def rate_envelope(k, p):
    """The poly-log rate for exponent ``p`` at iteration(s) ``k`` (needs ``k > e``)."""
    lk = np.log(np.asarray(k, dtype=np.float64))
    if p > 2:
        return np.log(lk) / lk
    if p == 2:
        return np.log(lk) ** 2 / lk
    return 1.0 / lk ** (p - 1.0)


def envelope_branch(p):
    if p > 2:
        return "loglog(k)/log(k)"
    if p == 2:
        return "loglog(k)^2/log(k)"
    return "1/log(k)^(p-1)"


def rate_envelope_check(traj, p, reference=None, slack=1e-6):
    """Envelope ``C * rate_p(k)`` over the tail half of the divergence series.

    ``C`` is the largest tail ratio ``div / rate``; the check also requires
    the tail to be nonincreasing within ``slack``.  Accepts a
    :class:`Trajectory` (with a reference) or an ``(iters, divergences)`` pair.
    """
    if isinstance(traj, Trajectory):
        if reference is None and traj.reference is None:
            raise ParameterError("divergence needs a reference solution")
        k, div = traj.iters, traj.dir_bregman(reference)
    else:
        k, div = traj
    k, div = _tail(k, div, 3)
    if len(k) < 2:
        raise DomainError("tail too short for an envelope check")
    rate = rate_envelope(k, p)
    C = float(np.max(div / rate))
    bounded = bool(np.all(div <= 1.05 * C * rate))
    rise = float(max(0.0, np.max(np.diff(div))))
    return FitReport("RateEnvelope", {"C": C, "branch": envelope_branch(p)}, rise, bounded and rise <= slack)


def tail_nondecreasing(values, frac=0.5, slack=0.0):
    v = np.asarray(values, dtype=np.float64)
    tail = v[int(len(v) * (1 - frac)):]
    return bool(np.all(np.diff(tail) >= -slack))


def gradient_check(seed, instances=20):
    """Max relative error of the analytic gradients over random small instances."""
    rng = make_rng(seed)
    worst = {"grad_W": 0.0, "grad_v": 0.0}
    for i in range(instances):
        n, T, d = int(rng.integers(1, 4)), int(rng.integers(2, 5)), int(rng.integers(1, 7))
        ds = AttnDataset(rng.standard_normal((n, T, d)), rng.choice([-1, 1], size=n), rng.standard_normal((n, d)))
        W = 0.5 * rng.standard_normal((d, d))
        v = rng.standard_normal(d)
        loss = LossKind.LOGISTIC if i % 2 == 0 else LossKind.EXPONENTIAL
        gw = grad_W(ModelParams(W, v), ds, loss)
        gv = grad_v(ModelParams(W, v), ds, loss)
        fw = finite_diff_grad(lambda M: erm_objective(ModelParams(M, v), ds, loss), W)
        fv = finite_diff_grad(lambda u: erm_objective(ModelParams(W, u), ds, loss), v)
        worst["grad_W"] = max(worst["grad_W"], rel_error(gw, fw))
        worst["grad_v"] = max(worst["grad_v"], rel_error(gv, fv))
    return worst


def save_json(obj, path):
    Path(path).write_text(dumps(obj, null_nonfinite=True) + "\n")


def load_json(path):
    return json.loads(Path(path).read_text())
