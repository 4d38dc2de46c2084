"""l_p potentials, Bregman divergences, and the mirror-descent training loops.

With ``psi(W) = (1/p) * ||W||_{p,p}^p`` the mirror map acts entrywise as
``x -> sign(x) |x|^(p-1)``, so one step is: map to the dual space, take a
gradient step there, map back.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .core import ModelParams, make_rng, pq_norm
from .errors import DimensionError, DivergedError, DomainError, ParameterError
from .losses import LossKind, logistic_probability


@dataclass(frozen=True)
class Potential:
    p: float

    def __post_init__(self):
        if not self.p > 1:
            raise ParameterError(f"p must exceed 1, got {self.p}")
        object.__setattr__(self, "p", float(self.p))

    def __call__(self, M):
        return pq_norm(M, self.p) ** self.p / self.p

    @property
    def q(self):
        return self.p / (self.p - 1.0)


def _pot(pot):
    return pot if isinstance(pot, Potential) else Potential(pot)


def mirror_map(pot, M):
    return kernels.mirror_np(np.asarray(M, dtype=np.float64), _pot(pot).p)


def inverse_mirror_map(pot, M):
    return kernels.inverse_mirror_np(np.asarray(M, dtype=np.float64), _pot(pot).p)


def bregman_divergence(pot, W, V):
    p = _pot(pot).p
    W = np.asarray(W, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if W.shape != V.shape:
        raise DimensionError(f"shapes differ: {W.shape} vs {V.shape}")
    aw = np.abs(W)
    av = np.abs(V)
    # entrywise terms are each nonnegative; clip rounding noise
    terms = aw**p / p - av**p / p - kernels.mirror_np(V, p) * (W - V)
    return float(np.sum(np.maximum(terms, 0.0)))


def normalize_pq(M, p):
    nrm = pq_norm(M, p)
    if nrm == 0.0:
        raise DomainError("cannot normalize a zero matrix")
    return np.asarray(M, dtype=np.float64) / nrm


def directional_bregman(pot, W, V):
    """Bregman divergence between ``W`` and ``V`` after scaling both to unit p,p-norm."""
    p = _pot(pot).p
    return bregman_divergence(p, normalize_pq(W, p), normalize_pq(V, p))


def lp_attgd_step(W, grad, pot, eta):
    if not eta > 0:
        raise ParameterError(f"step size must be positive, got {eta}")
    p = _pot(pot).p
    return kernels.inverse_mirror_np(kernels.mirror_np(np.asarray(W, float), p) - eta * np.asarray(grad), p)


def lp_jointgd_step(params, gW, gv, pot, eta_w, eta_v):
    if not (eta_w > 0 and eta_v > 0):
        raise ParameterError("step sizes must be positive")
    return ModelParams(lp_attgd_step(params.W, gW, pot, eta_w), lp_attgd_step(params.v, gv, pot, eta_v))


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NearZero:
    """Entries uniform in ``[-scale, scale]``; ``scale=0`` gives the exact origin."""

    scale: float = 1e-3
    seed: int = 0

    def make(self, shape, p):
        if self.scale < 0:
            raise ParameterError("init scale must be nonnegative")
        if self.scale == 0:
            return np.zeros(shape)
        return make_rng(self.seed).uniform(-self.scale, self.scale, size=shape)


@dataclass(frozen=True)
class ConeSeed:
    """``radius * reference / ||reference||_{p,p}``."""

    reference: np.ndarray
    radius: float = 8.0

    def make(self, shape, p):
        if not self.radius > 0:
            raise ParameterError("cone radius must be positive")
        ref = np.asarray(self.reference, dtype=np.float64)
        if ref.shape != tuple(shape):
            raise DimensionError(f"reference has shape {ref.shape}, expected {shape}")
        return self.radius * normalize_pq(ref, p)


@dataclass(frozen=True)
class TrainConfig:
    eta: float = 0.1
    max_iters: int = 2000
    loss: LossKind = LossKind.LOGISTIC
    normalize_grad: bool = True
    init: object = field(default_factory=NearZero)
    record_every: int = 10
    eta_v: Optional[float] = None
    safeguard: bool = False
    # gradients with Frobenius norm at or below this are applied unnormalized
    grad_floor: float = 0.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ParameterError(f"eta must be positive, got {self.eta}")
        if self.eta_v is not None and not self.eta_v > 0:
            raise ParameterError(f"eta_v must be positive, got {self.eta_v}")
        if self.max_iters < 0:
            raise ParameterError("max_iters must be nonnegative")
        if self.record_every < 1:
            raise ParameterError("record_every must be at least 1")
        object.__setattr__(self, "loss", LossKind.parse(self.loss))


def record_schedule(iters, every):
    ks = list(range(0, iters + 1, every))
    if ks[-1] != iters:
        ks.append(iters)
    return np.array(ks, dtype=np.int64)


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

CSV_COLUMNS = ("iter", "loss", "pq_norm", "dir_bregman", "mean_opt_softmax", "mean_logistic_prob")


@dataclass
class Trajectory:
    p: float
    iters: np.ndarray
    loss: np.ndarray
    W: np.ndarray  # (records, d, d)
    v: np.ndarray  # (records, d)
    probs: np.ndarray  # (records, n, T)
    margins: np.ndarray  # (records, n), y_i f(X_i, z_i)
    reference: Optional[np.ndarray] = None
    alpha: Optional[np.ndarray] = None
    eta_halvings: int = 0

    def __len__(self):
        return len(self.iters)

    @property
    def pq_norm(self):
        return np.array([pq_norm(W, self.p) for W in self.W])

    def final_alpha(self):
        """Token with the largest attention weight per sample at the last record."""
        return np.argmax(self.probs[-1], axis=1).astype(np.int64)

    def dir_bregman(self, reference=None, p=None):
        """Directional divergence ``D(ref/||ref||, W(k)/||W(k)||)`` per record (NaN where W=0)."""
        ref = self.reference if reference is None else reference
        if ref is None:
            return np.full(len(self), np.nan)
        p = self.p if p is None else p
        out = np.full(len(self), np.nan)
        for r, W in enumerate(self.W):
            if np.any(W):
                out[r] = directional_bregman(p, ref, W)
        return out

    def dir_bregman_v(self, reference, p=None):
        p = self.p if p is None else p
        out = np.full(len(self), np.nan)
        for r, v in enumerate(self.v):
            if np.any(v):
                out[r] = directional_bregman(p, reference, v)
        return out

    def mean_opt_softmax(self, alpha=None):
        alpha = self.alpha if alpha is None else alpha
        if alpha is None:
            alpha = self.final_alpha()
        idx = np.asarray(alpha, dtype=np.int64)
        return self.probs[:, np.arange(self.probs.shape[1]), idx].mean(axis=1)

    def mean_logistic_prob(self):
        return np.array([logistic_probability(m) for m in self.margins])

    def columns(self):
        return {
            "iter": self.iters,
            "loss": self.loss,
            "pq_norm": self.pq_norm,
            "dir_bregman": self.dir_bregman(),
            "mean_opt_softmax": self.mean_opt_softmax(),
            "mean_logistic_prob": self.mean_logistic_prob(),
        }

    def to_csv(self):
        cols = self.columns()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in range(len(self)):
            row = []
            for name in CSV_COLUMNS:
                x = cols[name][r]
                if name == "iter":
                    row.append(str(int(x)))
                elif np.isnan(x):
                    row.append("")
                else:
                    row.append(format(float(x), ".17g"))
            w.writerow(row)
        return buf.getvalue()


def read_trajectory_csv(text):
    """Parse a trajectory CSV into a dict of float arrays (blank fields become NaN)."""
    rows = list(csv.DictReader(io.StringIO(text)))
    return {c: np.array([float(r[c]) if r[c] != "" else np.nan for r in rows]) for c in CSV_COLUMNS}


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _run(ds, W0, v0, pot, cfg, joint):
    p = _pot(pot).p
    sched = record_schedule(cfg.max_iters, cfg.record_every)
    eta_v = cfg.eta if cfg.eta_v is None else cfg.eta_v
    W, v, loss, Wh, vh, Sh, mh, bad, halvings = kernels.train_loop(
        ds.X, ds.y, ds.Z, W0, v0, p, cfg.eta, eta_v, sched,
        cfg.normalize_grad, cfg.loss.value, joint, cfg.safeguard, cfg.grad_floor,
    )
    if bad >= 0:
        raise DivergedError(f"non-finite loss or parameters at iterate {bad}", iteration=int(bad))
    traj = Trajectory(p, sched, loss, Wh, vh, Sh, mh, eta_halvings=int(halvings))
    return W, v, traj


def train_attention(ds, v, pot, cfg, reference=None):
    """l_p-AttGD on ``W`` with the head ``v`` held fixed."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (ds.d,):
        raise DimensionError(f"v has shape {v.shape}, dataset has d={ds.d}")
    p = _pot(pot).p
    W0 = cfg.init.make((ds.d, ds.d), p)
    W, _, traj = _run(ds, W0, v, pot, cfg, joint=False)
    if reference is not None:
        traj.reference = np.asarray(reference, dtype=np.float64)
    return W, traj


def train_joint(ds, pot, cfg, v_init=None):
    """l_p-JointGD on ``(W, v)``.  ``v`` starts from ``v_init`` or the same init rule as ``W``."""
    p = _pot(pot).p
    W0 = cfg.init.make((ds.d, ds.d), p)
    if v_init is None:
        init = cfg.init
        if isinstance(init, NearZero):
            v0 = NearZero(init.scale, init.seed + 1).make((ds.d,), p)
        else:
            v0 = np.zeros(ds.d)
    else:
        v0 = np.asarray(v_init, dtype=np.float64)
    W, v, traj = _run(ds, W0, v0, pot, cfg, joint=True)
    return ModelParams(W, v), traj
