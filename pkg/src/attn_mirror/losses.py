"""ERM objective, closed-form gradients and a central-difference oracle."""

import enum

import numpy as np

from . import kernels
from .errors import DimensionError, DomainError


class LossKind(enum.Enum):
    EXPONENTIAL = kernels.EXP_LOSS
    LOGISTIC = kernels.LOGISTIC_LOSS

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).lower()
        if key in ("exp", "exponential"):
            return cls.EXPONENTIAL
        if key in ("logistic", "log"):
            return cls.LOGISTIC
        raise ValueError(f"unknown loss {name!r}")

    def __call__(self, x):
        return kernels.loss_and_slope_np(x, self.value)[0]

    def derivative(self, x):
        return kernels.loss_and_slope_np(x, self.value)[1]


def _check(params, ds):
    if params.W.shape != (ds.d, ds.d):
        raise DimensionError(f"W has shape {params.W.shape}, dataset has d={ds.d}")


def erm_objective(params, ds, loss):
    _check(params, ds)
    return float(kernels.objective_grads(ds.X, ds.y, ds.Z, params.W, params.v, loss.value)[0])


def grad_W(params, ds, loss):
    r"""Gradient in ``W``: ``(1/n) sum_i l'_i X_i^T (diag(s_i) - s_i s_i^T) gamma_i z_i^T``."""
    _check(params, ds)
    return kernels.objective_grads(ds.X, ds.y, ds.Z, params.W, params.v, loss.value)[1]


def grad_v(params, ds, loss):
    """Gradient in ``v``: ``(1/n) sum_i l'_i y_i X_i^T s_i``."""
    _check(params, ds)
    return kernels.objective_grads(ds.X, ds.y, ds.Z, params.W, params.v, loss.value)[2]


def softmax_jacobian(s, tol=1e-9):
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise DimensionError("expected a non-empty probability vector")
    if np.any(s < -tol) or abs(s.sum() - 1.0) > tol:
        raise DomainError("vector is not on the probability simplex")
    return np.diag(s) - np.outer(s, s)


def default_step(x):
    return 1e-6 * (1.0 + np.abs(x))


def finite_diff_grad(objective, point, step=default_step):
    """Central differences of a scalar ``objective`` at ``point`` (any shape).

    ``step`` is either a float or a callable mapping the point to per-entry
    step sizes.
    """
    x0 = np.array(point, dtype=np.float64)
    h = step(x0) if callable(step) else np.full(x0.shape, float(step))
    h = np.broadcast_to(h, x0.shape)
    grad = np.empty_like(x0)
    x = x0.copy()
    for idx in np.ndindex(x0.shape):
        x[idx] = x0[idx] + h[idx]
        fp = objective(x)
        x[idx] = x0[idx] - h[idx]
        fm = objective(x)
        x[idx] = x0[idx]
        grad[idx] = (fp - fm) / (2.0 * h[idx])
    return grad


def rel_error(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), np.max(np.abs(a)), 1e-12))


def logistic_probability(margins):
    """Mean ``1 / (1 + exp(-y_i f_i))`` over samples."""
    m = np.asarray(margins, dtype=np.float64)
    return float(np.mean(0.5 * (1.0 + np.tanh(0.5 * m))))
