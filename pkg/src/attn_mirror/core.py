"""Numeric containers, dataset schema, model parameters and seeded randomness.

Matrices and vectors are plain float64 numpy arrays; the helpers here only
validate them.  A dataset keeps its samples stacked as ``X`` of shape
``(n, T, d)``, labels ``y`` of shape ``(n,)`` and comparison tokens ``Z`` of
shape ``(n, d)`` so the kernels can work on contiguous arrays.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, DomainError, ParameterError


def as_matrix(a, name="matrix"):
    m = np.array(a, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DomainError(f"{name} has non-finite entries")
    return m


def as_vector(a, name="vector"):
    x = np.array(a, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{name} has non-finite entries")
    return x


def _frozen(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class AttnSample:
    X: np.ndarray  # (T, d)
    y: int
    z: np.ndarray  # (d,)

    def __post_init__(self):
        X = as_matrix(self.X, "X")
        z = as_vector(self.z, "z")
        if X.shape[0] < 2:
            raise DimensionError("a sample needs at least two tokens")
        if z.shape[0] != X.shape[1]:
            raise DimensionError(f"z has length {z.shape[0]}, X has {X.shape[1]} columns")
        if self.y not in (1, -1):
            raise DomainError(f"label must be +1 or -1, got {self.y!r}")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "z", _frozen(z))
        object.__setattr__(self, "y", int(self.y))

    @property
    def T(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]


@dataclass(frozen=True)
class AttnDataset:
    X: np.ndarray  # (n, T, d)
    y: np.ndarray  # (n,) entries in {-1, +1}
    Z: np.ndarray  # (n, d)

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        y = np.array(self.y, dtype=np.float64)
        Z = np.array(self.Z, dtype=np.float64)
        if X.ndim != 3:
            raise DimensionError(f"X must have shape (n, T, d), got {X.shape}")
        n, T, d = X.shape
        if n < 1:
            raise DimensionError("dataset needs at least one sample")
        if T < 2 or d < 1:
            raise DimensionError(f"need T >= 2 and d >= 1, got T={T}, d={d}")
        if y.shape != (n,) or Z.shape != (n, d):
            raise DimensionError(f"y {y.shape} / Z {Z.shape} do not match X {X.shape}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Z))):
            raise DomainError("dataset has non-finite entries")
        if not np.all(np.abs(y) == 1.0):
            raise DomainError("labels must be exactly +1 or -1")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "Z", _frozen(Z))

    @classmethod
    def from_samples(cls, samples):
        samples = list(samples)
        if not samples:
            raise DimensionError("dataset needs at least one sample")
        shapes = {s.X.shape for s in samples}
        if len(shapes) != 1:
            raise DimensionError(f"samples disagree on (T, d): {sorted(shapes)}")
        return cls(
            X=np.stack([s.X for s in samples]),
            y=np.array([s.y for s in samples], dtype=np.float64),
            Z=np.stack([s.z for s in samples]),
        )

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def T(self):
        return self.X.shape[1]

    @property
    def d(self):
        return self.X.shape[2]

    @property
    def samples(self):
        return [AttnSample(self.X[i], int(self.y[i]), self.Z[i]) for i in range(self.n)]

    def scaled_z(self, c):
        return AttnDataset(self.X, self.y, self.Z * c)

    # -- JSON schema -------------------------------------------------------

    def to_json(self):
        doc = {
            "T": self.T,
            "d": self.d,
            "samples": [
                {"X": self.X[i].tolist(), "y": int(self.y[i]), "z": self.Z[i].tolist()}
                for i in range(self.n)
            ],
        }
        return _dumps(doc)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        try:
            T, d, raw = int(doc["T"]), int(doc["d"]), doc["samples"]
        except (KeyError, TypeError) as exc:
            raise DimensionError(f"malformed dataset document: {exc}") from None
        samples = []
        for s in raw:
            y = s["y"]
            if y not in (1, -1):
                raise DomainError(f"label must be +1 or -1, got {y!r}")
            samples.append(AttnSample(s["X"], y, s["z"]))
        ds = cls.from_samples(samples)
        if (ds.T, ds.d) != (T, d):
            raise DimensionError(f"header says T={T}, d={d}; samples have T={ds.T}, d={ds.d}")
        return ds

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())


def _fmt_float(x, null_nonfinite):
    x = float(x)
    if not np.isfinite(x):
        if null_nonfinite:
            return "null"
        raise DomainError("cannot serialize a non-finite number")
    return format(x, ".17g")


def _dumps(obj, null_nonfinite=False):
    """JSON text with every float written to 17 significant digits.

    Non-finite floats raise unless ``null_nonfinite`` is set, in which case
    they become ``null``.
    """
    if isinstance(obj, dict):
        return "{" + ",".join(f"{json.dumps(str(k))}:{_dumps(v, null_nonfinite)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_dumps(v, null_nonfinite) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)) or obj is None or isinstance(obj, str):
        return json.dumps(obj if not isinstance(obj, np.bool_) else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(obj, null_nonfinite)
    if isinstance(obj, np.ndarray):
        return _dumps(obj.tolist(), null_nonfinite)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


dumps = _dumps


@dataclass(frozen=True)
class ModelParams:
    W: np.ndarray  # (d, d) key-query product
    v: np.ndarray  # (d,) prediction head

    def __post_init__(self):
        W = as_matrix(self.W, "W")
        v = as_vector(self.v, "v")
        if W.shape[0] != W.shape[1]:
            raise DimensionError(f"W must be square, got {W.shape}")
        if v.shape[0] != W.shape[0]:
            raise DimensionError(f"v has length {v.shape[0]}, W is {W.shape}")
        object.__setattr__(self, "W", _frozen(W))
        object.__setattr__(self, "v", _frozen(v))

    @classmethod
    def zeros(cls, d):
        return cls(np.zeros((d, d)), np.zeros(d))


def make_rng(seed):
    """Counter-based generator (Philox) for a 64-bit seed."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.Philox(seed))


def unit_sphere_vector(d, rng):
    if d < 1:
        raise DimensionError("dimension must be at least 1")
    while True:
        g = rng.standard_normal(d)
        nrm = np.linalg.norm(g)
        if nrm > 1e-12:
            return g / nrm


def pq_norm(M, p):
    """Entrywise ``p``-norm of an array (the p,p-norm for matrices)."""
    if not p > 1:
        raise ParameterError(f"p must exceed 1, got {p}")
    a = np.abs(np.asarray(M, dtype=np.float64))
    scale = a.max(initial=0.0)
    if scale == 0.0:
        return 0.0
    return float(scale * np.sum((a / scale) ** p) ** (1.0 / p))


def dual_exponent(p):
    if not p > 1:
        raise ParameterError(f"p must exceed 1, got {p}")
    return p / (p - 1.0)
