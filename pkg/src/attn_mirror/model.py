"""Single-head attention classifier: softmax, forward pass and token scores."""

import numpy as np

from .core import as_vector
from .errors import DimensionError


def softmax(logits):
    x = as_vector(logits, "logits")
    if x.size == 0:
        raise DimensionError("softmax of an empty vector")
    e = np.exp(x - x.max())
    return e / e.sum()


def _check(W, s):
    W = np.asarray(W, dtype=np.float64)
    if W.shape != (s.d, s.d):
        raise DimensionError(f"W has shape {W.shape}, sample needs ({s.d}, {s.d})")
    return W


def attn_probs(W, s):
    """Attention weights ``softmax(X W z)`` over the tokens of one sample."""
    W = _check(W, s)
    return softmax(s.X @ (W @ s.z))


def attn_forward(params, s):
    """Model output ``v^T X^T softmax(X W z)``."""
    _check(params.W, s)
    if params.v.shape != (s.d,):
        raise DimensionError(f"v has length {params.v.shape[0]}, sample has d={s.d}")
    return float(params.v @ (s.X.T @ attn_probs(params.W, s)))


def token_scores(v, s):
    """Per-token scores ``y * v^T X_t``."""
    v = as_vector(v, "v")
    if v.shape[0] != s.d:
        raise DimensionError(f"v has length {v.shape[0]}, sample has d={s.d}")
    return s.y * (s.X @ v)


def dataset_scores(v, ds):
    """Token scores for every sample, shape ``(n, T)``."""
    v = as_vector(v, "v")
    if v.shape[0] != ds.d:
        raise DimensionError(f"v has length {v.shape[0]}, dataset has d={ds.d}")
    return ds.y[:, None] * (ds.X @ v)


def globally_optimal_tokens(v, ds):
    """Highest-score token per sample; ``np.argmax`` keeps the lowest index on ties."""
    return np.argmax(dataset_scores(v, ds), axis=1).astype(np.int64)


def dataset_probs(W, ds):
    """Attention weights for every sample, shape ``(n, T)``."""
    H = np.einsum("ntd,de,ne->nt", ds.X, W, ds.Z)
    H = H - H.max(axis=1, keepdims=True)
    E = np.exp(H)
    return E / E.sum(axis=1, keepdims=True)
