"""Hot loops: ERM objective with analytic gradients, and the mirror-descent loop.

Every kernel exists twice.  ``*_np`` is the vectorized numpy reference;
``*_nb`` is the same computation written as explicit loops and compiled
with numba.  :func:`objective_grads` and :func:`train_loop` dispatch on
:func:`attn_mirror._accel.use_numba`, so setting
``ATTN_MIRROR_DISABLE_NUMBA=1`` switches the whole package to numpy.

Loss codes: 0 = exponential ``exp(-x)``, 1 = logistic ``log(1 + exp(-x))``.
"""

import math

import numpy as np

from ._accel import njit, use_numba

EXP_LOSS = 0
LOGISTIC_LOSS = 1


# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------


def softmax_rows_np(H):
    H = H - H.max(axis=-1, keepdims=True)
    E = np.exp(H)
    return E / E.sum(axis=-1, keepdims=True)


def loss_and_slope_np(m, code):
    """Per-sample loss values and derivatives at margins ``m``."""
    m = np.asarray(m, dtype=np.float64)
    if code == EXP_LOSS:
        e = np.exp(-m)
        return e, -e
    pos = m >= 0
    e = np.exp(-np.abs(m))
    val = np.where(pos, np.log1p(e), -m + np.log1p(e))
    slope = np.where(pos, -e / (1.0 + e), -1.0 / (1.0 + e))
    return val, slope


def objective_grads_np(X, y, Z, W, v, code):
    n = X.shape[0]
    H = np.einsum("ntd,de,ne->nt", X, W, Z)
    S = softmax_rows_np(H)
    G = y[:, None] * np.einsum("ntd,d->nt", X, v)  # token scores
    m = np.einsum("nt,nt->n", G, S)  # y_i f(X_i, z_i)
    val, slope = loss_and_slope_np(m, code)
    # (diag(s) - s s^T) gamma = s * (gamma - <s, gamma>), with gamma_t - <s, gamma>
    # summed pairwise so it stays accurate once attention saturates
    C = np.einsum("nu,ntu->nt", S, G[:, :, None] - G[:, None, :])
    JG = S * C
    a = np.einsum("n,nt,ntd->nd", slope, JG, X)
    gW = a.T @ Z / n
    gv = np.einsum("n,nt,ntd->d", slope * y, S, X) / n
    return val.mean(), gW, gv, S, m


def scaled_norm_np(g):
    """Euclidean norm that survives entries near the underflow threshold."""
    amax = np.max(np.abs(g))
    if amax == 0.0:
        return 0.0
    return amax * math.sqrt(np.sum((g / amax) ** 2))


def log_loss_ratio_np(m, code):
    """``log l(m)`` and ``l'(m) / l(m)``, finite for any margin."""
    m = np.asarray(m, dtype=np.float64)
    out = np.array([_log_l_scalar(x, code) for x in m.ravel()]).reshape(m.shape + (2,))
    return out[..., 0], out[..., 1]


def log_objective_grads_np(X, y, Z, W, v, code):
    """``(log L, F, grad_W log L, grad_v log L)``.

    ``F = log L - log L*`` is the excess over the loss at perfect attention
    (every sample attending only to its best-scoring token).  It does not
    depend on ``W`` beyond the attention and is computed without
    cancellation, so it keeps resolving changes in ``W`` long after
    ``log L`` itself has stopped moving in floating point.
    """
    n = X.shape[0]
    H = np.einsum("ntd,de,ne->nt", X, W, Z)
    S = softmax_rows_np(H)
    G = y[:, None] * np.einsum("ntd,d->nt", X, v)
    m = np.einsum("nt,nt->n", G, S)
    g = G.max(axis=1)
    delta = np.einsum("nt,nt->n", S, g[:, None] - G)
    ll, ratio = log_loss_ratio_np(m, code)
    llg, _ = log_loss_ratio_np(g, code)
    D = np.array([_excess_scalar(gi, di, code) for gi, di in zip(g, delta)])
    top = llg.max()
    w = np.exp(llg - top)
    w /= w.sum()
    F = math.log1p(float(np.sum(w * np.expm1(D))))
    base = top + math.log(np.sum(np.exp(llg - top))) - math.log(n)
    top = ll.max()
    pi = np.exp(ll - top)
    pi /= pi.sum()
    C = np.einsum("nu,ntu->nt", S, G[:, :, None] - G[:, None, :])
    wgt = pi * ratio
    a = np.einsum("n,nt,ntd->nd", wgt, S * C, X)
    gW = a.T @ Z
    gv = np.einsum("n,nt,ntd->d", wgt * y, S, X)
    return base + F, F, gW, gv


def mirror_np(A, p):
    if p == 2.0:
        return A.copy()
    return np.sign(A) * np.abs(A) ** (p - 1.0)


def inverse_mirror_np(A, p):
    if p == 2.0:
        return A.copy()
    return np.sign(A) * np.abs(A) ** (1.0 / (p - 1.0))


def train_loop_np(X, y, Z, W0, v0, p, eta_w, eta_v, record_at, normalize, code, joint, safeguard, floor):
    iters = record_at[-1]
    n, T, d = X.shape
    nrec = record_at.shape[0]
    rec_loss = np.empty(nrec)
    rec_W = np.empty((nrec, d, d))
    rec_v = np.empty((nrec, d))
    rec_S = np.empty((nrec, n, T))
    rec_m = np.empty((nrec, n))
    W = W0.copy()
    v = v0.copy()
    halvings = 0
    prev = None
    r = 0
    k = 0
    while True:
        loss, gW, gv, S, m = objective_grads_np(X, y, Z, W, v, code)
        if not (math.isfinite(loss) and np.all(np.isfinite(W)) and np.all(np.isfinite(v))):
            return W, v, rec_loss, rec_W, rec_v, rec_S, rec_m, k, halvings
        if safeguard and prev is not None and loss > prev[0] + 1e-12 * (1.0 + abs(prev[0])) and halvings < 20:
            _, W, v = prev
            eta_w *= 0.5
            eta_v *= 0.5
            halvings += 1
            k -= 1
            loss, gW, gv, S, m = objective_grads_np(X, y, Z, W, v, code)
            prev = None
        if r < nrec and record_at[r] == k:
            rec_loss[r] = loss
            rec_W[r] = W
            rec_v[r] = v
            rec_S[r] = S
            rec_m[r] = m
            r += 1
        if k == iters:
            break
        if normalize:
            nw = scaled_norm_np(gW)
            if nw > floor:
                gW = gW / nw
            if joint:
                nv = scaled_norm_np(gv)
                if nv > floor:
                    gv = gv / nv
        if safeguard:
            prev = (loss, W, v)
        W = inverse_mirror_np(mirror_np(W, p) - eta_w * gW, p)
        if joint:
            v = inverse_mirror_np(mirror_np(v, p) - eta_v * gv, p)
        k += 1
    return W, v, rec_loss, rec_W, rec_v, rec_S, rec_m, -1, halvings


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------


@njit(cache=True)
def _loss_slope_scalar(m, code):
    if code == 0:
        e = math.exp(-m)
        return e, -e
    if m >= 0.0:
        e = math.exp(-m)
        return math.log1p(e), -e / (1.0 + e)
    e = math.exp(m)
    return -m + math.log1p(e), -1.0 / (1.0 + e)


@njit(cache=True)
def _objective_grads_into(X, y, Z, W, v, code, gW, gv, S, m):
    n, T, d = X.shape
    Wz = np.empty(d)
    h = np.empty(T)
    g = np.empty(T)
    a = np.empty(d)
    for r in range(d):
        for c in range(d):
            gW[r, c] = 0.0
        gv[r] = 0.0
    total = 0.0
    for i in range(n):
        for r in range(d):
            acc = 0.0
            for c in range(d):
                acc += W[r, c] * Z[i, c]
            Wz[r] = acc
        hmax = -np.inf
        for t in range(T):
            acc = 0.0
            sc = 0.0
            for r in range(d):
                acc += X[i, t, r] * Wz[r]
                sc += X[i, t, r] * v[r]
            h[t] = acc
            g[t] = y[i] * sc
            if acc > hmax:
                hmax = acc
        ssum = 0.0
        for t in range(T):
            e = math.exp(h[t] - hmax)
            S[i, t] = e
            ssum += e
        mi = 0.0
        for t in range(T):
            S[i, t] /= ssum
            mi += S[i, t] * g[t]
        m[i] = mi
        val, slope = _loss_slope_scalar(mi, code)
        total += val
        for r in range(d):
            a[r] = 0.0
        for t in range(T):
            ct = 0.0
            for u in range(T):
                ct += S[i, u] * (g[t] - g[u])
            wt = slope * S[i, t] * ct
            wv = slope * y[i] * S[i, t]
            for r in range(d):
                a[r] += wt * X[i, t, r]
                gv[r] += wv * X[i, t, r]
        for r in range(d):
            for c in range(d):
                gW[r, c] += a[r] * Z[i, c]
    inv = 1.0 / n
    for r in range(d):
        for c in range(d):
            gW[r, c] *= inv
        gv[r] *= inv
    return total * inv


@njit(cache=True)
def objective_grads_nb(X, y, Z, W, v, code):
    n, T, d = X.shape
    gW = np.empty((d, d))
    gv = np.empty(d)
    S = np.empty((n, T))
    m = np.empty(n)
    loss = _objective_grads_into(X, y, Z, W, v, code, gW, gv, S, m)
    return loss, gW, gv, S, m


@njit(cache=True)
def _log_l_scalar(m, code):
    if code == 0:
        return -m, -1.0
    if m > 30.0:
        e = math.exp(-m)
        return -m - 0.5 * e, -(1.0 - 0.5 * e)
    val, slope = _loss_slope_scalar(m, code)
    return math.log(val), slope / val


@njit(cache=True)
def _excess_scalar(g, delta, code):
    """``log l(g - delta) - log l(g)`` for ``delta >= 0``, accurate for tiny ``delta``."""
    if delta <= 0.0:
        return 0.0
    if code == 0:
        return delta
    m = g - delta
    if m > 30.0:
        if delta < 1.0:
            e = math.exp(-g) * math.expm1(delta)
        else:
            e = math.exp(-m) - math.exp(-g)
        return delta - 0.5 * e
    if delta < 1.0:
        lg = _loss_slope_scalar(g, code)[0]
        sg = 1.0 / (1.0 + math.exp(g))
        return math.log1p(math.log1p(sg * math.expm1(delta)) / lg)
    return _log_l_scalar(m, code)[0] - _log_l_scalar(g, code)[0]


@njit(cache=True)
def log_objective_grads_nb(X, y, Z, W, v, code):
    n, T, d = X.shape
    S = np.empty((n, T))
    G = np.empty((n, T))
    ll = np.empty(n)
    llg = np.empty(n)
    D = np.empty(n)
    ratio = np.empty(n)
    Wz = np.empty(d)
    for i in range(n):
        for r in range(d):
            acc = 0.0
            for c in range(d):
                acc += W[r, c] * Z[i, c]
            Wz[r] = acc
        hmax = -np.inf
        gmax = -np.inf
        for t in range(T):
            acc = 0.0
            sc = 0.0
            for r in range(d):
                acc += X[i, t, r] * Wz[r]
                sc += X[i, t, r] * v[r]
            S[i, t] = acc
            G[i, t] = y[i] * sc
            if acc > hmax:
                hmax = acc
            if G[i, t] > gmax:
                gmax = G[i, t]
        ssum = 0.0
        for t in range(T):
            e = math.exp(S[i, t] - hmax)
            S[i, t] = e
            ssum += e
        mi = 0.0
        di = 0.0
        for t in range(T):
            S[i, t] /= ssum
            mi += S[i, t] * G[i, t]
            di += S[i, t] * (gmax - G[i, t])
        ll[i], ratio[i] = _log_l_scalar(mi, code)
        llg[i] = _log_l_scalar(gmax, code)[0]
        D[i] = _excess_scalar(gmax, di, code)
    top = -np.inf
    topg = -np.inf
    for i in range(n):
        if ll[i] > top:
            top = ll[i]
        if llg[i] > topg:
            topg = llg[i]
    tot = 0.0
    totg = 0.0
    for i in range(n):
        tot += math.exp(ll[i] - top)
        totg += math.exp(llg[i] - topg)
    x = 0.0
    for i in range(n):
        x += math.exp(llg[i] - topg) / totg * math.expm1(D[i])
    F = math.log1p(x)
    gW = np.zeros((d, d))
    gv = np.zeros(d)
    a = np.empty(d)
    for i in range(n):
        wgt = math.exp(ll[i] - top) / tot * ratio[i]
        for r in range(d):
            a[r] = 0.0
        for t in range(T):
            ct = 0.0
            for u in range(T):
                ct += S[i, u] * (G[i, t] - G[i, u])
            wt = wgt * S[i, t] * ct
            wv = wgt * y[i] * S[i, t]
            for r in range(d):
                a[r] += wt * X[i, t, r]
                gv[r] += wv * X[i, t, r]
        for r in range(d):
            for c in range(d):
                gW[r, c] += a[r] * Z[i, c]
    return topg + math.log(totg) - math.log(n) + F, F, gW, gv


@njit(cache=True)
def _scaled_norm(g):
    flat = g.reshape(-1)
    amax = 0.0
    for j in range(flat.shape[0]):
        if abs(flat[j]) > amax:
            amax = abs(flat[j])
    if amax == 0.0:
        return 0.0
    acc = 0.0
    for j in range(flat.shape[0]):
        r = flat[j] / amax
        acc += r * r
    return amax * math.sqrt(acc)


@njit(cache=True)
def _mirror_inplace(A, p, inverse):
    if p == 2.0:
        return
    ex = 1.0 / (p - 1.0) if inverse else p - 1.0
    flat = A.reshape(-1)
    for j in range(flat.shape[0]):
        x = flat[j]
        if x > 0.0:
            flat[j] = x**ex
        elif x < 0.0:
            flat[j] = -((-x) ** ex)


@njit(cache=True)
def train_loop_nb(X, y, Z, W0, v0, p, eta_w, eta_v, record_at, normalize, code, joint, safeguard, floor):
    iters = record_at[-1]
    n, T, d = X.shape
    nrec = record_at.shape[0]
    rec_loss = np.empty(nrec)
    rec_W = np.empty((nrec, d, d))
    rec_v = np.empty((nrec, d))
    rec_S = np.empty((nrec, n, T))
    rec_m = np.empty((nrec, n))
    W = W0.copy()
    v = v0.copy()
    Wp = W0.copy()
    vp = v0.copy()
    gW = np.empty((d, d))
    gv = np.empty(d)
    S = np.empty((n, T))
    m = np.empty(n)
    halvings = 0
    have_prev = False
    prev_loss = 0.0
    r = 0
    k = 0
    while True:
        loss = _objective_grads_into(X, y, Z, W, v, code, gW, gv, S, m)
        finite = math.isfinite(loss)
        for a in range(d):
            if not math.isfinite(v[a]):
                finite = False
            for b in range(d):
                if not math.isfinite(W[a, b]):
                    finite = False
        if not finite:
            return W, v, rec_loss, rec_W, rec_v, rec_S, rec_m, k, halvings
        if safeguard and have_prev and loss > prev_loss + 1e-12 * (1.0 + abs(prev_loss)) and halvings < 20:
            W[:, :] = Wp
            v[:] = vp
            eta_w *= 0.5
            eta_v *= 0.5
            halvings += 1
            k -= 1
            loss = _objective_grads_into(X, y, Z, W, v, code, gW, gv, S, m)
            have_prev = False
        if r < nrec and record_at[r] == k:
            rec_loss[r] = loss
            rec_W[r] = W
            rec_v[r] = v
            rec_S[r] = S
            rec_m[r] = m
            r += 1
        if k == iters:
            break
        if normalize:
            nw = _scaled_norm(gW)
            if nw > floor:
                gW /= nw
            if joint:
                nv = _scaled_norm(gv)
                if nv > floor:
                    gv /= nv
        if safeguard:
            Wp[:, :] = W
            vp[:] = v
            prev_loss = loss
            have_prev = True
        _mirror_inplace(W, p, False)
        W -= eta_w * gW
        _mirror_inplace(W, p, True)
        if joint:
            _mirror_inplace(v, p, False)
            v -= eta_v * gv
            _mirror_inplace(v, p, True)
        k += 1
    return W, v, rec_loss, rec_W, rec_v, rec_S, rec_m, -1, halvings


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def objective_grads(X, y, Z, W, v, code):
    """Return ``(loss, grad_W, grad_v, softmax_probs, margins)`` for a stacked dataset."""
    args = (_c(X), _c(y), _c(Z), _c(W), _c(v), int(code))
    if use_numba():
        return objective_grads_nb(*args)
    return objective_grads_np(*args)


def log_objective_grads(X, y, Z, W, v, code):
    """Return ``(log L, F, grad_W log L, grad_v log L)``; see :func:`log_objective_grads_np`."""
    args = (_c(X), _c(y), _c(Z), _c(W), _c(v), int(code))
    if use_numba():
        return log_objective_grads_nb(*args)
    return log_objective_grads_np(*args)


def train_loop(X, y, Z, W0, v0, p, eta_w, eta_v, record_at, normalize, code, joint, safeguard, floor=0.0):
    """Run ``record_at[-1]`` mirror-descent steps, snapshotting at ``record_at``.

    Returns ``(W, v, loss, W_hist, v_hist, probs_hist, margin_hist,
    diverged_at, halvings)`` where ``diverged_at`` is -1 on success.
    """
    args = (
        _c(X), _c(y), _c(Z), _c(W0), _c(v0), float(p), float(eta_w), float(eta_v),
        np.ascontiguousarray(record_at, dtype=np.int64), bool(normalize), int(code),
        bool(joint), bool(safeguard), float(floor),
    )
    if use_numba():
        return train_loop_nb(*args)
    return train_loop_np(*args)
