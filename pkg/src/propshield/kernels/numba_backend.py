"""Numba-jitted implementations of the hot numeric kernels.

Mirrors numpy_backend signature for signature. Row-wise reductions are
written as explicit loops (cheap under nopython); matmuls stay as `@`.
Compiled objects are cached on disk, so only the first import in a fresh
environment pays the compile cost.
"""

import numpy as np
from numba import njit

LOG_CLAMP = 1e-12


@njit(cache=True)
def _offsets(sizes):
    L = sizes.shape[0] - 1
    offs = np.empty((L, 2), dtype=np.int64)
    pos = 0
    for l in range(L):
        offs[l, 0] = pos
        pos += sizes[l + 1] * sizes[l]
        offs[l, 1] = pos
        pos += sizes[l + 1]
    return offs, pos


def layer_offsets(sizes):
    return _offsets(np.asarray(sizes, dtype=np.int64))


@njit(cache=True)
def _weight_views(theta, sizes):
    offs, _ = _offsets(sizes)
    L = sizes.shape[0] - 1
    Ws = [theta[offs[0, 0]:offs[0, 0] + sizes[1] * sizes[0]].reshape(sizes[1], sizes[0])]
    bs = [theta[offs[0, 1]:offs[0, 1] + sizes[1]]]
    for l in range(1, L):
        Ws.append(theta[offs[l, 0]:offs[l, 0] + sizes[l + 1] * sizes[l]].reshape(sizes[l + 1], sizes[l]))
        bs.append(theta[offs[l, 1]:offs[l, 1] + sizes[l + 1]])
    return Ws, bs


@njit(cache=True)
def _softmax_rows(Z):
    n, C = Z.shape
    P = np.empty((n, C))
    for i in range(n):
        m = Z[i, 0]
        for j in range(1, C):
            if Z[i, j] > m:
                m = Z[i, j]
        s = 0.0
        for j in range(C):
            e = np.exp(Z[i, j] - m)
            P[i, j] = e
            s += e
        for j in range(C):
            P[i, j] /= s
    return P


@njit(cache=True)
def _run_forward(theta, sizes, X):
    Ws, bs = _weight_views(theta, sizes)
    L = len(Ws)
    acts = [X]
    A = X
    P = np.empty((0, 0))
    for l in range(L):
        Z = A @ Ws[l].T + bs[l]
        if l < L - 1:
            A = np.maximum(Z, 0.0)
            acts.append(A)
        else:
            P = _softmax_rows(Z)
    return acts, P


@njit(cache=True)
def forward(theta, sizes, X):
    acts, P = _run_forward(theta, sizes, X)
    return P


@njit(cache=True)
def grad_loss(theta, sizes, X, y, w, l2):
    Ws, bs = _weight_views(theta, sizes)
    offs, p = _offsets(sizes)
    L = len(Ws)
    n = X.shape[0]
    acts, P = _run_forward(theta, sizes, X)

    loss = 0.0
    for i in range(n):
        pt = P[i, y[i]]
        if pt < LOG_CLAMP:
            pt = LOG_CLAMP
        loss += -np.log(pt) * w[i]
    loss /= n
    sq = 0.0
    for k in range(p):
        sq += theta[k] * theta[k]
    loss += 0.5 * l2 * sq

    G = P
    C = G.shape[1]
    for i in range(n):
        G[i, y[i]] -= 1.0
        scale = w[i] / n
        for j in range(C):
            G[i, j] *= scale

    grad = np.zeros(p)
    for l in range(L - 1, -1, -1):
        n_out = sizes[l + 1]
        n_in = sizes[l]
        dW = G.T @ acts[l]
        grad[offs[l, 0]:offs[l, 0] + n_out * n_in] = dW.ravel()
        grad[offs[l, 1]:offs[l, 1] + n_out] = np.sum(G, axis=0)
        if l > 0:
            G = np.where(acts[l] > 0.0, G @ Ws[l], 0.0)
    for k in range(p):
        grad[k] += l2 * theta[k]
    return grad, loss


@njit(cache=True)
def grad_inputs(theta, sizes, X, y, w):
    Ws, bs = _weight_views(theta, sizes)
    L = len(Ws)
    n = X.shape[0]
    acts, P = _run_forward(theta, sizes, X)
    G = P
    C = G.shape[1]
    for i in range(n):
        G[i, y[i]] -= 1.0
        scale = w[i] / n
        for j in range(C):
            G[i, j] *= scale
    for l in range(L - 1, 0, -1):
        G = np.where(acts[l] > 0.0, G @ Ws[l], 0.0)
    return G @ Ws[0]


@njit(cache=True)
def vjp_probs(theta, sizes, X, U):
    Ws, bs = _weight_views(theta, sizes)
    offs, p = _offsets(sizes)
    L = len(Ws)
    n = X.shape[0]
    acts, P = _run_forward(theta, sizes, X)

    C = P.shape[1]
    G = np.empty((n, C))
    for i in range(n):
        dot = 0.0
        for j in range(C):
            dot += U[i, j] * P[i, j]
        for j in range(C):
            G[i, j] = P[i, j] * (U[i, j] - dot)

    grad = np.zeros(p)
    for l in range(L - 1, -1, -1):
        n_out = sizes[l + 1]
        n_in = sizes[l]
        dW = G.T @ acts[l]
        grad[offs[l, 0]:offs[l, 0] + n_out * n_in] = dW.ravel()
        grad[offs[l, 1]:offs[l, 1] + n_out] = np.sum(G, axis=0)
        if l > 0:
            G = np.where(acts[l] > 0.0, G @ Ws[l], 0.0)
    return grad


@njit(cache=True)
def hvp(theta, sizes, X, y, v, l2):
    Ws, bs = _weight_views(theta, sizes)
    Vs, cs = _weight_views(v, sizes)
    offs, p = _offsets(sizes)
    L = len(Ws)
    n = X.shape[0]

    acts = [X]
    Racts = [np.zeros_like(X)]
    A = X
    RA = np.zeros_like(X)
    P = np.empty((0, 0))
    RP = np.empty((0, 0))
    for l in range(L):
        Z = A @ Ws[l].T + bs[l]
        RZ = RA @ Ws[l].T + A @ Vs[l].T + cs[l]
        if l < L - 1:
            A = np.maximum(Z, 0.0)
            RA = np.where(Z > 0.0, RZ, 0.0)
            acts.append(A)
            Racts.append(RA)
        else:
            P = _softmax_rows(Z)
            C = P.shape[1]
            RP = np.empty((n, C))
            for i in range(n):
                dot = 0.0
                for j in range(C):
                    dot += P[i, j] * RZ[i, j]
                for j in range(C):
                    RP[i, j] = P[i, j] * (RZ[i, j] - dot)

    G = P
    C = G.shape[1]
    for i in range(n):
        G[i, y[i]] -= 1.0
        for j in range(C):
            G[i, j] /= n
    RG = RP / n

    hv = np.zeros(p)
    for l in range(L - 1, -1, -1):
        n_out = sizes[l + 1]
        n_in = sizes[l]
        dW = RG.T @ acts[l] + G.T @ Racts[l]
        hv[offs[l, 0]:offs[l, 0] + n_out * n_in] = dW.ravel()
        hv[offs[l, 1]:offs[l, 1] + n_out] = np.sum(RG, axis=0)
        if l > 0:
            mask = acts[l] > 0.0
            RG = np.where(mask, RG @ Ws[l] + G @ Vs[l], 0.0)
            G = np.where(mask, G @ Ws[l], 0.0)
    for k in range(p):
        hv[k] += l2 * v[k]
    return hv


@njit(cache=True)
def sgd_epoch(theta, sizes, X, y, w, order, lr, batch_size, l2):
    n = X.shape[0]
    p = theta.shape[0]
    total = 0.0
    batches = 0
    for s in range(0, n, batch_size):
        e = s + batch_size
        if e > n:
            e = n
        idx = order[s:e]
        g, loss = grad_loss(theta, sizes, X[idx], y[idx], w[idx], l2)
        for k in range(p):
            theta[k] -= lr * g[k]
        total += loss
        batches += 1
    return total / batches
