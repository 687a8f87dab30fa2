"""Pure-numpy implementations of the hot numeric kernels.

All kernels operate on a flat float64 parameter vector ``theta`` laid out
per layer as [W_0.ravel(), b_0, W_1.ravel(), b_1, ...], where W_l has shape
(sizes[l+1], sizes[l]). Hidden layers use ReLU, the output layer softmax.
The numba backend implements the same signatures; see kernels/__init__.py
for how one of the two gets selected.
"""

import numpy as np

LOG_CLAMP = 1e-12


def layer_offsets(sizes):
    """Return per-layer (weight, bias) offsets into theta and the total size."""
    L = len(sizes) - 1
    offs = np.empty((L, 2), dtype=np.int64)
    pos = 0
    for l in range(L):
        offs[l, 0] = pos
        pos += int(sizes[l + 1]) * int(sizes[l])
        offs[l, 1] = pos
        pos += int(sizes[l + 1])
    return offs, pos


def _views(theta, sizes):
    offs, _ = layer_offsets(sizes)
    Ws, bs = [], []
    for l in range(len(sizes) - 1):
        n_out, n_in = int(sizes[l + 1]), int(sizes[l])
        Ws.append(theta[offs[l, 0]:offs[l, 0] + n_out * n_in].reshape(n_out, n_in))
        bs.append(theta[offs[l, 1]:offs[l, 1] + n_out])
    return Ws, bs


def _softmax(Z):
    E = np.exp(Z - Z.max(axis=1, keepdims=True))
    return E / E.sum(axis=1, keepdims=True)


def _run_forward(theta, sizes, X):
    """Forward pass keeping hidden activations; returns (acts, probs)."""
    Ws, bs = _views(theta, sizes)
    L = len(Ws)
    acts = [X]
    A = X
    for l in range(L):
        Z = A @ Ws[l].T + bs[l]
        if l < L - 1:
            A = np.maximum(Z, 0.0)
            acts.append(A)
        else:
            A = _softmax(Z)
    return acts, A


def forward(theta, sizes, X):
    return _run_forward(theta, sizes, X)[1]


def _ce(P, y, w, n):
    p_true = np.clip(P[np.arange(len(y)), y], LOG_CLAMP, 1.0)
    return float(np.sum(-np.log(p_true) * w) / n)


def grad_loss(theta, sizes, X, y, w, l2):
    """Gradient and value of weighted mean cross-entropy plus (l2/2)|theta|^2."""
    Ws, bs = _views(theta, sizes)
    L = len(Ws)
    n = X.shape[0]
    acts, P = _run_forward(theta, sizes, X)
    loss = _ce(P, y, w, n) + 0.5 * l2 * float(theta @ theta)

    G = P.copy()
    G[np.arange(n), y] -= 1.0
    G *= (w / n)[:, None]

    grad = np.zeros_like(theta)
    offs, _ = layer_offsets(sizes)
    for l in range(L - 1, -1, -1):
        A_prev = acts[l]
        n_out, n_in = int(sizes[l + 1]), int(sizes[l])
        grad[offs[l, 0]:offs[l, 0] + n_out * n_in] = (G.T @ A_prev).ravel()
        grad[offs[l, 1]:offs[l, 1] + n_out] = G.sum(axis=0)
        if l > 0:
            G = np.where(acts[l] > 0.0, G @ Ws[l], 0.0)
    grad += l2 * theta
    return grad, loss


def grad_inputs(theta, sizes, X, y, w):
    """Gradient of weighted mean cross-entropy with respect to the inputs."""
    Ws, _ = _views(theta, sizes)
    L = len(Ws)
    n = X.shape[0]
    acts, P = _run_forward(theta, sizes, X)
    G = P.copy()
    G[np.arange(n), y] -= 1.0
    G *= (w / n)[:, None]
    for l in range(L - 1, 0, -1):
        G = np.where(acts[l] > 0.0, G @ Ws[l], 0.0)
    return G @ Ws[0]


def vjp_probs(theta, sizes, X, U):
    """Gradient w.r.t. theta of sum(U * forward(theta, X))."""
    Ws, bs = _views(theta, sizes)
    L = len(Ws)
    acts, P = _run_forward(theta, sizes, X)
    # cotangent through softmax rows
    G = P * (U - (U * P).sum(axis=1, keepdims=True))
    grad = np.zeros_like(theta)
    offs, _ = layer_offsets(sizes)
    for l in range(L - 1, -1, -1):
        n_out, n_in = int(sizes[l + 1]), int(sizes[l])
        grad[offs[l, 0]:offs[l, 0] + n_out * n_in] = (G.T @ acts[l]).ravel()
        grad[offs[l, 1]:offs[l, 1] + n_out] = G.sum(axis=0)
        if l > 0:
            G = np.where(acts[l] > 0.0, G @ Ws[l], 0.0)
    return grad


def hvp(theta, sizes, X, y, v, l2):
    """Exact Hessian-vector product of mean cross-entropy plus (l2/2)|theta|^2.

    Forward-over-reverse: the forward pass carries tangents of the
    activations along direction v, the backward pass then differentiates
    the usual backprop product rule. ReLU second derivatives vanish a.e.
    """
    Ws, bs = _views(theta, sizes)
    Vs, cs = _views(v, sizes)
    L = len(Ws)
    n = X.shape[0]

    acts = [X]
    Racts = [np.zeros_like(X)]
    A, RA = X, np.zeros_like(X)
    for l in range(L):
        Z = A @ Ws[l].T + bs[l]
        RZ = RA @ Ws[l].T + A @ Vs[l].T + cs[l]
        if l < L - 1:
            mask = Z > 0.0
            A = np.where(mask, Z, 0.0)
            RA = np.where(mask, RZ, 0.0)
            acts.append(A)
            Racts.append(RA)
        else:
            P = _softmax(Z)
            RP = P * (RZ - (P * RZ).sum(axis=1, keepdims=True))

    G = P.copy()
    G[np.arange(n), y] -= 1.0
    G /= n
    RG = RP / n

    hv = np.zeros_like(theta)
    offs, _ = layer_offsets(sizes)
    for l in range(L - 1, -1, -1):
        n_out, n_in = int(sizes[l + 1]), int(sizes[l])
        hv[offs[l, 0]:offs[l, 0] + n_out * n_in] = (RG.T @ acts[l] + G.T @ Racts[l]).ravel()
        hv[offs[l, 1]:offs[l, 1] + n_out] = RG.sum(axis=0)
        if l > 0:
            mask = acts[l] > 0.0
            RG = np.where(mask, RG @ Ws[l] + G @ Vs[l], 0.0)
            G = np.where(mask, G @ Ws[l], 0.0)
    hv += l2 * v
    return hv


def sgd_epoch(theta, sizes, X, y, w, order, lr, batch_size, l2):
    """One pass of mini-batch SGD in the given visit order; theta is updated
    in place. Returns the mean per-batch loss."""
    n = X.shape[0]
    total = 0.0
    batches = 0
    for s in range(0, n, batch_size):
        idx = order[s:s + batch_size]
        g, loss = grad_loss(theta, sizes, X[idx], y[idx], w[idx], l2)
        theta -= lr * g
        total += loss
        batches += 1
    return total / batches
