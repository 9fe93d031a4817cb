"""Pure numpy implementations of the hot kernels.

Shapes: an ensemble of ``M`` single-hidden-layer tanh networks with weights
``W1 (M,H,D)``, ``b1 (M,H)``, ``W2 (M,O,H)``, ``b2 (M,O)`` applied to inputs
``X (M,B,D)``. ``X`` may be a broadcast view (stride 0 on the first axis).
"""
import numpy as np

MSE = 0
XENT = 1


def _bcast(X, M):
    return X if X.shape[0] == M else np.broadcast_to(X, (M,) + X.shape[1:])


def mlp_forward(W1, b1, W2, b2, X):
    X = _bcast(X, W1.shape[0])
    h = np.tanh(np.einsum("mhd,mbd->mbh", W1, X) + b1[:, None, :])
    return np.einsum("moh,mbh->mbo", W2, h) + b2[:, None, :]


def mlp_grad(W1, b1, W2, b2, X, T, mask, loss_kind):
    """Mean-over-batch loss and its gradient for every ensemble member.

    ``MSE``: sum over outputs of ``mask * (y - t)^2``; ``XENT``: softmax
    cross-entropy against target distributions ``T``.
    """
    X = _bcast(X, W1.shape[0])
    B = X.shape[1]
    h = np.tanh(np.einsum("mhd,mbd->mbh", W1, X) + b1[:, None, :])
    y = np.einsum("moh,mbh->mbo", W2, h) + b2[:, None, :]
    if loss_kind == MSE:
        r = y - T
        if mask is not None:
            r = r * mask
        loss = (r * r).sum(axis=(1, 2)) / B
        dy = 2.0 * r / B
    else:
        z = y - y.max(axis=-1, keepdims=True)
        logsum = np.log(np.exp(z).sum(-1, keepdims=True))
        logp = z - logsum
        loss = -(T * logp).sum(axis=(1, 2)) / B
        p = np.exp(logp)
        dy = (p * T.sum(-1, keepdims=True) - T) / B
    gW2 = np.einsum("mbo,mbh->moh", dy, h)
    gb2 = dy.sum(axis=1)
    da = np.einsum("mbo,moh->mbh", dy, W2) * (1.0 - h * h)
    gW1 = np.einsum("mbh,mbd->mhd", da, X)
    gb1 = da.sum(axis=1)
    return loss, gW1, gb1, gW2, gb2


def rbf_sum(a, b, gamma):
    total = 0.0
    step = max(1, 4_000_000 // max(1, len(b) * a.shape[1]))
    for i in range(0, len(a), step):
        d = a[i : i + step, None, :] - b[None, :, :]
        total += float(np.exp(-gamma * (d * d).sum(-1)).sum())
    return total


def rbf_block_sums(S, R, gamma):
    """Kernel sums between particle sample blocks and against reference samples.

    Returns ``(G, c)`` with ``G[m, m'] = sum_{i in m, j in m'} k`` and
    ``c[m] = sum_{i in m, j in R} k``.
    """
    M, n, d = S.shape
    flat = S.reshape(M * n, d)
    G = np.empty((M, M))
    for m in range(M):
        diff = S[m][:, None, :] - flat[None, :, :]
        k = np.exp(-gamma * (diff * diff).sum(-1))
        G[m] = k.reshape(n, M, n).sum(axis=(0, 2))
    c = np.empty(M)
    for m in range(M):
        diff = S[m][:, None, :] - R[None, :, :]
        c[m] = np.exp(-gamma * (diff * diff).sum(-1)).sum()
    return G, c
