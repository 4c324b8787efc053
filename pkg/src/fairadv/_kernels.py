"""Compiled training loop.

The whole inner loop (forward, backward with gradient reversal, Adagrad)
runs inside one numba function that walks the sparse rows of the two input
streams. Set ``FAIRADV_BACKEND=numpy`` to route training through the
vectorized numpy path in :mod:`fairadv.model` instead; the numpy path is
also used automatically when numba cannot be imported.
"""
import math
import os

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn


BACKENDS = ("numba", "numpy")


def active_backend() -> str:
    """Backend requested by ``FAIRADV_BACKEND`` (default: numba when importable)."""
    requested = os.environ.get("FAIRADV_BACKEND", "numba").strip().lower()
    if requested not in BACKENDS:
        raise ValueError(f"FAIRADV_BACKEND must be one of {BACKENDS}, got {requested!r}")
    if requested == "numba" and not NUMBA_AVAILABLE:
        return "numpy"
    return requested


@njit(cache=True, nogil=True)
def _head_pass(W1T, b1, w, b, ptr, idx, val, r, pre, h):
    """Forward one sparse row; fills ``pre``/``h`` and returns the head logit."""
    H = W1T.shape[1]
    for k in range(H):
        pre[k] = 0.0
    for p in range(ptr[r], ptr[r + 1]):
        j = idx[p]
        v = val[p]
        for k in range(H):
            pre[k] += v * W1T[j, k]
    logit = 0.0
    for k in range(H):
        pre[k] += b1[k]
        hk = pre[k] if pre[k] > 0.0 else 0.0
        h[k] = hk
        logit += hk * w[k]
    return logit + b[0]


@njit(cache=True, nogil=True)
def _stable_loss(t, y):
    # (1 - y) * t + softplus(-t)
    return (1.0 - y) * t + max(-t, 0.0) + math.log1p(math.exp(-abs(t)))


@njit(cache=True, nogil=True)
def _sigmoid(t):
    if t >= 0.0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


@njit(cache=True, nogil=True)
def _adagrad(param, acc, grad, lr, eps):
    for k in range(param.shape[0]):
        g = grad[k]
        acc[k] += g * g
        param[k] -= lr * g / (math.sqrt(acc[k]) + eps)


@njit(cache=True, nogil=True)
def fit_steps(
    W1T, b1, wf, bf, wa, ba,
    aW1T, ab1, awf, abf, awa, aba,
    p_ptr, p_idx, p_val, p_lab, p_batches,
    a_ptr, a_idx, a_val, a_lab, a_batches,
    use_adv, lam, lr, eps, losses,
):
    """Run ``p_batches.shape[0]`` training steps in place.

    ``W1T`` is the transposed encoder weight matrix (in_dim, hidden); only
    encoder rows hit by a nonzero input receive an Adagrad update, which is
    exact because a zero gradient leaves both parameter and accumulator
    unchanged.
    """
    D, H = W1T.shape
    n_steps, B = p_batches.shape
    Ba = a_batches.shape[1]
    gW = np.zeros((D, H))
    touched = np.zeros(D, dtype=np.bool_)
    touched_rows = np.empty(D, dtype=np.int64)
    gb1 = np.empty(H)
    gwf = np.empty(H)
    gwa = np.empty(H)
    gbf = np.empty(1)
    gba = np.empty(1)
    pre = np.empty(H)
    h = np.empty(H)
    dpre = np.empty(H)
    for s in range(n_steps):
        n_touched = 0
        gb1[:] = 0.0
        gwf[:] = 0.0
        gwa[:] = 0.0
        gbf[0] = 0.0
        gba[0] = 0.0
        loss_y = 0.0
        for bi in range(B):
            r = p_batches[s, bi]
            t = _head_pass(W1T, b1, wf, bf, p_ptr, p_idx, p_val, r, pre, h)
            y = float(p_lab[r])
            loss_y += _stable_loss(t, y)
            d = (_sigmoid(t) - y) / B
            gbf[0] += d
            for k in range(H):
                gwf[k] += d * h[k]
                dpre[k] = d * wf[k] if pre[k] > 0.0 else 0.0
                gb1[k] += dpre[k]
            for p in range(p_ptr[r], p_ptr[r + 1]):
                j = p_idx[p]
                v = p_val[p]
                if not touched[j]:
                    touched[j] = True
                    touched_rows[n_touched] = j
                    n_touched += 1
                for k in range(H):
                    gW[j, k] += v * dpre[k]
        loss_z = 0.0
        if use_adv:
            for bi in range(Ba):
                r = a_batches[s, bi]
                t = _head_pass(W1T, b1, wa, ba, a_ptr, a_idx, a_val, r, pre, h)
                z = float(a_lab[r])
                loss_z += _stable_loss(t, z)
                d = (_sigmoid(t) - z) / Ba
                gba[0] += d
                for k in range(H):
                    gwa[k] += d * h[k]
                    # reversal sits between the encoder and the adversary head
                    dpre[k] = (-lam) * (d * wa[k]) if pre[k] > 0.0 else 0.0
                    gb1[k] += dpre[k]
                for p in range(a_ptr[r], a_ptr[r + 1]):
                    j = a_idx[p]
                    v = a_val[p]
                    if not touched[j]:
                        touched[j] = True
                        touched_rows[n_touched] = j
                        n_touched += 1
                    for k in range(H):
                        gW[j, k] += v * dpre[k]
        for q in range(n_touched):
            j = touched_rows[q]
            _adagrad(W1T[j], aW1T[j], gW[j], lr, eps)
            gW[j, :] = 0.0
            touched[j] = False
        _adagrad(b1, ab1, gb1, lr, eps)
        _adagrad(wf, awf, gwf, lr, eps)
        _adagrad(bf, abf, gbf, lr, eps)
        if use_adv:
            _adagrad(wa, awa, gwa, lr, eps)
            _adagrad(ba, aba, gba, lr, eps)
        losses[s, 0] = loss_y / B
        losses[s, 1] = loss_z / Ba if use_adv and Ba > 0 else 0.0
