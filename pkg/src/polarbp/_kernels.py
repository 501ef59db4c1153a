"""Compiled per-frame forward/backward used by the training loop.

Mirrors ``bp._r_pass``/``bp._l_pass`` and ``train.backward`` scalar by scalar;
the test-suite checks both routes agree.
"""
import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _sign(x):
    if x > 0.0:
        return 1.0
    if x < 0.0:
        return -1.0
    return 0.0


@njit(cache=True, inline="always")
def _g(x, y):
    ax, ay = abs(x), abs(y)
    return _sign(x) * _sign(y) * (ax if ax < ay else ay)


@njit(cache=True, inline="always")
def _clip(v, c):
    if v > c:
        return c
    if v < -c:
        return -c
    return v


@njit(cache=True)
def _frame(llr, u_node, prior, alpha, beta, per_iter, T, clamp, eps, scale,
           Lh, Rh, adjL, adjLp, adjR, d_alpha, d_beta):
    n = Lh.shape[1] - 1
    N = Lh.shape[2]
    Lh[0, :, :] = 0.0
    for j in range(N):
        Lh[0, n, j] = _clip(llr[j], clamp)
    for t in range(T):
        w = t if per_iter else 0
        if t == 0:
            Rh[0, :, :] = 0.0
            for j in range(N):
                Rh[0, 0, j] = prior[j]
        else:
            Rh[t, :, :] = Rh[t - 1, :, :]
        R = Rh[t]
        Lp = Lh[t]
        for s in range(n):
            d = N >> (s + 1)
            for start in range(0, N, 2 * d):
                for k in range(d):
                    j = start + k
                    jl = j + d
                    a, b = R[s, j], R[s, jl]
                    R[s + 1, j] = _clip(beta[w, s, j] * _g(a, Lp[s + 1, jl] + b), clamp)
                    R[s + 1, jl] = _clip(beta[w, s, jl] * _g(a, Lp[s + 1, j]) + b, clamp)
        Lh[t + 1, :, :] = Lh[t, :, :]
        L = Lh[t + 1]
        for s in range(n - 1, -1, -1):
            d = N >> (s + 1)
            for start in range(0, N, 2 * d):
                for k in range(d):
                    j = start + k
                    jl = j + d
                    la, lb = L[s + 1, j], L[s + 1, jl]
                    L[s, j] = _clip(alpha[w, s, j] * _g(la, lb + R[s, jl]), clamp)
                    L[s, jl] = _clip(alpha[w, s, jl] * _g(R[s, j], la) + lb, clamp)

    loss = 0.0
    adjL[:, :] = 0.0
    for j in range(N):
        D = Lh[T, 0, j] + Rh[T - 1, 0, j]
        o = 1.0 / (1.0 + np.exp(D))
        oc = min(max(o, eps), 1.0 - eps)
        uj = u_node[j]
        loss -= uj * np.log(oc) + (1.0 - uj) * np.log(1.0 - oc)
        if o > eps and o < 1.0 - eps:
            adjL[0, j] = (uj - o) * scale

    for t in range(T - 1, -1, -1):
        w = t if per_iter else 0
        Lt, R, Lp = Lh[t + 1], Rh[t], Lh[t]
        adjR[:, :] = 0.0
        adjLp[:, :] = 0.0
        for s in range(n):
            d = N >> (s + 1)
            for start in range(0, N, 2 * d):
                for k in range(d):
                    j = start + k
                    jl = j + d
                    a, b = R[s, j], R[s, jl]
                    la, lb = Lt[s + 1, j], Lt[s + 1, jl]
                    # upper: alpha * g(la, lb + b)
                    wu = alpha[w, s, j]
                    y = lb + b
                    gv = _g(la, y)
                    if abs(wu * gv) < clamp:
                        p = adjL[s, j]
                        d_alpha[w, s, j] += p * gv
                        if abs(la) <= abs(y):
                            adjL[s + 1, j] += p * wu * _sign(y)
                        else:
                            dy = p * wu * _sign(la)
                            adjL[s + 1, jl] += dy
                            adjR[s, jl] += dy
                    # lower: alpha * g(a, la) + lb
                    wl = alpha[w, s, jl]
                    gv = _g(a, la)
                    if abs(wl * gv + lb) < clamp:
                        p = adjL[s, jl]
                        d_alpha[w, s, jl] += p * gv
                        if abs(a) <= abs(la):
                            adjR[s, j] += p * wl * _sign(la)
                        else:
                            adjL[s + 1, j] += p * wl * _sign(a)
                        adjL[s + 1, jl] += p
        for s in range(n - 1, -1, -1):
            d = N >> (s + 1)
            for start in range(0, N, 2 * d):
                for k in range(d):
                    j = start + k
                    jl = j + d
                    a, b = R[s, j], R[s, jl]
                    la, lb = Lp[s + 1, j], Lp[s + 1, jl]
                    wu = beta[w, s, j]
                    y = lb + b
                    gv = _g(a, y)
                    if abs(wu * gv) < clamp:
                        p = adjR[s + 1, j]
                        d_beta[w, s, j] += p * gv
                        if abs(a) <= abs(y):
                            adjR[s, j] += p * wu * _sign(y)
                        else:
                            dy = p * wu * _sign(a)
                            adjLp[s + 1, jl] += dy
                            adjR[s, jl] += dy
                    wl = beta[w, s, jl]
                    gv = _g(a, la)
                    if abs(wl * gv + b) < clamp:
                        p = adjR[s + 1, jl]
                        d_beta[w, s, jl] += p * gv
                        if abs(a) <= abs(la):
                            adjR[s, j] += p * wl * _sign(la)
                        else:
                            adjLp[s + 1, j] += p * wl * _sign(a)
                        adjR[s, jl] += p
        adjL[:, :] = adjLp[:, :]
    return loss


@njit(cache=True)
def batch_loss_grad(llrs, u_node, prior, alpha, beta, per_iter, T, clamp, eps):
    """Summed loss and weight gradients of the batch-mean cross entropy."""
    B, N = llrs.shape
    n = alpha.shape[1]
    scale = 1.0 / (B * N)
    Lh = np.empty((T + 1, n + 1, N))
    Rh = np.empty((T, n + 1, N))
    adjL = np.empty((n + 1, N))
    adjLp = np.empty((n + 1, N))
    adjR = np.empty((n + 1, N))
    d_alpha = np.zeros_like(alpha)
    d_beta = np.zeros_like(beta)
    loss = 0.0
    for f in range(B):
        loss += _frame(llrs[f], u_node[f], prior, alpha, beta, per_iter, T, clamp, eps, scale,
                       Lh, Rh, adjL, adjLp, adjR, d_alpha, d_beta)
    return loss / (B * N), d_alpha, d_beta
