"""Compiled scatter/gather loops for stacked binary projectors.

Bin tables carry ``side`` as a sentinel for pixels that miss the detector, so
the loops need no branch on the forward pass.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def project_stack(x, table, side):
    n_ang, n_pix = table.shape
    out = np.zeros((n_ang, side + 1))
    for a in range(n_ang):
        row = table[a]
        acc = out[a]
        for p in range(n_pix):
            acc[row[p]] += x[p]
    return out[:, :side].copy()


@njit(cache=True)
def backproject_stack(w, table, side):
    n_ang, n_pix = table.shape
    out = np.zeros(n_pix)
    for a in range(n_ang):
        row = table[a]
        wa = w[a]
        for p in range(n_pix):
            b = row[p]
            if b < side:
                out[p] += wa[b]
    return out


@njit(cache=True)
def poisson_grad(x, table, side, scale, log_i0, counts):
    """Gradient of the summed Poisson NLL: ``scale * R^T (y - lambda)``."""
    n_ang, n_pix = table.shape
    proj = np.zeros(side + 1)
    resid = np.zeros(side + 1)
    out = np.zeros(n_pix)
    for a in range(n_ang):
        row = table[a]
        proj[:] = 0.0
        for p in range(n_pix):
            proj[row[p]] += x[p]
        for b in range(side):
            lam = np.exp(log_i0[a] - scale * proj[b])
            resid[b] = counts[a, b] - lam
        resid[side] = 0.0
        for p in range(n_pix):
            out[p] += resid[row[p]]
    for p in range(n_pix):
        out[p] *= scale
    return out


@njit(cache=True)
def poisson_nll_grad(x, table, side, scale, log_i0, counts):
    """Summed ``lambda - y log lambda`` (no factorial term) and its gradient."""
    n_ang, n_pix = table.shape
    proj = np.zeros(side + 1)
    resid = np.zeros(side + 1)
    out = np.zeros(n_pix)
    total = 0.0
    for a in range(n_ang):
        row = table[a]
        proj[:] = 0.0
        for p in range(n_pix):
            proj[row[p]] += x[p]
        for b in range(side):
            log_lam = log_i0[a] - scale * proj[b]
            lam = np.exp(log_lam)
            total += lam - counts[a, b] * log_lam
            resid[b] = counts[a, b] - lam
        resid[side] = 0.0
        for p in range(n_pix):
            out[p] += resid[row[p]]
    for p in range(n_pix):
        out[p] *= scale
    return total, out


@njit(cache=True)
def poisson_grad_batch(x, table, side, scale, log_i0, counts, proj, resid, out):
    """Gradient for ``B`` independent problems sharing one bin table.

    ``x`` and ``out`` are ``(P, B)``, ``counts`` is ``(A, side, B)`` and
    ``log_i0`` is ``(A, B)``. Each column is computed with exactly the same
    operation order as a batch of one, so results do not depend on ``B``.
    """
    n_ang, n_pix = table.shape
    n_b = x.shape[1]
    out[:, :] = 0.0
    for a in range(n_ang):
        row = table[a]
        proj[:, :] = 0.0
        for p in range(n_pix):
            pb = proj[row[p]]
            xp = x[p]
            for j in range(n_b):
                pb[j] += xp[j]
        for b in range(side):
            for j in range(n_b):
                resid[b, j] = counts[a, b, j] - np.exp(log_i0[a, j] - scale * proj[b, j])
        for p in range(n_pix):
            rb = resid[row[p]]
            op = out[p]
            for j in range(n_b):
                op[j] += rb[j]
    for p in range(n_pix):
        for j in range(n_b):
            out[p, j] *= scale


@njit(cache=True)
def adam_mle_batch(x0, table, side, scale, log_i0, counts, steps, lr, beta1, beta2, eps):
    """Projected Adam on the summed Poisson NLL, clamped to [0, 1] after every step."""
    n_pix, n_b = x0.shape
    x = x0.copy()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    g = np.zeros_like(x)
    proj = np.zeros((side + 1, n_b))
    resid = np.zeros((side + 1, n_b))
    for t in range(1, steps + 1):
        poisson_grad_batch(x, table, side, scale, log_i0, counts, proj, resid, g)
        c1 = 1.0 - beta1 ** t
        c2 = 1.0 - beta2 ** t
        for p in range(n_pix):
            for j in range(n_b):
                gp = g[p, j]
                mp = beta1 * m[p, j] + (1.0 - beta1) * gp
                vp = beta2 * v[p, j] + (1.0 - beta2) * gp * gp
                m[p, j] = mp
                v[p, j] = vp
                xn = x[p, j] - lr * (mp / c1) / (np.sqrt(vp / c2) + eps)
                x[p, j] = min(max(xn, 0.0), 1.0)
    return x


@njit(cache=True)
def adam_mle(x0, table, side, scale, log_i0, counts, steps, lr, beta1, beta2, eps):
    """Single-problem version of :func:`adam_mle_batch` with identical arithmetic."""
    n_ang, n_pix = table.shape
    x = x0.copy()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    g = np.zeros_like(x)
    proj = np.zeros(side + 1)
    resid = np.zeros(side + 1)
    for t in range(1, steps + 1):
        g[:] = 0.0
        for a in range(n_ang):
            row = table[a]
            proj[:] = 0.0
            for p in range(n_pix):
                proj[row[p]] += x[p]
            for b in range(side):
                resid[b] = counts[a, b] - np.exp(log_i0[a] - scale * proj[b])
            resid[side] = 0.0
            for p in range(n_pix):
                g[p] += resid[row[p]]
        c1 = 1.0 - beta1 ** t
        c2 = 1.0 - beta2 ** t
        for p in range(n_pix):
            gp = g[p] * scale
            mp = beta1 * m[p] + (1.0 - beta1) * gp
            vp = beta2 * v[p] + (1.0 - beta2) * gp * gp
            m[p] = mp
            v[p] = vp
            xn = x[p] - lr * (mp / c1) / (np.sqrt(vp / c2) + eps)
            x[p] = min(max(xn, 0.0), 1.0)
    return x


@njit(cache=True)
def adam_project(x0, table, side, scale, log_i0, counts, target, max_steps, lr, beta1, beta2, eps):
    """Adam on the NLL until it drops to ``target`` (factorials excluded) or the budget runs out.

    Returns ``(x, steps_taken, nll_of_x, converged)``; without convergence
    ``x`` is the best iterate seen.
    """
    n_pix = x0.shape[0]
    x = x0.copy()
    best = x0.copy()
    best_f = np.inf
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    for t in range(max_steps + 1):
        f, g = poisson_nll_grad(x, table, side, scale, log_i0, counts)
        if f < best_f:
            best_f = f
            best[:] = x
        if f <= target:
            return x, t, f, True
        if t == max_steps:
            break
        k = t + 1
        c1 = 1.0 - beta1 ** k
        c2 = 1.0 - beta2 ** k
        for p in range(n_pix):
            gp = g[p]
            m[p] = beta1 * m[p] + (1.0 - beta1) * gp
            v[p] = beta2 * v[p] + (1.0 - beta2) * gp * gp
            xn = x[p] - lr * (m[p] / c1) / (np.sqrt(v[p] / c2) + eps)
            x[p] = min(max(xn, 0.0), 1.0)
    return best, max_steps, best_f, False
