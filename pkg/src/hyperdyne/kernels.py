"""Hot inner loops.

Each kernel exists as an explicit loop (``*_loop``, numba-compiled when
available) and as a vectorized numpy function (``*_numpy``).  The public name
is bound to one of them according to :mod:`hyperdyne._jit`.
"""

import math

import numpy as np
from scipy import signal as _signal

from ._jit import njit, pick

_INV_SQRT2 = 1.0 / math.sqrt(2.0)


# ---------------------------------------------------------------------------
# dipolar field sums over a spin ensemble with lateral periodic images

@njit
def field_sums_loop(pos, nv_pos, e1, e2, n, theta, line, line_phase, lx, ly, n_img, pref):
    n_lines = line_phase.shape[0]
    coh = np.zeros(n_lines)
    cosl = np.empty(n_lines)
    sinl = np.empty(n_lines)
    for j in range(n_lines):
        cosl[j] = math.cos(line_phase[j])
        sinl[j] = math.sin(line_phase[j])
    sx = 0.0
    sy = 0.0
    for i in range(pos.shape[0]):
        ct = math.cos(theta[i])
        st = math.sin(theta[i])
        j = line[i]
        cpsi = ct * cosl[j] - st * sinl[j]
        spsi = st * cosl[j] + ct * sinl[j]
        rz = pos[i, 2] - nv_pos[2]
        for a in range(-n_img, n_img + 1):
            rx = pos[i, 0] + a * lx - nv_pos[0]
            for b in range(-n_img, n_img + 1):
                ry = pos[i, 1] + b * ly - nv_pos[1]
                r2 = rx * rx + ry * ry + rz * rz
                r = math.sqrt(r2)
                c = (rx * n[0] + ry * n[1] + rz * n[2]) / r
                amp = 3.0 * pref * c / (r2 * r)
                bx = amp * (rx * e1[0] + ry * e1[1] + rz * e1[2]) / r
                by = amp * (rx * e2[0] + ry * e2[1] + rz * e2[2]) / r
                sx += bx * cpsi + by * spsi
                sy += bx * spsi - by * cpsi
                coh[j] += math.sqrt(bx * bx + by * by)
    return sx * _INV_SQRT2, sy * _INV_SQRT2, coh


def field_sums_numpy(pos, nv_pos, e1, e2, n, theta, line, line_phase, lx, ly, n_img, pref):
    psi = theta + line_phase[line]
    cpsi = np.cos(psi)
    spsi = np.sin(psi)
    coh = np.zeros(line_phase.shape[0])
    sx = 0.0
    sy = 0.0
    rel = pos - nv_pos
    for a in range(-n_img, n_img + 1):
        for b in range(-n_img, n_img + 1):
            r = rel + np.array([a * lx, b * ly, 0.0])
            dist = np.sqrt(np.einsum("ij,ij->i", r, r))
            c = (r @ n) / dist
            amp = 3.0 * pref * c / dist**3
            bx = amp * (r @ e1) / dist
            by = amp * (r @ e2) / dist
            sx += np.sum(bx * cpsi + by * spsi)
            sy += np.sum(bx * spsi - by * cpsi)
            coh += np.bincount(line, weights=np.hypot(bx, by), minlength=coh.shape[0])
    return sx * _INV_SQRT2, sy * _INV_SQRT2, coh


field_sums = pick(field_sums_loop, field_sums_numpy)


# ---------------------------------------------------------------------------
# exact OU recursion x[k] = a x[k-1] + w[k]

@njit
def ar1_loop(x0, a, w):
    out = np.empty(w.shape[0])
    x = x0
    for k in range(w.shape[0]):
        x = a * x + w[k]
        out[k] = x
    return out


def ar1_numpy(x0, a, w):
    y, _ = _signal.lfilter([1.0], [1.0, -a], w, zi=[a * x0])
    return y


ar1 = pick(ar1_loop, ar1_numpy)


# ---------------------------------------------------------------------------
# photon-count log-likelihood of the Qdyne model and its gradient in (g, delta, phi)
# mode 0: Poisson with rate scale * lam;  mode 1: Bernoulli with probability lam

@njit
def loglik_grad_loop(g, delta, phi, t, counts, p_dark, dp, scale, mode):
    ll = 0.0
    dg = 0.0
    dd = 0.0
    dphi = 0.0
    for j in range(t.shape[0]):
        arg = delta * t[j] + phi
        c = math.cos(arg)
        s = math.sin(arg)
        inner = g * c
        p = 0.5 * (1.0 + math.sin(inner))
        lam = p_dark + dp * p
        dlam = 0.5 * dp * math.cos(inner)  # d lam / d inner
        nj = counts[j]
        if mode == 0:
            rate = scale * lam
            ll += nj * math.log(rate) - rate
            w = nj / lam - scale
        else:
            ll += nj * math.log(lam) + (1.0 - nj) * math.log1p(-lam)
            w = nj / lam - (1.0 - nj) / (1.0 - lam)
        w *= dlam
        dg += w * c
        tmp = -w * g * s
        dd += tmp * t[j]
        dphi += tmp
    return ll, dg, dd, dphi


def loglik_grad_numpy(g, delta, phi, t, counts, p_dark, dp, scale, mode):
    arg = delta * t + phi
    c = np.cos(arg)
    s = np.sin(arg)
    inner = g * c
    lam = p_dark + dp * 0.5 * (1.0 + np.sin(inner))
    dlam = 0.5 * dp * np.cos(inner)
    if mode == 0:
        rate = scale * lam
        ll = np.sum(counts * np.log(rate) - rate)
        w = counts / lam - scale
    else:
        ll = np.sum(counts * np.log(lam) + (1.0 - counts) * np.log1p(-lam))
        w = counts / lam - (1.0 - counts) / (1.0 - lam)
    w = w * dlam
    tmp = -w * g * s
    return float(ll), float(np.sum(w * c)), float(np.sum(tmp * t)), float(np.sum(tmp))


loglik_grad = pick(loglik_grad_loop, loglik_grad_numpy)
