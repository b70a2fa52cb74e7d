"""MCMC convergence diagnostics: split-R-hat and effective sample size."""

import numpy as np


def _split(chains):
    chains = np.asarray(chains, dtype=float)
    if chains.ndim != 2:
        raise ValueError("expected an array of shape (n_chains, n_draws)")
    n = chains.shape[1] // 2
    if n < 2:
        raise ValueError("need at least 4 draws per chain")
    return np.concatenate([chains[:, :n], chains[:, -n:]], axis=0)


def split_rhat(chains):
    """Potential scale reduction on split chains (Gelman et al., BDA3)."""
    x = _split(chains)
    m, n = x.shape
    w = np.mean(np.var(x, axis=1, ddof=1))
    b = n * np.var(np.mean(x, axis=1), ddof=1)
    if w == 0:
        return 1.0 if b == 0 else np.inf
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def _autocov(x):
    n = x.size
    x = x - x.mean()
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, nfft)
    return np.fft.irfft(f * np.conj(f), nfft)[:n] / n


def ess(chains):
    """Multi-chain effective sample size with Geyer's initial monotone sequence."""
    x = np.asarray(chains, dtype=float)
    m, n = x.shape
    if n < 4:
        raise ValueError("need at least 4 draws per chain")
    acov = np.array([_autocov(c) for c in x])
    chain_var = acov[:, 0] * n / (n - 1)
    w = chain_var.mean()
    if w == 0:
        return float(m * n)
    var_plus = w * (n - 1) / n
    if m > 1:
        var_plus += np.var(x.mean(axis=1), ddof=1)
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # sum paired autocorrelations while positive, enforcing monotone decrease
    total = 0.0
    prev = np.inf
    t = 0
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        pair = min(pair, prev)
        total += pair
        prev = pair
        t += 2
    tau = max(-1.0 + 2.0 * total, 1.0 / np.log10(m * n + 10))
    return float(m * n / tau)


def circular_center(angles):
    """Map angles to (-pi, pi] around their circular mean, for diagnostics."""
    a = np.asarray(angles, dtype=float)
    mu = np.angle(np.mean(np.exp(1j * a)))
    return np.angle(np.exp(1j * (a - mu))) + mu
