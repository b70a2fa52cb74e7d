"""Bayesian inference on raw photon counts with Metropolis-Hastings and HMC.

Generative model (per measurement slot j at t_j = j T_L):

    g ~ Normal(mu_g, sigma_g),  delta ~ Uniform(lo, hi),  phi ~ Uniform[0, 2 pi)
    P_j = (1 + sin(g cos(delta t_j + phi))) / 2
    lambda_j = p_dark + (p_bright - p_dark) P_j
    D_j ~ Poisson(scale * lambda_j)          (ensemble / summed readout)
    D_j ~ Bernoulli(lambda_j)                (single-shot readout)
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize
from scipy.special import gammaln

from . import kernels
from .diagnostics import circular_center, ess, split_rhat
from .protocol import PhotonRecord
from .rng import stream

TWO_PI = 2.0 * math.pi
PARAMS = ("g", "delta", "phi")


@dataclass(frozen=True)
class ModelPriors:
    g_mean: float
    g_std: float
    delta_lo: float
    delta_hi: float

    def __post_init__(self):
        if not self.g_std > 0:
            raise ValueError("g prior std must be positive")
        if not self.delta_hi > self.delta_lo:
            raise ValueError("delta prior needs lo < hi")

    @classmethod
    def default(cls, mu_g, delta0, g_rel_std=0.5, delta_rel_width=0.05):
        """N(mu_g, g_rel_std * mu_g) for g and delta0 +- delta_rel_width * |delta0| for delta."""
        a = delta_rel_width * abs(delta0)
        return cls(mu_g, g_rel_std * abs(mu_g), delta0 - a, delta0 + a)

    @property
    def delta_width(self):
        return self.delta_hi - self.delta_lo


@dataclass(frozen=True)
class PGM:
    priors: ModelPriors
    period: float
    n_measurements: int
    p_bright: float = 0.040
    p_dark: float = 0.025
    readout: str = "poisson"
    rate_scale: float = 1.0

    @classmethod
    def from_protocol(cls, config, priors, n_runs=1):
        """Model for counts summed over ``n_runs`` records of ``config``.

        Summed Bernoulli counts are modelled as Poisson with scale n_runs (valid for
        the small detection probabilities of NV readout).
        """
        if config.readout == "bernoulli" and n_runs == 1:
            return cls(priors, config.period, config.n_measurements, config.p_bright, config.p_dark, "bernoulli", 1.0)
        return cls(priors, config.period, config.n_measurements, config.p_bright, config.p_dark,
                   "poisson", float(n_runs * config.n_sensors))

    @property
    def times(self):
        return np.arange(self.n_measurements) * self.period

    @property
    def dp(self):
        return self.p_bright - self.p_dark


def _counts(data, model):
    if data is None:
        return None
    counts = data.counts if isinstance(data, PhotonRecord) else data
    counts = np.asarray(counts, dtype=float)
    if counts.shape != (model.n_measurements,):
        raise ValueError("data length does not match the model timing")
    if np.any(counts < 0):
        raise ValueError("counts must be non-negative")
    if model.readout == "bernoulli" and np.any((counts != 0) & (counts != 1)):
        raise ValueError("Bernoulli readout expects 0/1 counts")
    return counts


class Posterior:
    """Log density and gradient of the posterior for fixed data."""

    def __init__(self, model, data):
        self.model = model
        self.counts = _counts(data, model)
        self.t = model.times
        self.mode = 0 if model.readout == "poisson" else 1
        pr = model.priors
        self._lp_const = -0.5 * math.log(TWO_PI * pr.g_std**2) - math.log(pr.delta_width) - math.log(TWO_PI)
        if self.counts is not None and self.mode == 0:
            self._ll_const = -float(np.sum(gammaln(self.counts + 1.0)))
        else:
            self._ll_const = 0.0

    def in_support(self, theta):
        pr = self.model.priors
        return bool(np.all(np.isfinite(theta))) and pr.delta_lo <= theta[1] <= pr.delta_hi

    def log_prior(self, theta):
        if not self.in_support(theta):
            return -math.inf
        pr = self.model.priors
        z = (theta[0] - pr.g_mean) / pr.g_std
        return self._lp_const - 0.5 * z * z

    def log_likelihood(self, theta):
        if self.counts is None:
            return 0.0
        m = self.model
        ll, _, _, _ = kernels.loglik_grad(float(theta[0]), float(theta[1]), float(theta[2]), self.t,
                                          self.counts, m.p_dark, m.dp, m.rate_scale, self.mode)
        return ll + self._ll_const

    def logp_grad(self, theta):
        """(log posterior, gradient); -inf and NaN gradient outside the support."""
        if not self.in_support(theta):
            return -math.inf, np.full(3, np.nan)
        pr = self.model.priors
        z = (theta[0] - pr.g_mean) / pr.g_std
        lp = self._lp_const - 0.5 * z * z
        grad = np.array([-z / pr.g_std, 0.0, 0.0])
        if self.counts is not None:
            m = self.model
            ll, dg, dd, dphi = kernels.loglik_grad(float(theta[0]), float(theta[1]), float(theta[2]), self.t,
                                                   self.counts, m.p_dark, m.dp, m.rate_scale, self.mode)
            lp += ll + self._ll_const
            grad += (dg, dd, dphi)
        return lp, grad

    def logp(self, theta):
        return self.logp_grad(theta)[0]


def _theta(theta):
    th = np.asarray(theta, dtype=float)
    if th.shape != (3,) or not np.all(np.isfinite(th)):
        raise ValueError("theta must be a finite (g, delta, phi) triple")
    return th


def log_likelihood(theta, data, model):
    return Posterior(model, data).log_likelihood(_theta(theta))


def log_posterior(theta, data, model):
    return Posterior(model, data).logp(_theta(theta))


def grad_log_posterior(theta, data, model):
    """Analytic gradient of log prior + log likelihood in (g, delta, phi)."""
    th = _theta(theta)
    pr = model.priors
    if not pr.delta_lo < th[1] < pr.delta_hi:
        raise ValueError("gradient undefined on or outside the delta prior boundary")
    return Posterior(model, data).logp_grad(th)[1]


def amplitude_noise_scale(model):
    """Cramer-Rao standard deviation of g at g = 0 (phase-averaged), for this model's data size."""
    lam0 = model.p_dark + 0.5 * model.dp
    if model.readout == "poisson":
        info = model.n_measurements * model.rate_scale * model.dp**2 / (8.0 * lam0)
    else:
        info = model.n_measurements * model.dp**2 / (8.0 * lam0 * (1.0 - lam0))
    return 1.0 / math.sqrt(info)


# ---------------------------------------------------------------------------
# initialization

def periodogram_start(model, data, oversample=4):
    """Grid search over delta of a linear cos/sin fit to the counts.

    Returns (g, delta, phi) of the best grid point; used to seed chains near the
    dominant mode.
    """
    counts = _counts(data, model)
    pr = model.priors
    t = model.times
    t_rec = model.n_measurements * model.period
    step = TWO_PI / (oversample * t_rec)
    grid = np.arange(pr.delta_lo, pr.delta_hi + 0.5 * step, step)
    grid = np.clip(grid, pr.delta_lo, pr.delta_hi)
    y = counts - counts.mean()
    C = np.cos(np.outer(grid, t))
    S = np.sin(np.outer(grid, t))
    b = (C @ y) * 2.0 / t.size
    c = (S @ y) * 2.0 / t.size
    amp = np.hypot(b, c)
    k = int(np.argmax(amp))
    gain = 0.5 * model.dp * (model.rate_scale if model.readout == "poisson" else 1.0)
    g = float(min(amp[k] / gain, 1.5))
    phi = float(np.mod(-math.atan2(c[k], b[k]), TWO_PI))
    return np.array([max(g, 1e-3), float(grid[k]), phi])


def _find_mode(post, start):
    pr = post.model.priors
    scale = np.array([max(pr.g_std, 1e-3), pr.delta_width, 1.0])

    def f(u):
        th = start + u * scale
        lp, gr = post.logp_grad(th)
        if not np.isfinite(lp):
            return 1e300, np.zeros(3)
        return -lp, -gr * scale

    lo = (pr.delta_lo - start[1]) / scale[1]
    hi = (pr.delta_hi - start[1]) / scale[1]
    res = optimize.minimize(f, np.zeros(3), jac=True, method="L-BFGS-B",
                            bounds=[(None, None), (lo, hi), (None, None)])
    return start + res.x * scale


def _laplace_cov(post, theta):
    """Inverse of the negative Hessian (finite differences of the analytic gradient)."""
    pr = post.model.priors
    h = np.array([1e-5 * max(pr.g_std, 1e-3), 1e-7 * pr.delta_width, 1e-5])
    H = np.empty((3, 3))
    for i in range(3):
        e = np.zeros(3)
        e[i] = h[i]
        lo = theta - e
        hi = theta + e
        if not (post.in_support(lo) and post.in_support(hi)):
            return None
        H[:, i] = (post.logp_grad(hi)[1] - post.logp_grad(lo)[1]) / (2 * h[i])
    H = 0.5 * (H + H.T)
    try:
        cov = np.linalg.inv(-H)
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return None
    return cov


def _prior_cov(pr):
    return np.diag([pr.g_std**2, pr.delta_width**2 / 12.0, (TWO_PI) ** 2 / 12.0])


# ---------------------------------------------------------------------------
# samplers

@dataclass
class SamplerConfig:
    method: str = "mh"
    chains: int = 4
    steps: int = 4000
    burn_in: int = 1000
    seed: int = 0
    n_leapfrog: int = 12
    step_size: Optional[float] = None
    target_accept: Optional[float] = None
    jump_prob: float = 0.1
    max_divergent_fraction: float = 0.05
    init: str = "auto"
    workers: Optional[int] = None

    def __post_init__(self):
        if self.method not in ("mh", "hmc"):
            raise ValueError("method must be 'mh' or 'hmc'")
        if not self.steps > self.burn_in >= 0:
            raise ValueError("need steps > burn_in >= 0")
        if self.chains < 1:
            raise ValueError("need at least one chain")


@dataclass
class PosteriorSamples:
    draws: np.ndarray  # (chains, n, 3) post burn-in, phi wrapped to [0, 2 pi)
    acceptance: np.ndarray
    divergences: np.ndarray
    rhat: np.ndarray
    ess: np.ndarray
    burn_in: int
    method: str
    priors: ModelPriors
    warnings: list = field(default_factory=list)

    @property
    def n_chains(self):
        return self.draws.shape[0]

    @property
    def flat(self):
        return self.draws.reshape(-1, 3)

    def std_error(self):
        """Monte Carlo standard error of the posterior means."""
        sd = np.array([np.std(self.flat[:, 0]), np.std(self.flat[:, 1]), np.std(circular_center(self.flat[:, 2]))])
        return sd / np.sqrt(self.ess)


def _diagnose(draws):
    rh = np.empty(3)
    es = np.empty(3)
    for i in range(3):
        x = draws[:, :, i]
        if i == 2:
            x = circular_center(x.ravel()).reshape(x.shape)
        rh[i] = split_rhat(x) if draws.shape[0] * draws.shape[1] >= 8 else np.nan
        es[i] = ess(x)
    return rh, es


def _mh_chain(post, start, cov, cfg, rng):
    pr = post.model.priors
    n_total = cfg.steps
    d = 3
    L = np.linalg.cholesky(cov)
    log_scale = math.log(2.38 / math.sqrt(d))
    target = 0.25 if cfg.target_accept is None else cfg.target_accept
    t_mid = 0.5 * (post.model.n_measurements - 1) * post.model.period
    x = start.copy()
    lp = post.logp(x)
    out = np.empty((n_total - cfg.burn_in, 3))
    acc = 0
    for it in range(n_total):
        if rng.random() < cfg.jump_prob:
            # redraw delta from its prior, keeping the phase at mid-record fixed
            y = x.copy()
            y[1] = rng.uniform(pr.delta_lo, pr.delta_hi)
            y[2] = x[2] + (x[1] - y[1]) * t_mid
            local = False
        else:
            y = x + math.exp(log_scale) * (L @ rng.standard_normal(d))
            local = True
        lq = post.logp(y)
        a = 0.0 if not np.isfinite(lq) else math.exp(min(0.0, lq - lp))
        if rng.random() < a:
            x, lp = y, lq
            x[2] = x[2] % TWO_PI
            if it >= cfg.burn_in:
                acc += 1
        if local and it < cfg.burn_in:
            log_scale += (a - target) / math.sqrt(it + 1.0)
        if it >= cfg.burn_in:
            out[it - cfg.burn_in] = x
    return out, acc / (n_total - cfg.burn_in), 0


def _reflect(x, p, lo, hi):
    """Bounce a position off hard walls at lo and hi, flipping the momentum each time."""
    width = hi - lo
    u = (x - lo) % (2 * width)
    bounces = math.floor((x - lo) / width)
    if u > width:
        u = 2 * width - u
    return lo + u, (-p if bounces % 2 else p)


def _hmc_chain(post, start, cov, cfg, rng):
    """Leapfrog HMC with a diagonal mass matrix; delta reflects off its prior bounds."""
    n_total = cfg.steps
    lo, hi = post.model.priors.delta_lo, post.model.priors.delta_hi
    inv_mass = np.diag(cov).copy()
    sqrt_mass = 1.0 / np.sqrt(inv_mass)
    target = 0.8 if cfg.target_accept is None else cfg.target_accept
    L = cfg.n_leapfrog
    eps = cfg.step_size if cfg.step_size is not None else 1.0 / L
    # dual averaging state (Hoffman & Gelman 2014)
    mu = math.log(10 * eps)
    h_bar = 0.0
    log_eps_bar = 0.0
    gamma, t0, kappa = 0.05, 10.0, 0.75
    adapt = cfg.step_size is None

    x = start.copy()
    lp, gr = post.logp_grad(x)
    out = np.empty((n_total - cfg.burn_in, 3))
    acc = 0.0
    div = 0
    for it in range(n_total):
        p = sqrt_mass * rng.standard_normal(3)
        h0 = -lp + 0.5 * np.sum(p * p * inv_mass)
        q, lq, gq = x.copy(), lp, gr
        p = p + 0.5 * eps * gq
        ok = True
        for step in range(L):
            q = q + eps * inv_mass * p
            q[1], p[1] = _reflect(q[1], p[1], lo, hi)
            lq, gq = post.logp_grad(q)
            if not np.isfinite(lq):
                ok = False
                break
            if step != L - 1:
                p = p + eps * gq
        if ok:
            p = p + 0.5 * eps * gq
            h1 = -lq + 0.5 * np.sum(p * p * inv_mass)
            dh = h1 - h0
            if not np.isfinite(dh) or dh > 1000.0:
                a = 0.0
                if it >= cfg.burn_in:
                    div += 1
            else:
                a = math.exp(min(0.0, -dh))
        else:
            # non-finite density mid-trajectory
            a = 0.0
            if it >= cfg.burn_in:
                div += 1
        if rng.random() < a:
            x, lp, gr = q, lq, gq
            x[2] = x[2] % TWO_PI
        if it < cfg.burn_in and adapt:
            m = it + 1
            h_bar = (1 - 1 / (m + t0)) * h_bar + (target - a) / (m + t0)
            log_eps = mu - math.sqrt(m) / gamma * h_bar
            w = m ** (-kappa)
            log_eps_bar = w * log_eps + (1 - w) * log_eps_bar
            eps = math.exp(log_eps)
            if it == cfg.burn_in - 1:
                eps = math.exp(log_eps_bar)
        if it >= cfg.burn_in:
            acc += a
            out[it - cfg.burn_in] = x
    return out, acc / (n_total - cfg.burn_in), div


def _starts(post, data, cfg, rng_init):
    pr = post.model.priors
    if post.counts is None or cfg.init == "prior":
        cov = _prior_cov(pr)
        starts = [np.array([rng_init.normal(pr.g_mean, pr.g_std), rng_init.uniform(pr.delta_lo, pr.delta_hi),
                            rng_init.uniform(0, TWO_PI)]) for _ in range(cfg.chains)]
        return starts, cov
    start = periodogram_start(post.model, data)
    mode = _find_mode(post, start)
    cov = _laplace_cov(post, mode)
    if cov is None:
        cov = np.diag([min(pr.g_std, 0.1) ** 2, (TWO_PI / (post.model.n_measurements * post.model.period)) ** 2, 0.1])
    sd = np.sqrt(np.diag(cov))
    starts = []
    for _ in range(cfg.chains):
        s = mode + 2.0 * sd * rng_init.standard_normal(3)
        s[1] = min(max(s[1], pr.delta_lo + 1e-9 * pr.delta_width), pr.delta_hi - 1e-9 * pr.delta_width)
        starts.append(s)
    return starts, cov


def sample_posterior(model, data, config=None):
    """Draw from the posterior of (g, delta, phi) with several independent chains.

    Each chain uses the random stream (seed, "chains", chain index), so the draws
    are reproducible and independent of ``workers``.
    """
    cfg = config or SamplerConfig()
    post = Posterior(model, data)
    starts, cov = _starts(post, data, cfg, stream(cfg.seed, "chains", 10_000))
    runner = _mh_chain if cfg.method == "mh" else _hmc_chain

    def run(c):
        return runner(post, starts[c], cov, cfg, stream(cfg.seed, "chains", c))

    if cfg.workers and cfg.workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(cfg.workers) as ex:
            results = list(ex.map(run, range(cfg.chains)))
    else:
        results = [run(c) for c in range(cfg.chains)]
    draws = np.stack([r[0] for r in results])
    acc = np.array([r[1] for r in results])
    div = np.array([r[2] for r in results])
    rh, es = _diagnose(draws)
    notes = []
    n_post = cfg.steps - cfg.burn_in
    if cfg.method == "hmc" and div.sum() > cfg.max_divergent_fraction * n_post * cfg.chains:
        msg = f"{int(div.sum())} divergent HMC transitions exceed {cfg.max_divergent_fraction:.0%} of draws"
        warnings.warn(msg)
        notes.append(msg)
    return PosteriorSamples(draws, acc, div, rh, es, cfg.burn_in, cfg.method, model.priors, notes)


# ---------------------------------------------------------------------------
# decision

@dataclass
class Decision:
    mean: dict
    median: dict
    interval95: dict
    detection_probability: float
    detected: bool
    converged: bool
    rhat: dict
    warnings: list

    def to_dict(self):
        return {"mean": self.mean, "median": self.median, "interval95": self.interval95,
                "detection_probability": self.detection_probability, "detected": self.detected,
                "converged": self.converged, "rhat": self.rhat, "warnings": list(self.warnings)}


def summarize_and_decide(samples, window, threshold=0.95, g_min=0.0, rhat_limit=1.1):
    """Posterior summaries and the detection call.

    Detection probability is the posterior mass with |g| > g_min and delta inside
    ``window`` = (lo, hi) in rad/s (the sign of g is equivalent to a pi phase shift).
    """
    x = samples.flat
    g, d, phi = x[:, 0], x[:, 1], x[:, 2]
    phi_c = circular_center(phi)
    mean = {"g": float(g.mean()), "delta": float(d.mean()), "phi": float(np.mod(np.angle(np.mean(np.exp(1j * phi))), TWO_PI))}
    median = {"g": float(np.median(g)), "delta": float(np.median(d)), "phi": float(np.mod(np.median(phi_c), TWO_PI))}
    iv = {}
    for name, v in (("g", g), ("delta", d), ("phi", phi_c)):
        lo, hi = np.percentile(v, [2.5, 97.5])
        iv[name] = (float(lo), float(hi))
    in_win = (d >= window[0]) & (d <= window[1])
    prob = float(np.mean((np.abs(g) > g_min) & in_win))
    rhat = {k: float(v) for k, v in zip(PARAMS, samples.rhat)}
    converged = bool(np.all(np.nan_to_num(samples.rhat, nan=np.inf) < rhat_limit))
    notes = list(samples.warnings)
    if not converged:
        notes.append(f"chains not converged (max R-hat {np.nanmax(samples.rhat):.3f} >= {rhat_limit})")
    return Decision(mean, median, iv, prob, bool(prob >= threshold), converged, rhat, notes)
