"""Sampler correctness checks.

- conditional oracles: draws of one full conditional against a grid-normalized
  brute-force density of the augmented pseudo-likelihood times the prior
- Geweke joint-distribution tests for the static and dynamic samplers
- prior cluster-count law and the stick-breaking / Laplace-mixture equivalence
- split-chain potential scale reduction and batch-means standard errors
"""
import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np
from scipy import stats

from dplsvm.errors import ValidationError
from dplsvm.log import LOG
from dplsvm.rngkit import RandomStream
from dplsvm.svm_dynamic import (
    DynamicChainState,
    DynamicData,
    d_star_log_density,
    iw_degrees,
    step_d_star,
    step_eta,
    sweep_dynamic,
)
from dplsvm.svm_static import (
    ChainState,
    Hyperparameters,
    SVMData,
    atom_conditional,
    draw_dp_prior,
    initial_state,
    step_beta,
    step_rho,
    step_sigma_beta,
    step_sigma_eps,
    sweep,
)

# a fixed batch count keeps batches long as the series grows
SE_BATCHES = 25


def expected_cluster_count(M: float, p: int) -> float:
    """E(Delta) = sum_{m=1}^{P} M / (M + m - 1)"""
    return float(sum(M / (M + m - 1) for m in range(1, p + 1)))


def prior_cluster_count(M: float, p: int, n: int = 2000, seed: int = 0) -> float:
    """Monte Carlo mean of Delta over exact prior draws."""
    hyper = Hyperparameters(M=M, n_iter=1, burn_in=0)
    stream = RandomStream(seed, 10)
    return float(np.mean([draw_dp_prior(p, hyper, stream).n_clusters for _ in range(n)]))


def prior_chain_cluster_count(
    M: float, p: int, n_iter: int = 4000, burn_in: int = 500, seed: int = 0
) -> float:
    """Mean Delta of a sampler run with no data, so its target is the prior."""
    hyper = Hyperparameters(M=M, n_iter=n_iter, burn_in=burn_in, thin=1)
    data = SVMData(np.zeros((0, p)), np.zeros(0))
    state = initial_state(p, 0, hyper)
    stream = RandomStream(seed, 11)
    counts = []
    for it in range(1, n_iter + 1):
        sweep(state, data, hyper, stream)
        if it > burn_in:
            counts.append(state.n_clusters)
    return float(np.mean(counts))


def stick_breaking_check(hyper: Hyperparameters, n: int = 100000, seed: int = 0, tail: float = 1e-12):
    """KS p-value between beta_1 drawn through a random DP (sticks, atoms,
    sigma_beta2, normal) and beta drawn directly as Laplace(lambda) with
    lambda from the base measure. Sticks are truncated once the leftover mass
    is expected to be below tail."""
    stream = RandomStream(seed, 12)
    M = hyper.M
    k = max(1, int(math.ceil(math.log(tail) / math.log(M / (M + 1.0)))))
    nu = stream.beta(1.0, M, size=(n, k))
    nu[:, -1] = 1.0
    remaining = np.hstack([np.ones((n, 1)), np.cumprod(1.0 - nu, axis=1)[:, :-1]])
    label = stream.choice_from_weights(nu * remaining)
    atoms = stream.gamma(hyper.r, hyper.delta, size=(n, k))
    lam = atoms[np.arange(n), label]
    sigma_beta2 = stream.exponential(lam**2 / 2.0)
    via_dp = stream.normal(size=n) * np.sqrt(sigma_beta2)

    lam_direct = stream.gamma(hyper.r, hyper.delta, size=n)
    direct = stream.gen.laplace(0.0, 1.0 / lam_direct)
    return float(stats.ks_2samp(via_dp, direct).pvalue)


def batch_means_se(x, n_batches: int = SE_BATCHES) -> float:
    """Standard error of the mean of a correlated series from n_batches
    contiguous batch means; batches must be long against the
    autocorrelation time."""
    x = np.asarray(x, dtype=float)
    if len(x) < 2 * n_batches:
        raise ValidationError(f"need at least {2 * n_batches} draws for {n_batches} batches, got {len(x)}")
    size = len(x) // n_batches
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))


def split_rhat(chains) -> float:
    """Potential scale reduction on half-chains; chains is (n_chains, draws)."""
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    half = chains.shape[1] // 2
    if half < 2:
        return float("nan")
    parts = np.vstack([chains[:, :half], chains[:, half : 2 * half]])
    within = parts.var(axis=1, ddof=1).mean()
    between = half * parts.mean(axis=1).var(ddof=1)
    if within == 0:
        return 1.0 if between == 0 else float("inf")
    var_plus = (half - 1) / half * within + between / half
    return float(math.sqrt(var_plus / within))


def grid_mass(log_density: Callable[[float], float], grid) -> np.ndarray:
    ld = np.array([log_density(x) for x in grid])
    w = np.exp(ld - ld.max())
    return w / w.sum()


def total_variation(p, q) -> float:
    return float(0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum())


def draws_tv(draws, log_density, grid, n_bins: int = 10) -> float:
    """TV between binned draws and the grid-normalized density, with bins of
    equal probability under the density."""
    mass = grid_mass(log_density, grid)
    cdf = np.cumsum(mass)
    cuts = np.searchsorted(cdf, np.arange(1, n_bins) / n_bins)
    edges = np.concatenate([[-np.inf], grid[cuts], [np.inf]])
    expected = np.diff(np.concatenate([[0.0], cdf[cuts], [1.0]]))
    observed = np.histogram(draws, bins=edges)[0] / len(draws)
    return total_variation(observed, expected)


# conditional oracles


def _toy_static(p: int = 1, n: int = 3):
    design = np.array([[0.8], [-0.3], [1.5]])[:n, :1] if p == 1 else np.linspace(-1, 1, n * p).reshape(n, p)
    labels = np.array([1.0, -1.0, 1.0])[:n]
    data = SVMData(design, labels)
    hyper = Hyperparameters(a1=2.0, b1=1.0, r=2.0, delta=1.5, n_iter=1, burn_in=0)
    state = initial_state(p, n, hyper)
    state.beta = np.full(p, 0.4)
    state.rho = np.array([0.7, 1.3, 0.5])[:n]
    state.sigma_eps2 = 0.8
    state.sigma_beta2 = np.full(p, 1.7)
    state.lambda_ = np.full(p, 1.2)
    return data, hyper, state


def conditional_oracles(n_draws: int = 10000, seed: int = 0, n_grid: int = 4001) -> Dict[str, float]:
    """TV distance per full conditional, holding the rest of a toy state fixed."""
    stream = RandomStream(seed, 13)
    out = {}
    data, hyper, state = _toy_static()
    z, u = data.labels, data.design[:, 0]

    def margin_sq(beta_value, rho, s):
        return np.sum((1.0 + rho - z * u * beta_value) ** 2 / (2.0 * rho * s))

    def ld_sigma(s):
        return (-hyper.a1 - 1) * math.log(s) - hyper.b1 / s - 1.5 * data.n * math.log(s) - margin_sq(
            state.beta[0], state.rho, s
        )

    draws = [step_sigma_eps(state, data, hyper, stream) for _ in range(n_draws)]
    out["sigma_eps2"] = draws_tv(draws, ld_sigma, np.linspace(1e-3, 8.0, n_grid))

    a0 = 1.0 - z[0] * u[0] * state.beta[0]

    def ld_rho(x):
        return -0.5 * math.log(x) - (a0 + x) ** 2 / (2.0 * x * state.sigma_eps2)

    one = SVMData(data.design[:1], data.labels[:1])
    sub = dataclasses.replace(state, rho=state.rho[:1])
    draws = [step_rho(sub, one, hyper, stream)[0] for _ in range(n_draws)]
    out["rho"] = draws_tv(draws, ld_rho, np.linspace(1e-4, 12.0, n_grid))

    def ld_beta(b):
        return -margin_sq(b, state.rho, state.sigma_eps2) - b * b / (2.0 * state.sigma_beta2[0])

    draws = [step_beta(state, data, stream)[0] for _ in range(n_draws)]
    out["beta"] = draws_tv(draws, ld_beta, np.linspace(-4.0, 5.0, n_grid))

    beta0, lam0 = state.beta[0], state.lambda_[0]

    def ld_sigma_beta(s):
        return -0.5 * math.log(s) - beta0**2 / (2.0 * s) - lam0**2 * s / 2.0

    draws = [step_sigma_beta(state, stream)[0] for _ in range(n_draws)]
    out["sigma_beta2"] = draws_tv(draws, ld_sigma_beta, np.linspace(1e-4, 8.0, n_grid))

    betas = np.array([0.5, -0.2, 1.1])
    H = np.zeros(3, dtype=int)

    def ld_atom(lam):
        return np.sum(math.log(lam) - lam * np.abs(betas)) + (hyper.r - 1) * math.log(lam) - hyper.delta * lam

    shape, rate = atom_conditional(H, betas, 1, hyper)
    draws = stream.gamma(shape[0], rate[0], size=n_draws)
    out["lambda_atom"] = draws_tv(draws, ld_atom, np.linspace(1e-4, 8.0, n_grid))

    dyn, dstate, dhyper = _toy_dynamic()
    v = dyn.projected(dstate.beta)[:, 0]
    target = dyn.labels * (1.0 + dstate.rho)
    prior_var = dstate.sigma_eta[0, 0]

    def ld_eta(e):
        resid = (target - v * e) ** 2 / (2.0 * dstate.rho * dstate.sigma_eps2)
        return -np.sum(resid) - e * e / (2.0 * prior_var)

    draws = [step_eta(dstate, dyn, stream)[0] for _ in range(n_draws)]
    out["eta"] = draws_tv(draws, ld_eta, np.linspace(-6.0, 6.0, n_grid))

    trace_inv = float(np.trace(np.linalg.inv(dstate.sigma_eta)))
    b = iw_degrees(dhyper, 1)

    def ld_d(x):
        return d_star_log_density(x, 1, b, dhyper.c, dhyper.d, trace_inv)

    draws = []
    for _ in range(n_draws):
        dstate.d_star = step_d_star(dstate, dhyper, stream)
        draws.append(dstate.d_star)
    out["d_star"] = draws_tv(draws, ld_d, np.linspace(1e-4, 15.0, n_grid))
    LOG.d("conditional oracles: %s", out)
    return out


def _toy_dynamic():
    tables = np.array([[[0.9], [-0.4]], [[-0.7], [0.3]], [[1.2], [0.6]]])
    data = DynamicData(tables, np.zeros((3, 0)), np.array([1.0, -1.0, 1.0]))
    hyper = Hyperparameters(b=2, c=2.0, d=1.5, n_iter=1, burn_in=0)
    base = initial_state(2, 3, hyper)
    state = DynamicChainState(
        **base.__dict__,
        gamma=np.zeros(0),
        eta=np.ones(1),
        sigma_eta=np.array([[1.5]]),
        d_star=1.0,
    )
    state.beta = np.array([0.6, -0.3])
    state.rho = np.array([0.9, 1.4, 0.6])
    state.sigma_eps2 = 0.7
    return data, state, hyper


# Geweke joint-distribution tests

# IG(a1 + N, b1) puts sigma_eps2 near 4 at N=8; much smaller values let the
# pseudo-observations pin beta and the successive chain stalls in the tails
GEWEKE_STATIC = dict(
    a1=3.0, b1=40.0, M=1.0, r=10.0, delta=10.0, rho_rate=1.0, n_iter=1, burn_in=0
)
GEWEKE_DYNAMIC = dict(
    a1=3.0, b1=2.0, M=1.0, r=6.0, delta=6.0, rho_rate=1.0, b=6, c=6.0, d=6.0,
    gamma_prior_var=1.0, n_iter=1, burn_in=0,
)


@dataclass
class GewekeResult:
    names: List[str]
    forward_mean: np.ndarray
    successive_mean: np.ndarray
    z: np.ndarray

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z)))

    def passed(self, limit: float = 4.0) -> bool:
        return bool(np.all(np.abs(self.z) < limit))

    def to_dict(self) -> dict:
        return {
            name: {"forward": float(f), "successive": float(s), "z": float(zz)}
            for name, f, s, zz in zip(self.names, self.forward_mean, self.successive_mean, self.z)
        }


def _compare(names, forward, successive) -> GewekeResult:
    forward = np.asarray(forward)
    successive = np.asarray(successive)
    z = []
    for j in range(forward.shape[1]):
        se_f2 = forward[:, j].var(ddof=1) / len(forward)
        se_s = batch_means_se(successive[:, j])
        z.append((forward[:, j].mean() - successive[:, j].mean()) / math.sqrt(se_f2 + se_s**2))
    return GewekeResult(names, forward.mean(axis=0), successive.mean(axis=0), np.array(z))


def _pseudo_observations(f, z, rho, sigma_eps2, stream):
    """margin with y - z f + rho ~ N(0, rho sigma_eps2)"""
    return z * f - rho + np.sqrt(rho * sigma_eps2) * stream.normal(size=len(f))


STATIC_STATS = [
    "beta1", "beta2", "beta3", "beta1^2", "beta2^2", "beta3^2",
    "beta1*beta2", "beta2*beta3", "sigma_eps2", "delta", "log lambda1",
]


def _static_stats(state: ChainState):
    b = state.beta
    return [
        b[0], b[1], b[2], b[0] ** 2, b[1] ** 2, b[2] ** 2,
        b[0] * b[1], b[1] * b[2], state.sigma_eps2, state.n_clusters, math.log(state.lambda_[0]),
    ]


def _static_prior(design, hyper: Hyperparameters, stream: RandomStream) -> ChainState:
    n, p = design.shape
    state = draw_dp_prior(p, hyper, stream)
    # the extra N in the shape balances the N/2 the augmented likelihood adds
    state.sigma_eps2 = float(stream.inverse_gamma(hyper.a1 + n, hyper.b1))
    state.rho = np.atleast_1d(stream.exponential(hyper.rho_rate, size=n))
    return state


def geweke_static(
    n: int = 8,
    p: int = 3,
    n_forward: int = 20000,
    n_successive: int = 50000,
    seed: int = 0,
    sweeps_per_draw: int = 2,
    **overrides,
):
    """Compare prior (forward) draws with a chain that alternates a fresh draw
    of the pseudo-observations and sweeps_per_draw sampler sweeps.

    Every sweep leaves theta | y invariant, so any sweeps_per_draw >= 1
    targets the joint; n_successive counts pseudo-observation draws.
    """
    if sweeps_per_draw < 1:
        raise ValidationError("sweeps_per_draw must be >= 1")
    hyper = Hyperparameters(**dict(GEWEKE_STATIC, **overrides))
    stream = RandomStream(seed, 20)
    design = stream.normal(size=(n, p))
    z = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)

    forward = [_static_stats(_static_prior(design, hyper, stream)) for _ in range(n_forward)]

    state = _static_prior(design, hyper, stream)
    successive = []
    for it in range(n_successive):
        y = _pseudo_observations(design @ state.beta, z, state.rho, state.sigma_eps2, stream)
        data = SVMData(design, z, y)
        for _ in range(sweeps_per_draw):
            sweep(state, data, hyper, stream)
        successive.append(_static_stats(state))
        if it and it % 10000 == 0:
            LOG.d("geweke static: %s successive sweeps", it)
    return _compare(STATIC_STATS, forward, successive)


DYNAMIC_STATS = [
    "b1*e1", "b2*e1", "b1*e2", "b2*e2", "|b1*e1|", "|b2*e2|",
    "gamma", "sigma_eps2", "delta", "log d*", "Sigma_eta11",
]


def _dynamic_stats(state: DynamicChainState):
    prod = np.outer(state.eta, state.beta).ravel()
    return [
        prod[0], prod[1], prod[2], prod[3], abs(prod[0]), abs(prod[3]),
        state.gamma[0], state.sigma_eps2, state.n_clusters, math.log(state.d_star), state.sigma_eta[0, 0],
    ]


def _dynamic_prior(data: DynamicData, hyper: Hyperparameters, stream: RandomStream) -> DynamicChainState:
    base = _static_prior(np.zeros((data.n, data.q)), hyper, stream)
    r = data.r
    d_star = float(stream.inverse_gamma(hyper.c, hyper.d))
    sigma_eta = stream.inverse_wishart(iw_degrees(hyper, r), d_star * np.eye(r))
    eta = stream.mvn_precision(np.zeros(r), np.linalg.inv(sigma_eta))
    gamma = stream.normal(size=data.c) * math.sqrt(hyper.gamma_prior_var)
    return DynamicChainState(
        **base.__dict__, gamma=np.atleast_1d(gamma), eta=eta, sigma_eta=sigma_eta, d_star=d_star
    )


def geweke_dynamic(
    n: int = 6, q: int = 2, r: int = 2, n_forward: int = 20000, n_successive: int = 50000, seed: int = 0
):
    hyper = Hyperparameters(**GEWEKE_DYNAMIC)
    stream = RandomStream(seed, 21)
    tables = stream.normal(size=(n, q, r))
    covariates = stream.normal(size=(n, 1))
    z = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    data = DynamicData(tables, covariates, z)

    forward = [_dynamic_stats(_dynamic_prior(data, hyper, stream)) for _ in range(n_forward)]

    state = _dynamic_prior(data, hyper, stream)
    successive = []
    for it in range(n_successive):
        f = data.fitted(state.beta, state.eta, state.gamma)
        data.margin = _pseudo_observations(f, z, state.rho, state.sigma_eps2, stream)
        sweep_dynamic(state, data, hyper, stream)
        successive.append(_dynamic_stats(state))
        if it and it % 10000 == 0:
            LOG.d("geweke dynamic: %s successive sweeps", it)
    return _compare(DYNAMIC_STATS, forward, successive)
