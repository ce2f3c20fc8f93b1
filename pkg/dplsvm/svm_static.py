"""Bayesian linear SVM with a Dirichlet-process mixture of Laplace priors.

The hinge pseudo-likelihood is written as a scale mixture of normals with one
latent rho_i per subject, so every full conditional is closed form:

    sigma_eps2 -> rho -> beta -> shrinkage block -> sigma_beta2

The shrinkage block conditions on beta with sigma_beta2 integrated out (each
beta_p is Laplace with rate lambda_p), which is why sigma_beta2 is refreshed
right after it. With prior_mode="dp" the lambdas are clustered by a
stick-breaking slice sampler; "global" shares one lambda (Bayesian lasso)
and "independent" gives every coefficient its own.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from dplsvm import config
from dplsvm.errors import SamplerError, ValidationError
from dplsvm.log import LOG
from dplsvm.rngkit import RandomStream, chain_streams
from dplsvm.utils import check_both_classes, check_finite, check_labels

PRIOR_MODES = ("dp", "global", "independent")

# clamps for vanishing margin residuals and coefficients
RESIDUAL_FLOOR = 1e-8
BETA_FLOOR = 1e-10


@dataclass
class Hyperparameters:
    a1: float = 1.0
    b1: float = 1.0
    M: float = 1.0
    r: float = 1.0
    delta: float = 1.0
    prior_mode: str = "dp"
    a_lambda: float = 0.1
    b_lambda: float = 0.1
    # dynamic model: Sigma_eta ~ IW(b, d* I); b = 0 means b = R
    b: int = 0
    c: float = 1.0
    d: float = 1.0
    gamma_prior_var: float = 100.0
    n_iter: int = 5000
    burn_in: int = 2500
    thin: int = 5
    seed: int = 20200101
    n_chains: int = 2
    threads: int = 1
    log_every: int = 500
    max_components: int = config.MAX_COMPONENTS
    # exponential prior rate on rho; 0 is the flat mixing measure of the hinge loss
    rho_rate: float = 0.0
    # dynamic model: keep eta at its initial value and skip the Sigma_eta / d* steps
    fix_eta: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("a1", "b1", "M", "r", "delta", "a_lambda", "b_lambda", "c", "d"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValidationError(f"{name} must be positive, got {value}")
        if self.gamma_prior_var <= 0:
            raise ValidationError("gamma_prior_var must be positive")
        if self.rho_rate < 0:
            raise ValidationError("rho_rate must be >= 0")
        if self.prior_mode not in PRIOR_MODES:
            raise ValidationError(f"prior_mode must be one of {PRIOR_MODES}")
        if not 0 <= self.burn_in < self.n_iter:
            raise ValidationError(f"burn_in {self.burn_in} must be in [0, n_iter={self.n_iter})")
        if self.thin < 1 or self.n_chains < 1 or self.threads < 1:
            raise ValidationError("thin, n_chains and threads must be >= 1")
        if self.max_components < 1 or self.b < 0:
            raise ValidationError("max_components must be >= 1 and b >= 0")

    @property
    def n_records(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SVMData:
    design: np.ndarray
    labels: np.ndarray
    # pseudo-observations; ones give the hinge loss
    margin: Optional[np.ndarray] = None

    def __post_init__(self):
        self.design = check_finite("design", np.asarray(self.design, dtype=float))
        if self.design.ndim != 2:
            raise ValidationError("design must be an N x P matrix")
        self.labels = check_labels(self.labels)
        if self.margin is None:
            self.margin = np.ones(len(self.labels))
        self.margin = check_finite("margin", self.margin)
        if not len(self.labels) == len(self.margin) == self.design.shape[0]:
            raise ValidationError("design, labels and margin must have N rows")

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]


@dataclass
class ChainState:
    beta: np.ndarray
    sigma_eps2: float
    rho: np.ndarray
    sigma_beta2: np.ndarray
    lambda_: np.ndarray
    H: np.ndarray
    lambda_star: np.ndarray
    nu: np.ndarray
    slice_u: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_clusters(self) -> int:
        return len(np.unique(self.H))

    def occupied_atoms(self) -> np.ndarray:
        return self.lambda_star[np.unique(self.H)]

    def check(self):
        """Positivity and lambda_p == lambda*_{H_p}; raises SamplerError."""
        for name in ("rho", "sigma_beta2", "lambda_", "lambda_star"):
            value = getattr(self, name)
            if not np.all(np.isfinite(value)) or np.any(value <= 0):
                raise SamplerError(f"{name} left the positive reals")
        if not np.isfinite(self.sigma_eps2) or self.sigma_eps2 <= 0:
            raise SamplerError("sigma_eps2 left the positive reals")
        if not np.all(np.isfinite(self.beta)):
            raise SamplerError("beta is not finite")
        if len(self.H) and not np.array_equal(self.lambda_, self.lambda_star[self.H]):
            raise SamplerError("lambda does not match its cluster atoms")
        if len(self.nu) and (np.any(self.nu < 0) or np.any(self.nu > 1)):
            raise SamplerError("stick fractions outside [0, 1]")


def initial_state(p: int, n: int, hyper: Hyperparameters) -> ChainState:
    if hyper.prior_mode == "independent":
        lam = hyper.a_lambda / hyper.b_lambda
        H = np.arange(p)
        atoms = np.full(p, lam)
    else:
        lam = hyper.r / hyper.delta
        H = np.zeros(p, dtype=int)
        atoms = np.array([lam])
    return ChainState(
        beta=np.zeros(p),
        sigma_eps2=1.0,
        rho=np.ones(n),
        sigma_beta2=np.ones(p),
        lambda_=np.full(p, lam),
        H=H,
        lambda_star=atoms,
        nu=np.array([0.5]),
    )


def stick_weights(nu: np.ndarray) -> np.ndarray:
    """pi_h = nu_h * prod_{h' < h} (1 - nu_h')"""
    remaining = np.concatenate([[1.0], np.cumprod(1.0 - nu)[:-1]])
    return nu * remaining


def hinge_pseudo_loglik(z, U, beta, sigma_eps2, margin=None) -> float:
    """sum_i -log sigma_eps2 - (2 / sigma_eps2) max(margin_i - z_i u_i'beta, 0)"""
    z = check_finite("labels", z)
    U = check_finite("design", np.atleast_2d(U))
    beta = check_finite("beta", beta)
    if not np.isfinite(sigma_eps2) or sigma_eps2 <= 0:
        raise ValidationError(f"sigma_eps2 must be positive, got {sigma_eps2}")
    if U.shape != (len(z), len(beta)):
        raise ValidationError(f"design {U.shape} does not match N={len(z)}, P={len(beta)}")
    margin = np.ones(len(z)) if margin is None else np.asarray(margin, dtype=float)
    hinge = np.maximum(margin - z * (U @ beta), 0.0)
    return float(np.sum(-np.log(sigma_eps2) - 2.0 * hinge / sigma_eps2))


# conditional parameters; the step functions draw from them


def sigma_eps_conditional(state: ChainState, data: SVMData, hyper: Hyperparameters, fitted=None):
    """(shape, scale) of the inverse-gamma conditional of sigma_eps2"""
    if np.any(state.rho <= 0):
        raise ValidationError("every rho_i must be positive")
    if fitted is None:
        fitted = data.design @ state.beta
    resid = state.rho + data.margin - data.labels * fitted
    shape = hyper.a1 + 1.5 * data.n
    scale = hyper.b1 + float(np.sum(resid**2 / (2.0 * state.rho)))
    return shape, scale


def rho_conditional(state: ChainState, data: SVMData, hyper: Hyperparameters, fitted=None):
    """(mean, shape) of the inverse-Gaussian conditional of 1 / rho_i"""
    if fitted is None:
        fitted = data.design @ state.beta
    resid = np.maximum(np.abs(data.margin - data.labels * fitted), RESIDUAL_FLOOR)
    kappa = hyper.rho_rate
    mean = np.sqrt(1.0 + 2.0 * kappa * state.sigma_eps2) / resid
    shape = np.full(data.n, 1.0 / state.sigma_eps2 + 2.0 * kappa)
    return mean, shape


def gaussian_conditional(design, target, rho, sigma_eps2, prior_precision):
    """(h, A) with A = sum_i u_i u_i' / (rho_i sigma_eps2) + prior_precision
    and h = sum_i u_i target_i / (rho_i sigma_eps2)."""
    weights = 1.0 / (rho * sigma_eps2)
    weighted = design * weights[:, None]
    A = weighted.T @ design + prior_precision
    h = weighted.T @ target
    return h, A


def beta_conditional(state: ChainState, data: SVMData):
    target = data.labels * (data.margin + state.rho)
    return gaussian_conditional(
        data.design, target, state.rho, state.sigma_eps2, np.diag(1.0 / state.sigma_beta2)
    )


def sigma_beta_conditional(state: ChainState):
    """(mean, shape) of the inverse-Gaussian conditional of 1 / sigma_beta2_p"""
    abs_beta = np.maximum(np.abs(state.beta), BETA_FLOOR)
    return state.lambda_ / abs_beta, state.lambda_**2


def step_sigma_eps(state, data, hyper, stream: RandomStream, fitted=None) -> float:
    shape, scale = sigma_eps_conditional(state, data, hyper, fitted)
    return float(stream.inverse_gamma(shape, scale))


def step_rho(state, data, hyper, stream: RandomStream, fitted=None) -> np.ndarray:
    if data.n == 0:
        return np.zeros(0)
    mean, shape = rho_conditional(state, data, hyper, fitted)
    return 1.0 / stream.inverse_gaussian(mean, shape)


def step_beta(state, data, stream: RandomStream) -> np.ndarray:
    h, A = beta_conditional(state, data)
    return stream.mvn_precision(h, A)


def step_sigma_beta(state, stream: RandomStream) -> np.ndarray:
    if len(state.beta) == 0:
        return np.zeros(0)
    mean, shape = sigma_beta_conditional(state)
    return 1.0 / np.atleast_1d(stream.inverse_gaussian(mean, shape))


def atom_conditional(H, beta, k: int, hyper: Hyperparameters):
    """(shape, rate) of the Gamma conditional of each of the first k atoms;
    unoccupied components get the Gamma(r, delta) base measure."""
    counts = np.bincount(H, minlength=k)
    sums = np.bincount(H, weights=np.abs(beta), minlength=k)
    return counts + hyper.r, hyper.delta + sums


def step_dp(state: ChainState, hyper: Hyperparameters, stream: RandomStream, beta=None):
    """Slice-sampler update of (sticks, slice variables, atoms, labels).

    Returns (H, lambda_star, nu, slice_u, lambda). Represented components are
    the occupied ones plus as many more as needed to cover every component
    whose weight can exceed the smallest slice variable.
    """
    if hyper.prior_mode != "dp":
        raise ValidationError(f"step_dp needs prior_mode=dp, got {hyper.prior_mode}")
    beta = state.beta if beta is None else beta
    abs_beta = np.abs(beta)
    H = state.H
    if len(H) == 0:
        return H, state.lambda_star, state.nu, np.zeros(0), np.zeros(0)

    k = int(H.max()) + 1
    counts = np.bincount(H, minlength=k)
    after = counts[::-1].cumsum()[::-1] - counts
    nu = stream.beta(1.0 + counts, hyper.M + after)
    pi = stick_weights(nu)
    slice_u = stream.uniform(0.0, pi[H])

    u_min = slice_u.min()
    remaining = float(np.prod(1.0 - nu))
    extra = []
    while remaining > u_min:
        if len(nu) + len(extra) >= hyper.max_components:
            raise SamplerError(
                f"stick-breaking needs more than {hyper.max_components} represented components"
            )
        v = float(stream.beta(1.0, hyper.M))
        extra.append(v)
        remaining *= 1.0 - v
    if extra:
        nu = np.concatenate([nu, extra])
        pi = stick_weights(nu)
    k = len(nu)

    atoms = np.atleast_1d(stream.gamma(*atom_conditional(H, beta, k, hyper)))

    allowed = pi[None, :] > slice_u[:, None]
    log_lik = np.log(atoms)[None, :] - atoms[None, :] * abs_beta[:, None]
    log_w = np.where(allowed, log_lik, -np.inf)
    log_w -= log_w.max(axis=1, keepdims=True)
    H_new = stream.choice_from_weights(np.exp(log_w))

    last = int(H_new.max()) + 1
    nu = nu[:last]
    atoms = atoms[:last]
    return H_new, atoms, nu, slice_u, atoms[H_new]


def step_lambda_independent(state: ChainState, hyper: Hyperparameters, stream, beta=None):
    if hyper.prior_mode != "independent":
        raise ValidationError("step_lambda_independent needs prior_mode=independent")
    beta = state.beta if beta is None else beta
    return np.atleast_1d(stream.gamma(hyper.a_lambda + 1.0, hyper.b_lambda + np.abs(beta)))


def step_lambda_global(state: ChainState, hyper: Hyperparameters, stream, beta=None):
    if hyper.prior_mode != "global":
        raise ValidationError("step_lambda_global needs prior_mode=global")
    beta = state.beta if beta is None else beta
    lam = float(stream.gamma(len(beta) + hyper.r, hyper.delta + np.sum(np.abs(beta))))
    return np.full(len(beta), lam)


def step_shrinkage(state: ChainState, hyper: Hyperparameters, stream: RandomStream, beta=None):
    """Mode-specific lambda block; updates state in place."""
    beta = state.beta if beta is None else beta
    if len(beta) == 0:
        return
    if hyper.prior_mode == "dp":
        state.H, state.lambda_star, state.nu, state.slice_u, state.lambda_ = step_dp(
            state, hyper, stream, beta
        )
    elif hyper.prior_mode == "global":
        state.lambda_ = step_lambda_global(state, hyper, stream, beta)
        state.H = np.zeros(len(beta), dtype=int)
        state.lambda_star = state.lambda_[:1].copy()
    else:
        state.lambda_ = step_lambda_independent(state, hyper, stream, beta)
        state.H = np.arange(len(beta))
        state.lambda_star = state.lambda_.copy()


def sweep(state: ChainState, data: SVMData, hyper: Hyperparameters, stream: RandomStream):
    fitted = data.design @ state.beta
    state.sigma_eps2 = step_sigma_eps(state, data, hyper, stream, fitted)
    state.rho = step_rho(state, data, hyper, stream, fitted)
    state.beta = step_beta(state, data, stream)
    step_shrinkage(state, hyper, stream)
    state.sigma_beta2 = step_sigma_beta(state, stream)
    if config.DEBUG:
        state.check()
    return state


def draw_dp_prior(p: int, hyper: Hyperparameters, stream: RandomStream) -> ChainState:
    """Exact draw of (sticks, labels, atoms, sigma_beta2, beta) from the prior.

    Sticks are broken lazily until every label's uniform falls inside the
    represented mass.
    """
    if hyper.prior_mode == "dp":
        nu = []
        cum = []
        H = np.zeros(p, dtype=int)
        for j, u in enumerate(stream.uniform(size=p)):
            while not cum or cum[-1] <= u:
                if len(nu) >= hyper.max_components:
                    raise SamplerError(f"prior draw needs more than {hyper.max_components} components")
                v = float(stream.beta(1.0, hyper.M))
                left = 1.0 - (cum[-1] if cum else 0.0)
                nu.append(v)
                cum.append((cum[-1] if cum else 0.0) + v * left)
            H[j] = int(np.searchsorted(cum, u, side="right"))
        nu = np.array(nu)
        atoms = np.atleast_1d(stream.gamma(hyper.r, hyper.delta, size=len(nu)))
    elif hyper.prior_mode == "global":
        H = np.zeros(p, dtype=int)
        nu = np.array([1.0])
        atoms = np.atleast_1d(stream.gamma(hyper.r, hyper.delta, size=1))
    else:
        H = np.arange(p)
        nu = np.zeros(0)
        atoms = np.atleast_1d(stream.gamma(hyper.a_lambda, hyper.b_lambda, size=p))
    lam = atoms[H]
    # sigma_beta2 | lambda ~ Exponential(rate lambda^2 / 2) makes beta Laplace(lambda)
    sigma_beta2 = np.atleast_1d(stream.exponential(lam**2 / 2.0))
    beta = np.atleast_1d(stream.normal(0.0, np.sqrt(sigma_beta2)))
    return ChainState(
        beta=beta,
        sigma_eps2=1.0,
        rho=np.zeros(0),
        sigma_beta2=sigma_beta2,
        lambda_=lam,
        H=H,
        lambda_star=atoms,
        nu=nu,
    )


@dataclass
class PosteriorDraws:
    """Thinned post burn-in draws, chain-major.

    coefficients holds the identified effects: beta itself for static fits,
    the products beta_q * eta_r (feature-major) followed by gamma for
    dynamic fits.
    """

    model: str
    coefficients: np.ndarray  # chains x draws x K
    sigma_eps2: np.ndarray  # chains x draws
    n_clusters: np.ndarray  # chains x draws
    lambda_: np.ndarray  # chains x draws x P
    atoms: List[List[List[float]]]
    iterations: np.ndarray
    coefficient_names: List[str] = field(default_factory=list)
    hyper: Optional[Hyperparameters] = None
    # dynamic fits: beta, gamma, eta, sigma_eta, d_star
    extras: Dict[str, np.ndarray] = field(default_factory=dict)
    shape: Dict[str, int] = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return self.coefficients.shape[0]

    @property
    def n_draws(self) -> int:
        return self.coefficients.shape[1]

    def flat(self, name: str = "coefficients") -> np.ndarray:
        arr = getattr(self, name) if hasattr(self, name) else self.extras[name]
        return arr.reshape((-1,) + arr.shape[2:])

    def posterior_mean(self) -> np.ndarray:
        return self.flat().mean(axis=0)

    def mean_cluster_count(self) -> float:
        return float(self.n_clusters.mean())


class _Recorder:
    def __init__(self, hyper: Hyperparameters):
        self.hyper = hyper
        self.rows = {"coefficients": [], "sigma_eps2": [], "n_clusters": [], "lambda_": []}
        self.atoms = []
        self.iterations = []
        self.extras = {}

    def wants(self, it: int) -> bool:
        return it > self.hyper.burn_in and (it - self.hyper.burn_in) % self.hyper.thin == 0

    def add(self, it, state: ChainState, coefficients, **extras):
        self.iterations.append(it)
        self.rows["coefficients"].append(np.array(coefficients, copy=True))
        self.rows["sigma_eps2"].append(state.sigma_eps2)
        self.rows["n_clusters"].append(state.n_clusters)
        self.rows["lambda_"].append(state.lambda_.copy())
        self.atoms.append(state.occupied_atoms().tolist())
        for name, value in extras.items():
            self.extras.setdefault(name, []).append(np.array(value, copy=True))


def merge_chains(model, recorders: List[_Recorder], names, hyper, shape=None) -> PosteriorDraws:
    def stack(key):
        return np.stack([np.asarray(rec.rows[key]) for rec in recorders])

    p = recorders[0].rows["lambda_"][0].shape[0] if recorders[0].iterations else 0
    k = len(names)
    n_chains = len(recorders)
    n_draws = len(recorders[0].iterations)
    if n_draws == 0:
        raise SamplerError("no draws recorded; check n_iter, burn_in and thin")
    extras = {
        name: np.stack([np.asarray(rec.extras[name]) for rec in recorders])
        for name in recorders[0].extras
    }
    return PosteriorDraws(
        model=model,
        coefficients=stack("coefficients").reshape(n_chains, n_draws, k),
        sigma_eps2=stack("sigma_eps2"),
        n_clusters=stack("n_clusters").astype(int),
        lambda_=stack("lambda_").reshape(n_chains, n_draws, p),
        atoms=[rec.atoms for rec in recorders],
        iterations=np.asarray(recorders[0].iterations),
        coefficient_names=list(names),
        hyper=hyper,
        extras=extras,
        shape=dict(shape or {}),
    )


def run_chain(data: SVMData, hyper: Hyperparameters, stream: RandomStream, chain: int = 0):
    state = initial_state(data.p, data.n, hyper)
    rec = _Recorder(hyper)
    for it in range(1, hyper.n_iter + 1):
        sweep(state, data, hyper, stream)
        if rec.wants(it):
            rec.add(it, state, state.beta)
        if hyper.log_every and it % hyper.log_every == 0:
            LOG.d(
                "chain %s sweep %s/%s: clusters %s, sigma_eps2 %.4g",
                chain,
                it,
                hyper.n_iter,
                state.n_clusters,
                state.sigma_eps2,
            )
    return rec


def run_chains(runner, hyper: Hyperparameters):
    """Run runner(stream, chain) for every chain; chains keep their order."""
    streams = chain_streams(hyper.seed, hyper.n_chains)
    workers = min(hyper.threads, hyper.n_chains)
    if workers <= 1:
        return [runner(s, i) for i, s in enumerate(streams)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(runner, streams, range(hyper.n_chains)))


def fit_static(table, hyper: Hyperparameters, margin=None) -> PosteriorDraws:
    """Fit the static model to an EdgeFeatureTable (edges then covariates)."""
    data = SVMData(table.design(), table.labels, margin)
    check_both_classes(data.labels)
    LOG.d(
        "fit static model: N=%s P=%s mode=%s chains=%s", data.n, data.p, hyper.prior_mode, hyper.n_chains
    )
    recorders = run_chains(lambda s, i: run_chain(data, hyper, s, i), hyper)
    return merge_chains(
        "static",
        recorders,
        table.coefficient_names(),
        hyper,
        shape={"Q": table.q, "C": table.c, "R": 1},
    )


@dataclass
class Prediction:
    labels: np.ndarray
    scores: np.ndarray
    vote_fraction: np.ndarray


def predict(draws: PosteriorDraws, U_new) -> Prediction:
    """Posterior-mean decision score; label +1 when the score is >= 0."""
    U_new = check_finite("design", np.atleast_2d(U_new))
    coef = draws.flat()
    if U_new.shape[1] != coef.shape[1]:
        raise ValidationError(
            f"design has {U_new.shape[1]} columns, the fit has {coef.shape[1]} coefficients"
        )
    linear = U_new @ coef.T
    scores = linear.mean(axis=1)
    return Prediction(
        labels=np.where(scores >= 0, 1.0, -1.0),
        scores=scores,
        vote_fraction=(linear > 0).mean(axis=1),
    )
