"""Dynamic-connectivity SVM: coefficients beta_q * eta_r over R features per edge.

The sweep reuses the static conditionals on the collapsed design
u_eta,i = sum_r u_i^r eta_r and adds gamma (covariates), eta, Sigma_eta and d*.
Only the products beta_q * eta_r are identified; draws report those.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from dplsvm import config
from dplsvm.errors import SamplerError, ValidationError
from dplsvm.log import LOG
from dplsvm.rngkit import RandomStream
from dplsvm.svm_static import (
    ChainState,
    Hyperparameters,
    PosteriorDraws,
    _Recorder,
    gaussian_conditional,
    initial_state,
    merge_chains,
    run_chains,
    step_rho,
    step_shrinkage,
    step_sigma_beta,
    step_sigma_eps,
)
from dplsvm.utils import check_both_classes, check_finite, check_labels


def stack_tables(tables) -> np.ndarray:
    """list of R (N x Q) tables, or an N x Q x R array -> N x Q x R"""
    if isinstance(tables, np.ndarray) and tables.ndim == 3:
        return check_finite("feature tables", tables)
    tables = [np.atleast_2d(np.asarray(t, dtype=float)) for t in tables]
    if not tables or len({t.shape for t in tables}) != 1:
        raise ValidationError("feature tables must be non-empty and share one shape")
    return check_finite("feature tables", np.stack(tables, axis=2))


@dataclass
class DynamicData:
    tables: np.ndarray  # N x Q x R
    covariates: np.ndarray  # N x C
    labels: np.ndarray
    margin: Optional[np.ndarray] = None

    def __post_init__(self):
        self.tables = stack_tables(self.tables)
        n = self.tables.shape[0]
        self.covariates = check_finite(
            "covariates", np.asarray(self.covariates, dtype=float).reshape(n, -1)
        )
        self.labels = check_labels(self.labels)
        if self.margin is None:
            self.margin = np.ones(n)
        self.margin = check_finite("margin", self.margin)
        if not len(self.labels) == len(self.margin) == n:
            raise ValidationError("tables, labels and margin must have N rows")

    @property
    def n(self) -> int:
        return self.tables.shape[0]

    @property
    def q(self) -> int:
        return self.tables.shape[1]

    @property
    def r(self) -> int:
        return self.tables.shape[2]

    @property
    def c(self) -> int:
        return self.covariates.shape[1]

    def collapsed(self, eta) -> np.ndarray:
        return self.tables @ eta

    def projected(self, beta) -> np.ndarray:
        """N x R, entry (i, r) = u_i^r' beta"""
        return np.einsum("nqr,q->nr", self.tables, beta)

    def fitted(self, beta, eta, gamma) -> np.ndarray:
        return self.collapsed(eta) @ beta + self.covariates @ gamma


@dataclass
class DynamicChainState(ChainState):
    gamma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    eta: np.ndarray = field(default_factory=lambda: np.ones(1))
    sigma_eta: np.ndarray = field(default_factory=lambda: np.eye(1))
    d_star: float = 1.0

    def check(self):
        super().check()
        if not np.all(np.isfinite(self.eta)) or not np.all(np.isfinite(self.gamma)):
            raise SamplerError("eta and gamma must be finite")
        if np.linalg.eigvalsh(self.sigma_eta)[0] <= 0 or self.d_star <= 0:
            raise SamplerError("Sigma_eta must be positive definite and d* positive")

    def products(self) -> np.ndarray:
        """beta_q * eta_r, feature-major, then gamma"""
        return np.concatenate([np.outer(self.eta, self.beta).ravel(), self.gamma])


def iw_degrees(hyper: Hyperparameters, r: int) -> int:
    b = hyper.b or r
    if b < r:
        raise ValidationError(f"inverse-Wishart degrees b={b} must be >= R={r}")
    return b


def dynamic_pseudo_loglik(z, tables, covariates, beta, eta, gamma, sigma_eps2, margin=None):
    data = DynamicData(tables, covariates, z, margin)
    beta = check_finite("beta", beta)
    eta = check_finite("eta", eta)
    gamma = check_finite("gamma", gamma)
    if len(beta) != data.q or len(eta) != data.r or len(gamma) != data.c:
        raise ValidationError(
            f"coefficients ({len(beta)}, {len(eta)}, {len(gamma)}) do not match "
            f"Q={data.q}, R={data.r}, C={data.c}"
        )
    if not np.isfinite(sigma_eps2) or sigma_eps2 <= 0:
        raise ValidationError(f"sigma_eps2 must be positive, got {sigma_eps2}")
    hinge = np.maximum(data.margin - data.labels * data.fitted(beta, eta, gamma), 0.0)
    return float(np.sum(-np.log(sigma_eps2) - 2.0 * hinge / sigma_eps2))


def _target(state, data: DynamicData):
    return data.labels * (data.margin + state.rho)


def beta_dynamic_conditional(state: DynamicChainState, data: DynamicData):
    target = _target(state, data) - data.covariates @ state.gamma
    return gaussian_conditional(
        data.collapsed(state.eta),
        target,
        state.rho,
        state.sigma_eps2,
        np.diag(1.0 / state.sigma_beta2),
    )


def gamma_conditional(state: DynamicChainState, data: DynamicData, hyper: Hyperparameters):
    target = _target(state, data) - data.collapsed(state.eta) @ state.beta
    return gaussian_conditional(
        data.covariates,
        target,
        state.rho,
        state.sigma_eps2,
        np.eye(data.c) / hyper.gamma_prior_var,
    )


def eta_conditional(state: DynamicChainState, data: DynamicData):
    target = _target(state, data) - data.covariates @ state.gamma
    return gaussian_conditional(
        data.projected(state.beta),
        target,
        state.rho,
        state.sigma_eps2,
        np.linalg.inv(state.sigma_eta),
    )


def sigma_eta_conditional(state: DynamicChainState, hyper: Hyperparameters):
    """(df, scale) of the inverse-Wishart conditional: (b + 1, d* I + eta eta')"""
    r = len(state.eta)
    return iw_degrees(hyper, r) + 1, state.d_star * np.eye(r) + np.outer(state.eta, state.eta)


def d_star_log_density(d_star, r, b, c, d, trace_inv) -> float:
    """log p(d* | Sigma_eta) up to a constant, -inf off the positive axis"""
    if d_star <= 0:
        return -np.inf
    return (r * b / 2.0) * np.log(d_star) - 0.5 * d_star * trace_inv - (c + 1.0) * np.log(d_star) - d / d_star


def step_beta_dynamic(state, data, stream: RandomStream) -> np.ndarray:
    h, A = beta_dynamic_conditional(state, data)
    return stream.mvn_precision(h, A)


def step_gamma(state, data, hyper, stream: RandomStream) -> np.ndarray:
    h, A = gamma_conditional(state, data, hyper)
    return stream.mvn_precision(h, A)


def step_eta(state, data, stream: RandomStream) -> np.ndarray:
    h, A = eta_conditional(state, data)
    return stream.mvn_precision(h, A)


def step_sigma_eta(state, hyper, stream: RandomStream) -> np.ndarray:
    df, scale = sigma_eta_conditional(state, hyper)
    return stream.inverse_wishart(df, scale)


def step_d_star(state, hyper, stream: RandomStream) -> float:
    r = len(state.eta)
    b = iw_degrees(hyper, r)
    trace_inv = float(np.trace(np.linalg.inv(state.sigma_eta)))

    def log_density(x):
        return d_star_log_density(x, r, b, hyper.c, hyper.d, trace_inv)

    return float(stream.slice_sample(log_density, state.d_star))


def initial_dynamic_state(data: DynamicData, hyper: Hyperparameters) -> DynamicChainState:
    base = initial_state(data.q, data.n, hyper)
    return DynamicChainState(
        **base.__dict__,
        gamma=np.zeros(data.c),
        eta=np.ones(data.r),
        sigma_eta=np.eye(data.r),
        d_star=1.0,
    )


def sweep_dynamic(state: DynamicChainState, data: DynamicData, hyper, stream: RandomStream):
    fitted = data.fitted(state.beta, state.eta, state.gamma)
    state.sigma_eps2 = step_sigma_eps(state, data, hyper, stream, fitted)
    state.rho = step_rho(state, data, hyper, stream, fitted)
    state.beta = step_beta_dynamic(state, data, stream)
    state.gamma = step_gamma(state, data, hyper, stream)
    step_shrinkage(state, hyper, stream)
    state.sigma_beta2 = step_sigma_beta(state, stream)
    if not hyper.fix_eta:
        state.eta = step_eta(state, data, stream)
        state.sigma_eta = step_sigma_eta(state, hyper, stream)
        state.d_star = step_d_star(state, hyper, stream)
    if config.DEBUG:
        state.check()
    return state


def run_dynamic_chain(data: DynamicData, hyper: Hyperparameters, stream: RandomStream, chain=0):
    iw_degrees(hyper, data.r)
    state = initial_dynamic_state(data, hyper)
    rec = _Recorder(hyper)
    for it in range(1, hyper.n_iter + 1):
        sweep_dynamic(state, data, hyper, stream)
        if rec.wants(it):
            rec.add(
                it,
                state,
                state.products(),
                beta=state.beta,
                gamma=state.gamma,
                eta=state.eta,
                sigma_eta=state.sigma_eta,
                d_star=state.d_star,
            )
        if hyper.log_every and it % hyper.log_every == 0:
            LOG.d(
                "chain %s sweep %s/%s: clusters %s, sigma_eps2 %.4g, |eta| %.4g",
                chain,
                it,
                hyper.n_iter,
                state.n_clusters,
                state.sigma_eps2,
                np.linalg.norm(state.eta),
            )
    return rec


def dynamic_coefficient_names(columns, r: int, covariate_names: Sequence[str]) -> List[str]:
    names = [c.name() if hasattr(c, "name") else str(c) for c in columns]
    return [f"{name}[{k}]" for k in range(r) for name in names] + list(covariate_names)


def dynamic_design(features, covariates) -> np.ndarray:
    """Flat design matching the coefficient order of dynamic draws."""
    tables = features.tables if hasattr(features, "tables") else features
    stacked = stack_tables(tables)
    n = stacked.shape[0]
    flat = np.hstack([stacked[:, :, k] for k in range(stacked.shape[2])])
    return np.hstack([flat, np.asarray(covariates, dtype=float).reshape(n, -1)])


def fit_dynamic(
    features,
    covariates,
    labels,
    hyper: Hyperparameters,
    covariate_names: Optional[Sequence[str]] = None,
    margin=None,
) -> PosteriorDraws:
    """Fit the dynamic model to a DynamicFeatureSet (or a list of tables)."""
    tables = features.tables if hasattr(features, "tables") else features
    data = DynamicData(tables, covariates, labels, margin)
    check_both_classes(data.labels)
    if covariate_names is None:
        covariate_names = [f"c{j}" for j in range(data.c)]
    columns = getattr(features, "columns", None) or [f"e{j}" for j in range(data.q)]
    LOG.d(
        "fit dynamic model: N=%s Q=%s R=%s C=%s mode=%s",
        data.n,
        data.q,
        data.r,
        data.c,
        hyper.prior_mode,
    )
    recorders = run_chains(lambda s, i: run_dynamic_chain(data, hyper, s, i), hyper)
    return merge_chains(
        "dynamic",
        recorders,
        dynamic_coefficient_names(columns, data.r, covariate_names),
        hyper,
        shape={"Q": data.q, "C": data.c, "R": data.r},
    )
