"""Synthetic datasets with known truth: planted sparse coefficients in magnitude
groups, labels from a noisy linear rule with analytic Bayes error, dynamic
window series from an orthonormal basis, and subject time series drawn from
class-specific sparse precision matrices."""
import dataclasses
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, stats
from scipy.special import expit

from dplsvm.errors import ValidationError
from dplsvm.eval_infer import credible_select, metrics, stratified_splits
from dplsvm.features import DynamicFeatureSet, EdgeFeatureTable, edge_descriptors
from dplsvm.log import LOG
from dplsvm.netestim import SubjectScan
from dplsvm.rngkit import RandomStream
from dplsvm.svm_static import Hyperparameters, fit_static, predict

MECHANISMS = ("margin", "logistic")


@dataclass
class SynthSpec:
    n: int = 200
    q: int = 100
    c: int = 0
    n_signals: int = 10
    # one magnitude per group; signals are split evenly across the groups
    magnitudes: Sequence[float] = (2.0, 0.75)
    # noise sd of the margin rule (or logistic scale); derived from
    # bayes_error when that is given
    noise_scale: Optional[float] = None
    bayes_error: Optional[float] = None
    mechanism: str = "margin"
    seed: int = 20200101

    def __post_init__(self):
        if self.n < 2 or self.q < 1 or self.c < 0:
            raise ValidationError("need n >= 2, q >= 1 and c >= 0")
        if not 0 <= self.n_signals <= self.q:
            raise ValidationError(f"{self.n_signals} signals do not fit in {self.q} edges")
        if self.n_signals and not self.magnitudes:
            raise ValidationError("signals need at least one magnitude group")
        if not all(np.isfinite(m) for m in self.magnitudes):
            raise ValidationError("magnitudes must be finite")
        if self.mechanism not in MECHANISMS:
            raise ValidationError(f"mechanism must be one of {MECHANISMS}")
        if self.noise_scale is None and self.bayes_error is None:
            self.noise_scale = 1.0
        if self.noise_scale is not None and self.noise_scale < 0:
            raise ValidationError("noise_scale must be >= 0")
        if self.bayes_error is not None and not 0 <= self.bayes_error < 0.5:
            raise ValidationError("bayes_error must be in [0, 0.5)")
        if self.mechanism == "logistic" and self.bayes_error is not None:
            raise ValidationError("the logistic rule takes noise_scale, not bayes_error")


@dataclass
class SynthTruth:
    beta: np.ndarray
    signals: np.ndarray
    groups: np.ndarray
    noise_scale: float
    bayes_error: float
    eta: Optional[np.ndarray] = None


@dataclass
class SynthDataset:
    table: EdgeFeatureTable
    truth: SynthTruth

    def split(self, test_fraction: float, seed: int) -> Tuple[EdgeFeatureTable, EdgeFeatureTable]:
        [(train, test)] = stratified_splits(self.table.labels, 1, 1.0 - test_fraction, seed)
        return self.table.subset(np.sort(train)), self.table.subset(np.sort(test))


@dataclass
class DynamicSynthDataset:
    features: DynamicFeatureSet
    covariates: np.ndarray
    labels: np.ndarray
    # N x Q x L window series whose principal scores are the feature tables
    series: np.ndarray
    truth: SynthTruth
    basis: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))


def planted_coefficients(spec: SynthSpec, stream: RandomStream):
    beta = np.zeros(spec.q + spec.c)
    signals = np.sort(stream.gen.choice(spec.q, size=spec.n_signals, replace=False))
    groups = np.arange(spec.n_signals) * len(spec.magnitudes) // max(spec.n_signals, 1)
    signs = np.where(stream.uniform(size=spec.n_signals) < 0.5, -1.0, 1.0)
    beta[signals] = signs * np.asarray(spec.magnitudes, dtype=float)[groups]
    return beta, signals, groups


def margin_bayes_error(norm: float, noise_scale: float) -> float:
    """P(sign(f + e) != sign(f)) for f ~ N(0, norm^2), e ~ N(0, noise^2)."""
    if norm == 0:
        return 0.5
    return math.atan2(noise_scale, norm) / math.pi


def conditional_bayes_error(margin: float, noise_scale: float) -> float:
    """Error of the sign rule at a fixed margin: Phi(-|margin| / noise)."""
    if noise_scale == 0:
        return 0.0 if margin != 0 else 0.5
    return float(stats.norm.cdf(-abs(margin) / noise_scale))


def logistic_bayes_error(norm: float, scale: float) -> float:
    """E[expit(-|f| / scale)] for f ~ N(0, norm^2)."""
    if norm == 0:
        return 0.5
    if scale == 0:
        return 0.0
    value, _ = integrate.quad(
        lambda x: 2.0 * stats.norm.pdf(x) * expit(-norm * x / scale), 0.0, np.inf
    )
    return float(value)


def bayes_error(norm: float, noise_scale: float, mechanism: str = "margin") -> float:
    if mechanism == "margin":
        return margin_bayes_error(norm, noise_scale)
    return logistic_bayes_error(norm, noise_scale)


def _labels(f, spec: SynthSpec, noise_scale: float, stream: RandomStream) -> np.ndarray:
    if spec.mechanism == "margin":
        noisy = f + stream.normal(0.0, 1.0, size=len(f)) * noise_scale
        z = np.where(noisy >= 0, 1.0, -1.0)
    elif noise_scale == 0:
        z = np.where(f >= 0, 1.0, -1.0)
    else:
        z = np.where(stream.uniform(size=len(f)) < expit(f / noise_scale), 1.0, -1.0)
    if len(np.unique(z)) < 2:
        raise ValidationError("the generated labels contain a single class; change seed or n")
    return z


def _noise_scale(spec: SynthSpec, norm: float) -> float:
    if spec.bayes_error is None:
        return float(spec.noise_scale)
    return norm * math.tan(math.pi * spec.bayes_error)


def _columns(q: int):
    v = 2
    while v * (v - 1) // 2 < q:
        v += 1
    return edge_descriptors(v)[:q]


def generate(spec: SynthSpec) -> SynthDataset:
    """Standard-normal edges and covariates; z = sign(u'beta + noise)."""
    stream = RandomStream(spec.seed, 0)
    beta, signals, groups = planted_coefficients(spec, stream)
    design = stream.normal(size=(spec.n, spec.q + spec.c))
    norm = float(np.linalg.norm(beta))
    noise = _noise_scale(spec, norm)
    z = _labels(design @ beta, spec, noise, stream)
    truth = SynthTruth(
        beta=beta,
        signals=signals,
        groups=groups,
        noise_scale=noise,
        bayes_error=bayes_error(norm, noise, spec.mechanism),
    )
    LOG.d("synthetic data: N=%s P=%s bayes error %.4f", spec.n, len(beta), truth.bayes_error)
    table = EdgeFeatureTable(
        values=design[:, : spec.q],
        columns=_columns(spec.q),
        covariates=design[:, spec.q :],
        labels=z,
        subject_ids=[f"s{i:04d}" for i in range(spec.n)],
    )
    return SynthDataset(table=table, truth=truth)


def cosine_basis(r: int, length: int) -> np.ndarray:
    """r x length orthonormal rows, each orthogonal to the constant vector."""
    if r >= length:
        raise ValidationError(f"need R < L for an orthonormal basis, got R={r}, L={length}")
    t = np.arange(length)
    rows = [np.cos(np.pi * (k + 1) * (t + 0.5) / length) for k in range(r)]
    return np.sqrt(2.0 / length) * np.array(rows)


def generate_dynamic(
    spec: SynthSpec,
    r: int,
    length: int,
    eta: Optional[Sequence[float]] = None,
    series_noise: float = 0.01,
) -> DynamicSynthDataset:
    """Feature tables u^1..u^R (standard normal) and the window series
    sum_r u^r phi_r + small noise that carries them; labels follow
    sign(sum_r eta_r u^r'beta + c'gamma + noise)."""
    if r < 1 or length < 2:
        raise ValidationError("need R >= 1 and L >= 2")
    stream = RandomStream(spec.seed, 1)
    beta, signals, groups = planted_coefficients(spec, stream)
    eta = np.linspace(1.0, 0.5, r) if eta is None else np.asarray(eta, dtype=float)
    if len(eta) != r:
        raise ValidationError(f"eta has {len(eta)} entries, R={r}")

    scores = stream.normal(size=(spec.n, spec.q, r))
    covariates = stream.normal(size=(spec.n, spec.c))
    edge_beta, gamma = beta[: spec.q], beta[spec.q :]
    f = (scores @ eta) @ edge_beta + covariates @ gamma
    norm = math.sqrt(float(eta @ eta) * float(edge_beta @ edge_beta) + float(gamma @ gamma))
    noise = _noise_scale(spec, norm)
    z = _labels(f, spec, noise, stream)

    basis = cosine_basis(r, length)
    series = scores @ basis + series_noise * stream.normal(size=(spec.n, spec.q, length))
    features = DynamicFeatureSet(
        method="pca",
        tables=[scores[:, :, k] for k in range(r)],
        columns=_columns(spec.q),
        subject_ids=[f"s{i:04d}" for i in range(spec.n)],
        components=basis,
    )
    truth = SynthTruth(
        beta=beta,
        signals=signals,
        groups=groups,
        noise_scale=noise,
        bayes_error=bayes_error(norm, noise, spec.mechanism),
        eta=eta,
    )
    return DynamicSynthDataset(
        features=features, covariates=covariates, labels=z, series=series, truth=truth, basis=basis
    )


@dataclass
class ScanTruth:
    precisions: Tuple[np.ndarray, np.ndarray]
    # node pairs whose partial dependence differs between the classes
    class_edges: List[Tuple[int, int]]


def class_precisions(v: int, n_class_edges: int, strength: float, stream: RandomStream):
    """Chain-graph precision shared by both classes, plus extra edges present
    only for label +1."""
    base = np.eye(v)
    for j in range(v - 1):
        base[j, j + 1] = base[j + 1, j] = 0.4
    candidates = [(k, l) for k in range(v) for l in range(k + 2, v)]  # noqa: E741
    picks = stream.gen.choice(len(candidates), size=min(n_class_edges, len(candidates)), replace=False)
    edges = sorted(candidates[i] for i in picks)
    positive = base.copy()
    for k, l in edges:  # noqa: E741
        positive[k, l] = positive[l, k] = strength
    # diagonal loading keeps both matrices positive definite
    shift = max(0.0, 0.1 - np.linalg.eigvalsh(positive)[0], 0.1 - np.linalg.eigvalsh(base)[0])
    base += shift * np.eye(v)
    positive += shift * np.eye(v)
    return base, positive, edges


def generate_scans(
    n: int,
    v: int,
    t: int,
    seed: int,
    n_class_edges: int = 3,
    strength: float = 0.45,
    n_covariates: int = 0,
) -> Tuple[List[SubjectScan], ScanTruth]:
    """Alternating labels; subject series are T draws of N(0, Omega_z^-1)."""
    if n < 2 or v < 3 or t < 2:
        raise ValidationError("need n >= 2, v >= 3 and t >= 2")
    stream = RandomStream(seed, 2)
    negative, positive, edges = class_precisions(v, n_class_edges, strength, stream)
    covs = {-1: np.linalg.inv(negative), 1: np.linalg.inv(positive)}
    chol = {z: np.linalg.cholesky(cov) for z, cov in covs.items()}
    scans = []
    for i in range(n):
        z = 1 if i % 2 == 0 else -1
        series = stream.normal(size=(t, v)) @ chol[z].T
        scans.append(
            SubjectScan(
                id=f"s{i:04d}",
                series=series,
                covariates=stream.normal(size=n_covariates),
                label=z,
            )
        )
    return scans, ScanTruth(precisions=(negative, positive), class_edges=edges)


@dataclass
class RecoveryRun:
    seed: int
    mc: float
    bayes_error: float
    recovered: int
    false_positives: int
    n_signals: int


@dataclass
class RecoveryReport:
    prior_mode: str
    runs: List[RecoveryRun]

    @property
    def mean_mc(self) -> float:
        return float(np.mean([run.mc for run in self.runs]))

    @property
    def mean_excess_mc(self) -> float:
        return float(np.mean([run.mc - run.bayes_error for run in self.runs]))

    @property
    def mean_recovered(self) -> float:
        return float(np.mean([run.recovered for run in self.runs]))

    @property
    def mean_false_positives(self) -> float:
        return float(np.mean([run.false_positives for run in self.runs]))

    def passed(self, excess: float = 0.05, min_recovered: float = 8.0, max_false: float = 2.0) -> bool:
        return (
            self.mean_excess_mc <= excess
            and self.mean_recovered >= min_recovered
            and self.mean_false_positives <= max_false
        )

    def to_dict(self) -> dict:
        return {
            "prior_mode": self.prior_mode,
            "mean_mc": self.mean_mc,
            "mean_excess_mc": self.mean_excess_mc,
            "mean_recovered": self.mean_recovered,
            "mean_false_positives": self.mean_false_positives,
            "runs": [dataclasses.asdict(run) for run in self.runs],
        }


def recovery_study(
    spec: SynthSpec,
    hyper: Hyperparameters,
    seeds: Sequence[int],
    test_fraction: float = 0.25,
    alpha: float = 0.05,
    adjust: str = "bonferroni",
) -> RecoveryReport:
    """Generate, split, fit on the training rows and score the held-out rows
    once per seed; planted signals count as recovered when credible_select
    flags them."""
    if not seeds:
        raise ValidationError("a recovery study needs at least one seed")
    runs = []
    for seed in seeds:
        data = generate(dataclasses.replace(spec, seed=seed))
        train, test = data.split(test_fraction, seed)
        draws = fit_static(train, dataclasses.replace(hyper, seed=seed))
        mc = metrics(test.labels, predict(draws, test.design()).labels).mc
        chosen = set(credible_select(draws, alpha, adjust).selected)
        signals = set(data.truth.signals.tolist())
        run = RecoveryRun(
            seed=seed,
            mc=mc,
            bayes_error=data.truth.bayes_error,
            recovered=len(chosen & signals),
            false_positives=len(chosen - signals),
            n_signals=len(signals),
        )
        LOG.d("recovery seed %s: mc %.3f, %s/%s signals", seed, mc, run.recovered, len(signals))
        runs.append(run)
    return RecoveryReport(prior_mode=hyper.prior_mode, runs=runs)
