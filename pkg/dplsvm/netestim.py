"""Static and dynamic functional connectivity from per-subject time series."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from dplsvm.config import ZERO_THRESHOLD
from dplsvm.errors import NetworkEstimationError, ValidationError
from dplsvm.log import LOG
from dplsvm.utils import is_symmetric, symmetrize


@dataclass
class SubjectScan:
    id: str
    series: np.ndarray
    covariates: np.ndarray = field(default_factory=lambda: np.zeros(0))
    # None for prediction-only subjects
    label: Optional[int] = None

    def __post_init__(self):
        self.series = np.asarray(self.series, dtype=float)
        self.covariates = np.asarray(self.covariates, dtype=float).reshape(-1)
        self.validate()

    def validate(self):
        if self.series.ndim != 2:
            raise ValidationError(f"subject {self.id}: series must be a T x V matrix")
        t, v = self.series.shape
        if t < 2 or v < 2:
            raise ValidationError(f"subject {self.id}: need T >= 2 and V >= 2, got {t}x{v}")
        if not np.all(np.isfinite(self.series)):
            raise ValidationError(f"subject {self.id}: series has non-finite entries")
        if not np.all(np.isfinite(self.covariates)):
            raise ValidationError(f"subject {self.id}: covariates have non-finite entries")
        flat = np.flatnonzero(np.ptp(self.series, axis=0) == 0)
        if len(flat):
            raise ValidationError(f"subject {self.id}: region {flat[0]} has zero variance")
        if self.label is not None and self.label not in (-1, 1):
            raise ValidationError(f"subject {self.id}: label must be -1 or +1")

    @property
    def n_regions(self) -> int:
        return self.series.shape[1]


@dataclass
class StaticNetwork:
    precision: np.ndarray
    penalty: float
    density: float
    iterations: int = 0
    tol: float = 1e-6

    def partial_correlations(self) -> np.ndarray:
        """-Omega_jk / sqrt(Omega_jj Omega_kk), unit diagonal"""
        d = np.sqrt(np.diag(self.precision))
        pc = -self.precision / np.outer(d, d)
        np.fill_diagonal(pc, 1.0)
        return pc

    def edge_weights(self, kind: str = "precision") -> np.ndarray:
        if kind == "partial":
            return self.partial_correlations()
        return self.precision


@dataclass
class DynamicSeries:
    window_length: int
    windows: List[np.ndarray]

    def edge_series(self) -> np.ndarray:
        """(V(V-1)/2) x L matrix, one row per upper-triangle edge"""
        v = self.windows[0].shape[0]
        iu = np.triu_indices(v, k=1)
        return np.stack([w[iu] for w in self.windows], axis=1)


def pearson_correlation(series: np.ndarray) -> np.ndarray:
    series = np.asarray(series, dtype=float)
    if series.ndim != 2 or series.shape[0] < 2:
        raise ValidationError("series must be a T x V matrix with T >= 2")
    centered = series - series.mean(axis=0)
    cov = centered.T @ centered / (series.shape[0] - 1)
    var = np.diag(cov)
    bad = np.flatnonzero(var <= 0)
    if len(bad):
        raise ValidationError(f"region {bad[0]} has zero variance")
    sd = np.sqrt(var)
    corr = np.clip(cov / np.outer(sd, sd), -1.0, 1.0)
    corr = symmetrize(corr)
    np.fill_diagonal(corr, 1.0)
    return corr


def network_density(precision: np.ndarray, zero_threshold: float = ZERO_THRESHOLD) -> float:
    v = precision.shape[0]
    if v < 2:
        return 0.0
    off = ~np.eye(v, dtype=bool)
    return float(np.count_nonzero(np.abs(precision[off]) >= zero_threshold) / (v * (v - 1)))


def _soft_threshold(x, t):
    return np.sign(x) * max(abs(x) - t, 0.0)


def _lasso_cd(W11, s12, lam, beta, tol, max_iter=10000):
    """Coordinate descent for min 1/2 b'W11 b - s12'b + lam |b|_1."""
    p = len(s12)
    for _ in range(max_iter):
        max_change = 0.0
        for j in range(p):
            old = beta[j]
            r = s12[j] - W11[j] @ beta + W11[j, j] * old
            new = _soft_threshold(r, lam) / W11[j, j]
            if new != old:
                beta[j] = new
                max_change = max(max_change, abs(new - old))
        if max_change < tol:
            break
    return beta


def kkt_residual(S: np.ndarray, precision: np.ndarray, penalty: float) -> float:
    """Largest violation of the stationarity conditions of
    log det O - tr(S O) - penalty * sum_{j != k} |O_jk|."""
    W = np.linalg.inv(precision)
    G = W - S
    v = S.shape[0]
    off = ~np.eye(v, dtype=bool)
    nonzero = off & (np.abs(precision) >= ZERO_THRESHOLD)
    zero = off & ~nonzero
    parts = [np.abs(np.diag(G))]
    if nonzero.any():
        parts.append(np.abs(G[nonzero] - penalty * np.sign(precision[nonzero])))
    if zero.any():
        parts.append(np.maximum(np.abs(G[zero]) - penalty, 0.0))
    return float(max(p.max() for p in parts))


def graphical_lasso(
    S: np.ndarray, penalty: float, tol: float = 1e-6, max_iter: int = 500
) -> StaticNetwork:
    """Block coordinate descent over columns; the diagonal is not penalized.

    Converged when the largest change in the working covariance over a full
    pass is below tol * mean |S|.
    """
    S = np.asarray(S, dtype=float)
    if not is_symmetric(S):
        raise ValidationError("S must be symmetric")
    if not np.allclose(np.diag(S), 1.0):
        raise ValidationError("S must have a unit diagonal")
    if penalty < 0:
        raise ValidationError(f"penalty must be >= 0, got {penalty}")

    v = S.shape[0]
    W = S.copy()
    # off-diagonal W entries are S_jk + penalty * sign, start from S
    betas = np.zeros((v, v - 1))
    idx = np.arange(v)
    threshold = tol * np.mean(np.abs(S))
    inner_tol = threshold * 1e-3

    change = np.inf
    for it in range(1, max_iter + 1):
        W_old = W.copy()
        for j in range(v):
            rest = idx != j
            W11 = W[np.ix_(rest, rest)]
            s12 = S[rest, j]
            beta = _lasso_cd(W11, s12, penalty, betas[j], inner_tol)
            betas[j] = beta
            w12 = W11 @ beta
            W[rest, j] = w12
            W[j, rest] = w12
        change = np.max(np.abs(W - W_old))
        if not np.all(np.isfinite(W)) or np.linalg.eigvalsh(W)[0] <= 0:
            raise NetworkEstimationError(
                f"working covariance lost positive definiteness at iteration {it}",
                iteration=it,
                residual=change,
            )
        if change < threshold:
            break
    else:
        raise NetworkEstimationError(
            f"graphical lasso did not converge in {max_iter} iterations, last change {change:.3e}",
            iteration=max_iter,
            residual=change,
        )

    precision = np.zeros((v, v))
    for j in range(v):
        rest = idx != j
        w12 = W[rest, j]
        omega_jj = 1.0 / (W[j, j] - w12 @ betas[j])
        precision[j, j] = omega_jj
        precision[rest, j] = -betas[j] * omega_jj
    precision = symmetrize(precision)
    precision[np.abs(precision) < ZERO_THRESHOLD] = 0.0

    density = network_density(precision)
    LOG.d("glasso penalty %.4g: %s iterations, density %.4f", penalty, it, density)
    return StaticNetwork(precision=precision, penalty=penalty, density=density, iterations=it, tol=tol)


def lambda_grid(S: np.ndarray, n: int = 20, ratio: float = 0.01) -> np.ndarray:
    """n log-spaced penalties from ratio * max|S_jk| up to max|S_jk|; the
    largest always gives an empty network."""
    v = S.shape[0]
    top = np.max(np.abs(S[~np.eye(v, dtype=bool)])) if v > 1 else 1.0
    top = max(top, 1e-6)
    return np.logspace(np.log10(top * ratio), np.log10(top), n)


def fit_network_at_density(
    scan: SubjectScan,
    target_density: float,
    lambda_values: Optional[Sequence[float]] = None,
    tol: float = 1e-6,
    max_iter: int = 500,
    n_lambda: int = 20,
) -> StaticNetwork:
    """Fit glasso along the penalty grid and keep the network whose density is
    closest to target_density.

    Realized density is not guaranteed to fall monotonically along the grid:
    glasso supports are not nested in the penalty, so an edge can enter as the
    penalty grows. Only the endpoints are fixed (the top of the default grid is
    always empty). When the densities along the grid do fall monotonically, the
    selected penalty is non-increasing in target_density.
    """
    if not 0 < target_density <= 1:
        raise ValidationError(f"target density must be in (0, 1], got {target_density}")
    S = pearson_correlation(scan.series)
    if lambda_values is None:
        lambda_values = lambda_grid(S, n=n_lambda)
    lambda_values = np.asarray(lambda_values, dtype=float)
    if len(lambda_values) == 0:
        raise ValidationError("lambda grid is empty")
    if np.any(np.diff(lambda_values) <= 0):
        raise ValidationError("lambda grid must be strictly increasing")

    best = None
    failures = []
    for lam in lambda_values:
        try:
            net = graphical_lasso(S, lam, tol=tol, max_iter=max_iter)
        except NetworkEstimationError as e:
            LOG.warning("subject %s: glasso failed at penalty %s: %s", scan.id, lam, e)
            failures.append(f"{lam:.4g}: {e}")
            continue
        gap = abs(net.density - target_density)
        # grid is increasing, so <= prefers the larger penalty on ties
        if best is None or gap <= best[0]:
            best = (gap, net)

    if best is None:
        raise NetworkEstimationError(
            f"subject {scan.id}: glasso failed for every penalty: " + "; ".join(failures)
        )
    LOG.d("subject %s: penalty %.4g gives density %.4f", scan.id, best[1].penalty, best[1].density)
    return best[1]


def fit_networks(
    scans: Sequence[SubjectScan],
    target_density: float,
    lambda_values: Optional[Sequence[float]] = None,
    tol: float = 1e-6,
    max_iter: int = 500,
    threads: int = 1,
    n_lambda: int = 20,
) -> List[StaticNetwork]:
    """Fit every subject independently; results keep the input order."""

    def _fit(scan):
        return fit_network_at_density(scan, target_density, lambda_values, tol, max_iter, n_lambda)

    if threads <= 1:
        return [_fit(scan) for scan in scans]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_fit, scans))


def sliding_window(series: np.ndarray, window: int) -> DynamicSeries:
    series = np.asarray(series, dtype=float)
    t = series.shape[0]
    if not 2 <= window <= t:
        raise ValidationError(f"window length must be in [2, {t}], got {window}")
    windows = []
    for start in range(t - window + 1):
        chunk = series[start : start + window]
        flat = np.flatnonzero(np.ptp(chunk, axis=0) == 0)
        if len(flat):
            raise ValidationError(f"window {start}: region {flat[0]} is constant")
        windows.append(pearson_correlation(chunk))
    return DynamicSeries(window_length=window, windows=windows)
