"""Edge features: vectorize networks, screen edges, extract dynamic
summaries and assemble design matrices."""
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.decomposition import PCA

from dplsvm.errors import ScreeningError, ValidationError
from dplsvm.log import LOG
from dplsvm.utils import check_finite, check_labels, is_symmetric

MANUAL_FEATURES = ("mean", "variation", "stability")


@dataclass(frozen=True)
class EdgeDescriptor:
    k: int
    l: int  # noqa: E741
    session: str = ""
    feature: int = 0

    def name(self) -> str:
        name = f"{self.k}-{self.l}"
        if self.session:
            name = f"{self.session}:{name}"
        if self.feature:
            name = f"{name}#{self.feature}"
        return name

    def to_dict(self) -> dict:
        return {"k": self.k, "l": self.l, "session": self.session, "feature": self.feature}


@dataclass
class Standardization:
    mean: np.ndarray
    scale: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.scale

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardization":
        mean = x.mean(axis=0)
        scale = x.std(axis=0, ddof=1) if x.shape[0] > 1 else np.ones(x.shape[1])
        scale = np.where(scale > 0, scale, 1.0)
        return cls(mean=mean, scale=scale)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}


@dataclass
class EdgeFeatureTable:
    values: np.ndarray
    columns: List[EdgeDescriptor]
    covariates: np.ndarray
    labels: np.ndarray
    subject_ids: List[str] = field(default_factory=list)
    covariate_names: List[str] = field(default_factory=list)
    standardization: Optional[Standardization] = None

    def __post_init__(self):
        self.values = check_finite("edge values", np.atleast_2d(self.values))
        n = self.values.shape[0]
        self.covariates = check_finite(
            "covariates", np.asarray(self.covariates, dtype=float).reshape(n, -1)
        )
        self.labels = np.asarray(self.labels, dtype=float)
        if not self.subject_ids:
            self.subject_ids = [str(i) for i in range(n)]
        if not self.covariate_names:
            self.covariate_names = [f"c{j}" for j in range(self.covariates.shape[1])]
        if self.values.shape[1] != len(self.columns):
            raise ValidationError("number of descriptors does not match the edge columns")
        if len(set(self.columns)) != len(self.columns):
            raise ValidationError("edge descriptors must be unique")
        if any(c.k >= c.l for c in self.columns):
            raise ValidationError("every node pair must satisfy k < l")
        if len(self.labels) != n or len(self.subject_ids) != n:
            raise ValidationError("labels and subject ids must have one entry per subject")
        if len(self.covariate_names) != self.covariates.shape[1]:
            raise ValidationError("one name per covariate column required")
        # NaN marks a prediction-only subject
        check_labels(self.labels[~np.isnan(self.labels)])

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def q(self) -> int:
        return self.values.shape[1]

    @property
    def c(self) -> int:
        return self.covariates.shape[1]

    @property
    def p(self) -> int:
        return self.q + self.c

    def design(self) -> np.ndarray:
        """u_i = [edges; covariates]"""
        return np.hstack([self.values, self.covariates])

    def coefficient_names(self) -> List[str]:
        return [c.name() for c in self.columns] + list(self.covariate_names)

    def subset(self, rows) -> "EdgeFeatureTable":
        rows = np.asarray(rows)
        return replace(
            self,
            values=self.values[rows],
            covariates=self.covariates[rows],
            labels=self.labels[rows],
            subject_ids=[self.subject_ids[i] for i in rows],
        )

    def with_intercept(self) -> "EdgeFeatureTable":
        return replace(
            self,
            covariates=np.hstack([self.covariates, np.ones((self.n, 1))]),
            covariate_names=list(self.covariate_names) + ["intercept"],
            standardization=None,
        )


@dataclass
class DynamicFeatureSet:
    method: str
    tables: List[np.ndarray]
    columns: List[EdgeDescriptor]
    subject_ids: List[str] = field(default_factory=list)
    # principal directions (R x L) for the pca method
    components: Optional[np.ndarray] = None

    def __post_init__(self):
        self.tables = [check_finite("dynamic features", t) for t in self.tables]
        shapes = {t.shape for t in self.tables}
        if len(shapes) != 1:
            raise ValidationError("all feature tables must share one shape")
        if self.tables[0].shape[1] != len(self.columns):
            raise ValidationError("descriptor count does not match the feature tables")
        if self.method == "manual" and len(self.tables) != 3:
            raise ValidationError("the manual method has exactly three features")
        if not self.subject_ids:
            self.subject_ids = [str(i) for i in range(self.n)]

    @property
    def r(self) -> int:
        return len(self.tables)

    @property
    def n(self) -> int:
        return self.tables[0].shape[0]

    @property
    def q(self) -> int:
        return self.tables[0].shape[1]

    def stacked(self) -> np.ndarray:
        """N x Q x R"""
        return np.stack(self.tables, axis=2)

    def select_columns(self, keep) -> "DynamicFeatureSet":
        keep = np.asarray(keep)
        return replace(
            self,
            tables=[t[:, keep] for t in self.tables],
            columns=[self.columns[j] for j in keep],
        )

    def subset(self, rows) -> "DynamicFeatureSet":
        rows = np.asarray(rows)
        return replace(
            self,
            tables=[t[rows] for t in self.tables],
            subject_ids=[self.subject_ids[i] for i in rows],
        )


def edge_descriptors(v: int, session: str = "", feature: int = 0) -> List[EdgeDescriptor]:
    iu, ju = np.triu_indices(v, k=1)
    return [EdgeDescriptor(int(k), int(l), session, feature) for k, l in zip(iu, ju)]


def vectorize_upper_triangle(matrix: np.ndarray) -> Tuple[np.ndarray, List[EdgeDescriptor]]:
    """Row-major upper triangle (0,1),(0,2),...,(V-2,V-1)."""
    matrix = np.asarray(matrix, dtype=float)
    if not is_symmetric(matrix):
        raise ValidationError("matrix is not symmetric to 1e-10")
    v = matrix.shape[0]
    return matrix[np.triu_indices(v, k=1)], edge_descriptors(v)


def matrixify_upper_triangle(vector: np.ndarray, v: int, diagonal: float = 0.0) -> np.ndarray:
    vector = np.asarray(vector, dtype=float)
    if len(vector) != v * (v - 1) // 2:
        raise ValidationError(f"expected {v * (v - 1) // 2} edges for V={v}, got {len(vector)}")
    m = np.zeros((v, v))
    m[np.triu_indices(v, k=1)] = vector
    m = m + m.T
    np.fill_diagonal(m, diagonal)
    return m


def screen_edges(edges: np.ndarray, sd_threshold: float = 0.01) -> np.ndarray:
    """Indices of columns whose across-subject sd exceeds the threshold.

    Pass the training subjects only.
    """
    edges = np.atleast_2d(np.asarray(edges, dtype=float))
    if edges.shape[0] < 2:
        raise ValidationError("screening needs at least two subjects")
    sd = edges.std(axis=0, ddof=1)
    # sd equal to the threshold up to rounding counts as "<="
    keep = (sd > sd_threshold) & ~np.isclose(sd, sd_threshold, rtol=1e-12, atol=0.0)
    retained = np.flatnonzero(keep)
    LOG.d("screening kept %s of %s edges at sd > %s", len(retained), edges.shape[1], sd_threshold)
    if len(retained) == 0:
        raise ScreeningError(
            f"no edge has sd above {sd_threshold}; lower sd_threshold to retain edges"
        )
    return retained


def extract_manual_features(series: np.ndarray) -> np.ndarray:
    """(mean, variation, stability) along the last axis.

    stability = 1 / (1 + mean |successive difference|): 1 for a constant
    series, decreasing as the series jumps around.
    """
    series = np.asarray(series, dtype=float)
    if series.shape[-1] < 2:
        raise ValidationError("manual features need a series of length >= 2")
    mean = series.mean(axis=-1)
    variation = series.std(axis=-1, ddof=1)
    stability = 1.0 / (1.0 + np.abs(np.diff(series, axis=-1)).mean(axis=-1))
    return np.stack([mean, variation, stability], axis=-1)


def manual_feature_set(
    edge_series: np.ndarray, columns: List[EdgeDescriptor], subject_ids=None
) -> DynamicFeatureSet:
    """edge_series: N x Q x L window correlations"""
    feats = extract_manual_features(edge_series)
    tables = [feats[:, :, r] for r in range(3)]
    return DynamicFeatureSet(
        method="manual",
        tables=tables,
        columns=list(columns),
        subject_ids=list(subject_ids or []),
    )


def extract_pca_features(
    edge_series: np.ndarray,
    columns: List[EdgeDescriptor],
    variance_target: float = 0.95,
    subject_ids=None,
    fit_rows=None,
) -> DynamicFeatureSet:
    """Principal directions of the (subject x edge) by window-index stack.

    R is the smallest count whose cumulative explained variance reaches
    variance_target; a rank-0 stack gives R = 1 with zero scores. With
    fit_rows the directions come from those subjects only and every subject
    is scored on them.
    """
    edge_series = np.asarray(edge_series, dtype=float)
    if edge_series.ndim != 3:
        raise ValidationError("edge series must be N x Q x L")
    n, q, length = edge_series.shape
    stack = edge_series.reshape(n * q, length)
    if fit_rows is None:
        fit_stack = stack
    else:
        fit_stack = edge_series[np.asarray(fit_rows, dtype=int)].reshape(-1, length)
    if fit_stack.shape[0] < 2:
        raise ValidationError("PCA features need at least two series")
    centered = fit_stack - fit_stack.mean(axis=0)
    if np.allclose(centered, 0.0):
        LOG.warning("window series have no variation, using one zero-valued PCA feature")
        tables = [np.zeros((n, q))]
        components = np.zeros((1, length))
    else:
        pca = PCA(svd_solver="full").fit(fit_stack)
        ratio = np.cumsum(pca.explained_variance_ratio_)
        r = int(np.searchsorted(ratio, variance_target - 1e-12, side="left")) + 1
        r = min(r, len(ratio))
        scores = pca.transform(stack)[:, :r]
        tables = [scores[:, j].reshape(n, q) for j in range(r)]
        components = pca.components_[:r]
        LOG.d("PCA keeps %s components, %.3f of the variance", r, ratio[r - 1])
    return DynamicFeatureSet(
        method="pca",
        tables=tables,
        columns=list(columns),
        subject_ids=list(subject_ids or []),
        components=components,
    )


def assemble_design(
    edge_values: np.ndarray,
    columns: List[EdgeDescriptor],
    covariates: Optional[np.ndarray],
    labels: Sequence[float],
    subject_ids: Optional[Sequence[str]] = None,
    covariate_names: Optional[Sequence[str]] = None,
    standardize: bool = True,
    train_rows=None,
    standardization: Optional[Standardization] = None,
) -> EdgeFeatureTable:
    """Concatenate edges then covariates. With standardize, columns are
    z-scored using statistics of train_rows (all rows by default), or the
    given standardization when one is passed in (validation / test rows)."""
    edge_values = check_finite("edge values", np.atleast_2d(edge_values))
    n = edge_values.shape[0]
    if covariates is None:
        covariates = np.zeros((n, 0))
    covariates = np.asarray(covariates, dtype=float)
    if covariates.ndim == 1:
        covariates = covariates.reshape(n, -1) if covariates.size else np.zeros((n, 0))
    if covariates.shape[0] != n or len(labels) != n:
        raise ValidationError(
            f"mismatched subject counts: edges {n}, covariates {covariates.shape[0]}, labels {len(labels)}"
        )
    covariates = check_finite("covariates", covariates)

    full = np.hstack([edge_values, covariates])
    if standardize:
        if standardization is None:
            rows = np.arange(n) if train_rows is None else np.asarray(train_rows)
            standardization = Standardization.fit(full[rows])
        full = standardization.apply(full)
    else:
        standardization = None

    q = edge_values.shape[1]
    return EdgeFeatureTable(
        values=full[:, :q],
        columns=list(columns),
        covariates=full[:, q:],
        labels=np.asarray(labels, dtype=float),
        subject_ids=list(subject_ids or []),
        covariate_names=list(covariate_names or []),
        standardization=standardization,
    )


def multisession_union(
    retained_a: Sequence[int],
    retained_b: Sequence[int],
    edges_a: np.ndarray,
    edges_b: np.ndarray,
    columns: List[EdgeDescriptor],
    session_tags: Tuple[str, str] = ("A", "B"),
) -> Tuple[np.ndarray, List[EdgeDescriptor]]:
    """Session-A features for the union of both retained sets, then
    session-B features for the same union."""
    edges_a = np.atleast_2d(edges_a)
    edges_b = np.atleast_2d(edges_b)
    if edges_a.shape != edges_b.shape or edges_a.shape[1] != len(columns):
        raise ValidationError("both sessions must be indexed on the same node pairs")
    if edges_a.shape[0] == 0:
        raise ValidationError("no subjects")
    union = np.union1d(np.asarray(retained_a, dtype=int), np.asarray(retained_b, dtype=int))
    if len(union) and (union.min() < 0 or union.max() >= len(columns)):
        raise ValidationError("retained index outside the node-pair universe")
    values = np.hstack([edges_a[:, union], edges_b[:, union]])
    tag_a, tag_b = session_tags
    descriptors = [replace(columns[j], session=tag_a) for j in union] + [
        replace(columns[j], session=tag_b) for j in union
    ]
    return values, descriptors


def label_from_extremes(
    scores: Sequence[float], subject_ids: Sequence[str], zeta: float
) -> Tuple[List[str], np.ndarray]:
    """Top ceil(zeta N) scores get +1, bottom ceil(zeta N) get -1, the rest
    are dropped. Ties are broken by ascending subject id."""
    scores = check_finite("scores", scores)
    n = len(scores)
    if len(subject_ids) != n:
        raise ValidationError("one subject id per score required")
    if not 0 < zeta <= 0.5:
        raise ValidationError(f"zeta must be in (0, 0.5], got {zeta}")
    # tolerate zeta * N landing a hair above an integer
    k = math.ceil(round(zeta * n, 9))
    if k < 1 or 2 * k > n:
        raise ValidationError(f"{n} subjects cannot give {k} per class")

    # the lower id takes a boundary slot at either end; the top is filled
    # first and the bottom from what is left, so the classes stay disjoint
    high = sorted(range(n), key=lambda i: (-scores[i], subject_ids[i]))[:k]
    taken = set(high)
    rest = [i for i in range(n) if i not in taken]
    low = sorted(rest, key=lambda i: (scores[i], subject_ids[i]))[:k]
    chosen = sorted(high) + sorted(low)
    ids = [subject_ids[i] for i in chosen]
    labels = np.array([1.0] * k + [-1.0] * k)
    return ids, labels


def stack_edge_vectors(matrices: Sequence[np.ndarray]) -> Tuple[np.ndarray, List[EdgeDescriptor]]:
    """One row of upper-triangle edges per subject network."""
    if not matrices:
        raise ValidationError("no networks to vectorize")
    rows = []
    columns = None
    for m in matrices:
        vector, descriptors = vectorize_upper_triangle(m)
        if columns is not None and len(descriptors) != len(columns):
            raise ValidationError("every network must have the same number of regions")
        columns = descriptors
        rows.append(vector)
    return np.vstack(rows), columns


def extract_dynamic_features(
    edge_series: np.ndarray,
    columns: List[EdgeDescriptor],
    method: str = "manual",
    variance_target: float = 0.95,
    subject_ids=None,
    fit_rows=None,
) -> DynamicFeatureSet:
    """edge_series: N x Q x L window correlations per subject and edge.

    fit_rows restricts the PCA directions to the training subjects; manual
    features are per subject and ignore it.
    """
    if method == "manual":
        return manual_feature_set(edge_series, columns, subject_ids)
    if method == "pca":
        return extract_pca_features(edge_series, columns, variance_target, subject_ids, fit_rows)
    raise ValidationError(f"unknown feature method {method}")


def screen_dynamic(features: DynamicFeatureSet, sd_threshold: float = 0.01, train_rows=None):
    """Screen on the first table (the mean for manual features) and keep the
    same columns in every table."""
    first = features.tables[0]
    if train_rows is not None:
        first = first[np.asarray(train_rows)]
    return screen_edges(first, sd_threshold)


def standardize_dynamic(
    features: DynamicFeatureSet,
    covariates: np.ndarray,
    reference: Optional[List[Standardization]] = None,
):
    """Z-score every table and the covariates column-wise.

    Returns (features, covariates, statistics) where statistics holds one
    Standardization per table followed by the covariates' one; pass the
    training statistics as reference for held-out subjects.
    """
    covariates = np.asarray(covariates, dtype=float).reshape(features.n, -1)
    blocks = list(features.tables) + [covariates]
    if reference is None:
        reference = [Standardization.fit(b) for b in blocks]
    if len(reference) != len(blocks):
        raise ValidationError("reference statistics do not match the feature tables")
    scaled = [s.apply(b) for s, b in zip(reference, blocks)]
    return replace(features, tables=scaled[:-1]), scaled[-1], reference
