"""Classification metrics, credible-interval selection, split reproducibility
and validation-driven choice of network density / window length."""
import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from sklearn.model_selection import StratifiedShuffleSplit

from dplsvm.errors import DPLSVMError, SelectionError, ValidationError
from dplsvm.log import LOG
from dplsvm.svm_static import PosteriorDraws, fit_static
from dplsvm.utils import check_both_classes, check_labels


@dataclass
class MetricsReport:
    mc: float
    f1: float
    informedness: float
    precision: float
    recall: float
    specificity: float
    tp: int
    fp: int
    tn: int
    fn: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _ratio(num, den) -> float:
    return num / den if den else 0.0


def metrics(truth, predicted, positive: float = 1.0) -> MetricsReport:
    truth = check_labels(truth)
    predicted = check_labels(predicted)
    if len(truth) == 0:
        raise ValidationError("metrics of an empty prediction")
    if len(truth) != len(predicted):
        raise ValidationError(f"{len(truth)} true labels but {len(predicted)} predictions")

    pos_true = truth == positive
    pos_pred = predicted == positive
    tp = int(np.sum(pos_true & pos_pred))
    fp = int(np.sum(~pos_true & pos_pred))
    tn = int(np.sum(~pos_true & ~pos_pred))
    fn = int(np.sum(pos_true & ~pos_pred))

    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    specificity = _ratio(tn, tn + fp)
    return MetricsReport(
        mc=(fp + fn) / len(truth),
        f1=_ratio(2 * precision * recall, precision + recall),
        informedness=recall + specificity - 1.0,
        precision=precision,
        recall=recall,
        specificity=specificity,
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
    )


@dataclass
class SelectionReport:
    names: List[str]
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    significant: np.ndarray
    alpha: float
    alpha_used: float
    adjust: str = "none"

    @property
    def selected(self) -> List[int]:
        return [int(j) for j in np.flatnonzero(self.significant)]

    def to_records(self) -> List[dict]:
        return [
            {
                "name": name,
                "mean": float(self.mean[j]),
                "lower": float(self.lower[j]),
                "upper": float(self.upper[j]),
                "significant": bool(self.significant[j]),
            }
            for j, name in enumerate(self.names)
        ]

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "alpha_used": self.alpha_used,
            "adjust": self.adjust,
            "features": self.to_records(),
        }


def credible_select(draws, alpha: float = 0.05, adjust: str = "none") -> SelectionReport:
    """Empirical (alpha/2, 1 - alpha/2) quantile intervals of every identified
    coefficient; significant when the interval excludes 0."""
    if not 0 < alpha < 1:
        raise ValidationError(f"alpha must be in (0, 1), got {alpha}")
    if adjust not in ("none", "bonferroni"):
        raise ValidationError(f"unknown adjustment {adjust}")
    if isinstance(draws, PosteriorDraws):
        coef = draws.flat()
    else:
        coef = np.atleast_2d(np.asarray(draws, dtype=float))
    if coef.shape[0] == 0:
        raise ValidationError("no posterior draws")
    k = coef.shape[1]
    alpha_used = alpha / k if adjust == "bonferroni" and k else alpha
    lower = np.quantile(coef, alpha_used / 2, axis=0)
    upper = np.quantile(coef, 1 - alpha_used / 2, axis=0)
    names = list(getattr(draws, "coefficient_names", []) or [str(j) for j in range(k)])
    return SelectionReport(
        names=names,
        mean=coef.mean(axis=0),
        lower=lower,
        upper=upper,
        significant=(lower > 0) | (upper < 0),
        alpha=alpha,
        alpha_used=alpha_used,
        adjust=adjust,
    )


def stratified_splits(labels, n_splits: int, train_fraction: float, seed: int):
    """Seeded stratified shuffle splits as (train rows, held-out rows)."""
    labels = check_both_classes(labels)
    if not 0 < train_fraction < 1:
        raise ValidationError(f"train_fraction must be in (0, 1), got {train_fraction}")
    splitter = StratifiedShuffleSplit(
        n_splits=n_splits, train_size=train_fraction, random_state=seed % (2**32)
    )
    try:
        splits = list(splitter.split(np.zeros(len(labels)), labels))
    except ValueError as e:
        raise ValidationError(f"cannot stratify {len(labels)} subjects: {e}")
    for train, _ in splits:
        if len(np.unique(labels[train])) < 2:
            raise ValidationError("a split leaves a single-class training set")
    return splits


@dataclass
class ReproducibilityReport:
    features: List[int]
    names: List[str]
    frequency: np.ndarray
    per_split: List[List[int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "features": self.features,
            "names": [self.names[j] for j in self.features],
            "frequency": {name: float(f) for name, f in zip(self.names, self.frequency)},
            "per_split": self.per_split,
        }


def reproducible_features(
    table,
    hyper,
    n_splits: int = 10,
    train_fraction: float = 0.9,
    alpha: float = 0.05,
    adjust: str = "none",
    fit: Optional[Callable] = None,
) -> ReproducibilityReport:
    """Features significant in the fit of every training split.

    fit(table, hyper) -> PosteriorDraws, fit_static by default. Split k is
    fitted with seed hyper.seed + k + 1.
    """
    if n_splits < 2:
        raise ValidationError("reproducibility needs at least two splits")
    if fit is None:
        fit = fit_static

    splits = stratified_splits(table.labels, n_splits, train_fraction, hyper.seed)

    def _run(k):
        train, _ = splits[k]
        draws = fit(table.subset(train), dataclasses.replace(hyper, seed=hyper.seed + k + 1))
        chosen = credible_select(draws, alpha, adjust).selected
        LOG.d("split %s: %s significant features", k, len(chosen))
        return chosen

    workers = min(getattr(hyper, "threads", 1), n_splits)
    if workers <= 1:
        per_split = [_run(k) for k in range(n_splits)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_split = list(pool.map(_run, range(n_splits)))

    names = table.coefficient_names()
    counts = np.zeros(len(names))
    for chosen in per_split:
        counts[chosen] += 1
    common = set(per_split[0]).intersection(*per_split[1:])
    return ReproducibilityReport(
        features=sorted(common),
        names=names,
        frequency=counts / n_splits,
        per_split=per_split,
    )


@dataclass
class ValidationSelection:
    chosen: float
    reports: Dict[float, MetricsReport]
    failures: Dict[float, str] = field(default_factory=dict)

    def curve(self) -> List[dict]:
        return [
            {"setting": s, "mc": r.mc, "f1": r.f1, "informedness": r.informedness}
            for s, r in sorted(self.reports.items())
        ]


def select_by_validation(
    candidates: Sequence[float],
    evaluate: Callable[[float], MetricsReport],
    prefer: str = "smaller",
    threads: int = 1,
) -> ValidationSelection:
    """Pick the candidate with the lowest validation misclassification.

    evaluate(setting) refits on the training rows and scores the validation
    rows. Ties go to the smaller setting (sparser density) with
    prefer="smaller" and to the larger one (longer window) with "larger".
    """
    candidates = list(candidates)
    if not candidates:
        raise ValidationError("no candidate settings")
    if prefer not in ("smaller", "larger"):
        raise ValidationError(f"prefer must be smaller or larger, got {prefer}")

    def _try(setting):
        try:
            return setting, evaluate(setting), None
        except DPLSVMError as e:
            LOG.warning("candidate %s failed: %s", setting, e)
            return setting, None, str(e)

    workers = min(threads, len(candidates))
    if workers <= 1:
        outcomes = [_try(s) for s in candidates]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_try, candidates))

    reports = {s: rep for s, rep, _ in outcomes if rep is not None}
    failures = {s: err for s, _, err in outcomes if err is not None}
    if not reports:
        raise SelectionError(
            "every candidate failed: " + "; ".join(f"{s}: {e}" for s, e in failures.items())
        )
    sign = 1.0 if prefer == "smaller" else -1.0
    chosen = min(reports, key=lambda s: (reports[s].mc, sign * s))
    LOG.d("validation picks %s with mc %.4f", chosen, reports[chosen].mc)
    return ValidationSelection(chosen=chosen, reports=reports, failures=failures)
