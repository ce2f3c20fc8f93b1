"""Seedable random variates for the Gibbs samplers.

Every chain owns one RandomStream. Streams are Philox (counter-based) bit
generators keyed by (seed, stream id), so chains never share state and a run
is reproducible from its seed alone.
"""
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg
from scipy.linalg import lapack
from scipy.stats import wishart

from dplsvm.errors import NotPositiveDefiniteError, SamplerError, ValidationError


def _check_positive(**kw):
    for name, value in kw.items():
        value = np.asarray(value, dtype=float)
        if not np.all(np.isfinite(value)) or np.any(value <= 0):
            raise ValidationError(f"{name} must be finite and positive, got {value}")


@dataclass
class RandomStream:
    seed: int
    stream_id: int = 0
    gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self.gen = np.random.Generator(np.random.Philox(seq))

    def spawn(self, stream_id: int) -> "RandomStream":
        return RandomStream(self.seed, stream_id)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def exponential(self, rate, size=None):
        _check_positive(rate=rate)
        return self.gen.exponential(1.0 / np.asarray(rate, dtype=float), size)

    def gamma(self, shape, rate, size=None):
        """Gamma with (shape, rate): mean shape / rate"""
        _check_positive(shape=shape, rate=rate)
        return self.gen.gamma(shape, 1.0 / np.asarray(rate, dtype=float), size)

    def inverse_gamma(self, shape, scale, size=None):
        """Inverse-gamma with (shape, scale): mean scale / (shape - 1)"""
        _check_positive(shape=shape, scale=scale)
        return np.asarray(scale, dtype=float) / self.gen.gamma(shape, 1.0, size)

    def beta(self, a, b, size=None):
        _check_positive(a=a, b=b)
        return self.gen.beta(a, b, size)

    def inverse_gaussian(self, mean, shape, size=None):
        """Inverse Gaussian via a chi-square transform and a uniform selection
        between the two roots.

        numpy's wald subtracts two numbers of order mean**2 / shape and loses
        every digit once the mean reaches ~1e8, which the clamped margins do.
        Here the small root is computed as mean**2 / large root instead.
        """
        _check_positive(mean=mean, shape=shape)
        mean = np.asarray(mean, dtype=float)
        shape = np.asarray(shape, dtype=float)
        if size is None:
            size = np.broadcast(mean, shape).shape
        y = self.gen.standard_normal(size) ** 2
        my = mean * y
        large = mean + mean * my / (2 * shape) + mean / (2 * shape) * np.sqrt(
            4 * shape * my + my * my
        )
        small = mean * mean / large
        u = self.gen.uniform(size=size)
        x = np.where(u <= mean / (mean + small), small, large)
        if x.ndim == 0:
            return float(x)
        return x

    def mvn_precision(self, h, A):
        """Draw from N(A^-1 h, A^-1) with one Cholesky factor of A and
        triangular solves; A^-1 is never formed."""
        h = np.asarray(h, dtype=float)
        A = np.asarray(A, dtype=float)
        if A.shape != (len(h), len(h)):
            raise ValidationError(f"precision shape {A.shape} does not match {len(h)}")
        if len(h) == 0:
            return np.zeros(0)
        chol, info = lapack.dpotrf(A, lower=1, clean=1)
        if info != 0:
            raise NotPositiveDefiniteError(
                f"precision matrix not positive definite at pivot {info}",
                pivot=int(info),
            )
        w = linalg.solve_triangular(chol, h, lower=True)
        mean = linalg.solve_triangular(chol, w, lower=True, trans="T")
        z = self.gen.standard_normal(len(h))
        return mean + linalg.solve_triangular(chol, z, lower=True, trans="T")

    def wishart(self, df, scale):
        scale = np.atleast_2d(np.asarray(scale, dtype=float))
        dim = scale.shape[0]
        if df < dim:
            raise ValidationError(f"Wishart df {df} smaller than dimension {dim}")
        w = wishart.rvs(df=df, scale=scale, random_state=self.gen)
        return np.atleast_2d(w)

    def inverse_wishart(self, df, scale):
        """Inverse-Wishart(df, scale) as the inverse of a Wishart(df, scale^-1)
        draw; mean scale / (df - dim - 1)."""
        scale = np.atleast_2d(np.asarray(scale, dtype=float))
        w = self.wishart(df, np.linalg.inv(scale))
        return np.linalg.inv(w)

    def choice_from_weights(self, weights: np.ndarray) -> np.ndarray:
        """One categorical draw per row of a non-negative weight matrix."""
        cum = np.cumsum(weights, axis=1)
        u = self.gen.uniform(size=weights.shape[0]) * cum[:, -1]
        return np.minimum((cum <= u[:, None]).sum(axis=1), weights.shape[1] - 1)

    def slice_sample(
        self,
        log_density: Callable[[float], float],
        x0: float,
        width: float = 1.0,
        max_doublings: int = 100,
    ) -> float:
        """One univariate slice-sampling update with the doubling procedure
        and its acceptance check (Neal, 2003)."""
        log_y = log_density(x0) - self.gen.exponential()
        u = self.gen.uniform()
        left = x0 - width * u
        right = left + width
        k = 0
        while log_y < log_density(left) or log_y < log_density(right):
            k += 1
            if k > max_doublings:
                raise SamplerError(f"slice interval still open after {max_doublings} doublings")
            if self.gen.uniform() < 0.5:
                left -= right - left
            else:
                right += right - left

        lo, hi = left, right
        while True:
            x1 = lo + self.gen.uniform() * (hi - lo)
            if log_y < log_density(x1) and _doubling_accepts(
                log_density, x0, x1, log_y, left, right, width
            ):
                return x1
            if x1 < x0:
                lo = x1
            else:
                hi = x1


def _doubling_accepts(log_density, x0, x1, log_y, left, right, width) -> bool:
    differ = False
    while right - left > 1.1 * width:
        mid = 0.5 * (left + right)
        if (x0 < mid) != (x1 < mid):
            differ = True
        if x1 < mid:
            right = mid
        else:
            left = mid
        if differ and log_y >= log_density(left) and log_y >= log_density(right):
            return False
    return True


def chain_streams(seed: int, n_chains: int, offset: int = 0):
    return [RandomStream(seed, offset + i) for i in range(n_chains)]
