"""Survey-sampling estimators for single-stage, two-stage and nested samples.

Notation follows the usual design-based conventions: ``pi`` are first-order
inclusion probabilities, ``pi_joint`` second-order ones and
``Delta_ij = pi_ij - pi_i pi_j``.  Units are integer ids in ``[0, N)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import norm

Z_95 = 1.959964


# designs ---------------------------------------------------------------

@dataclass(frozen=True)
class InclusionDesign:
    """First and second order inclusion probabilities of one sampling stage.

    Build instances with :func:`bernoulli`, :func:`srswor`, :func:`census` or
    :func:`chunk_induced`.  For the chunk-induced design, units are clusters,
    ``chunk_of`` gives each cluster's chunk and the surviving chunks are an
    SRSWOR of ``n_sample`` out of ``n_chunks``.
    """

    kind: str
    n_population: int
    p: float | None = None
    n_sample: int | None = None
    chunk_of: np.ndarray | None = field(default=None, repr=False, compare=False)
    n_chunks: int | None = None
    scale: float = 1.0

    @property
    def fixed_size(self) -> bool:
        if self.kind in ("srswor", "census"):
            return True
        if self.kind == "bernoulli":
            return self.p == 1.0
        if self.kind == "chunk_induced":
            # sample size is fixed when every chunk holds the same number of clusters
            loads = np.bincount(self.chunk_of, minlength=self.n_chunks)
            return bool(np.all(loads == loads[0])) or self.n_sample == self.n_chunks
        return False

    def scaled(self, factor: float) -> "InclusionDesign":
        """Same design with every first-order probability multiplied by ``factor``."""
        return InclusionDesign(self.kind, self.n_population, self.p, self.n_sample,
                               self.chunk_of, self.n_chunks, self.scale * factor)

    def _base_pi(self) -> float:
        if self.kind == "bernoulli":
            return float(self.p)
        if self.kind == "srswor":
            return self.n_sample / self.n_population
        if self.kind == "census":
            return 1.0
        if self.kind == "chunk_induced":
            return self.n_sample / self.n_chunks
        raise ValueError(f"unknown design kind {self.kind}")

    def pi(self, units: Sequence[int] | np.ndarray) -> np.ndarray:
        units = np.asarray(units, dtype=np.int64)
        return np.full(units.shape, self._base_pi() * self.scale, dtype=float)

    def pi_joint(self, units: Sequence[int] | np.ndarray) -> np.ndarray:
        """Matrix of pi_ij over ``units`` (diagonal is pi_i)."""
        u = np.asarray(units, dtype=np.int64)
        n = len(u)
        if self.kind == "bernoulli":
            off = self.p ** 2
        elif self.kind == "srswor":
            N, k = self.n_population, self.n_sample
            off = k * (k - 1) / (N * (N - 1)) if N > 1 else 0.0
        elif self.kind == "census":
            off = 1.0
        elif self.kind == "chunk_induced":
            M, a = self.n_chunks, self.n_sample
            off = a * (a - 1) / (M * (M - 1)) if M > 1 else 0.0
        else:
            raise ValueError(f"unknown design kind {self.kind}")
        mat = np.full((n, n), off, dtype=float)
        if self.kind == "chunk_induced":
            same = self.chunk_of[u][:, None] == self.chunk_of[u][None, :]
            mat[same] = self._base_pi()
        np.fill_diagonal(mat, self._base_pi())
        if self.scale != 1.0:
            # joint probabilities scale with the square of a global thinning factor
            mat = mat * self.scale ** 2
            np.fill_diagonal(mat, self._base_pi() * self.scale)
        return mat

    def delta(self, units: Sequence[int] | np.ndarray) -> np.ndarray:
        p = self.pi(units)
        return self.pi_joint(units) - np.outer(p, p)


def bernoulli(N: int, p: float) -> InclusionDesign:
    if not 0 < p <= 1:
        raise ValueError("invalid inclusion probability")
    return InclusionDesign("bernoulli", int(N), p=float(p))


def srswor(n: int, N: int) -> InclusionDesign:
    if not 1 <= n <= N:
        raise ValueError(f"invalid SRSWOR size {n} of {N}")
    return InclusionDesign("srswor", int(N), n_sample=int(n))


def census(N: int) -> InclusionDesign:
    return InclusionDesign("census", int(N))


def chunk_induced(chunk_of: Sequence[int], n_chunks: int, surviving: int) -> InclusionDesign:
    """Cluster sample induced by an SRSWOR of ``surviving`` chunks out of ``n_chunks``."""
    chunk_of = np.asarray(chunk_of, dtype=np.int64)
    if not 1 <= surviving <= n_chunks:
        raise ValueError("invalid surviving chunk count")
    return InclusionDesign("chunk_induced", len(chunk_of), n_sample=int(surviving),
                           chunk_of=chunk_of, n_chunks=int(n_chunks))


# samples ----------------------------------------------------------------

@dataclass
class StageSample:
    """Sampled units of one stage.

    Exactly one of ``values`` (last stage) and ``subsamples`` (inner stage) is
    given; ``subsamples[i]`` is the next-stage sample drawn inside unit
    ``units[i]``.
    """

    units: np.ndarray
    design: InclusionDesign
    values: np.ndarray | None = None
    subsamples: list["StageSample"] | None = None

    def __post_init__(self) -> None:
        self.units = np.asarray(self.units, dtype=np.int64)
        if (self.values is None) == (self.subsamples is None):
            raise ValueError("give either values or subsamples")
        if self.values is not None:
            self.values = np.asarray(self.values, dtype=float)
            if self.values.shape != self.units.shape:
                raise ValueError("values and units differ in length")
        elif len(self.subsamples) != len(self.units):
            raise ValueError("one subsample per unit required")

    @property
    def depth(self) -> int:
        if self.values is not None:
            return 1
        return 1 + max((s.depth for s in self.subsamples), default=0)

    def pi(self) -> np.ndarray:
        p = self.design.pi(self.units)
        if np.any(p <= 0):
            raise ValueError("invalid inclusion probability")
        return p


@dataclass(frozen=True)
class Estimate:
    point: float
    variance: float
    ci_low: float
    ci_high: float
    level: float = 0.95
    clamped: bool = False


def z_value(level: float) -> float:
    if level == 0.95:
        return Z_95
    if not 0 < level < 1:
        raise ValueError("confidence level must lie in (0, 1)")
    return float(norm.ppf(0.5 + level / 2))


def confidence_interval(point: float, variance: float, level: float = 0.95) -> tuple[float, float]:
    half = z_value(level) * float(np.sqrt(max(variance, 0.0)))
    return point - half, point + half


def make_estimate(point: float, variance: float, level: float = 0.95) -> Estimate:
    """Clamp a negative variance estimate to zero and attach the normal interval."""
    clamped = variance < 0
    v = 0.0 if clamped else float(variance)
    lo, hi = confidence_interval(point, v, level)
    return Estimate(float(point), v, lo, hi, level, bool(clamped))


# single stage --------------------------------------------------------------

def _unit_totals(sample: StageSample) -> np.ndarray:
    if sample.values is not None:
        return sample.values
    return np.array([multi_stage_estimate(s) for s in sample.subsamples], dtype=float)


def ht_total(sample: StageSample) -> float:
    """Horvitz-Thompson total: sum of unit totals divided by their inclusion probabilities."""
    return float(np.sum(_unit_totals(sample) / sample.pi()))


def hajek_total(sample: StageSample, N: int) -> float:
    """Ratio form ``N * sum(t/pi) / sum(1/pi)``; unaffected by a common factor on all pi."""
    if len(sample.units) == 0:
        raise ValueError("no data")
    t = _unit_totals(sample)
    p = sample.pi()
    if np.all(p == p[0]):
        return float(N * np.sum(t) / len(t))
    return float(N * np.sum(t / p) / np.sum(1.0 / p))


def var_ht(values: Sequence[float], design: InclusionDesign) -> float:
    """Design variance of the HT total over a population of unit totals."""
    t = np.asarray(values, dtype=float)
    units = np.arange(len(t))
    y = t / design.pi(units)
    return float(y @ design.delta(units) @ y)


def _sampled_delta_ratio(sample: StageSample) -> np.ndarray:
    pij = sample.design.pi_joint(sample.units)
    if np.any(pij <= 0):
        raise ValueError("design degenerate")
    return sample.design.delta(sample.units) / pij


def var_ht_estimate(sample: StageSample) -> float:
    """Unbiased estimate of :func:`var_ht` from the sampled unit totals."""
    if len(sample.units) == 0:
        return 0.0
    y = _unit_totals(sample) / sample.pi()
    return float(y @ _sampled_delta_ratio(sample) @ y)


def var_fixed_size(values: Sequence[float], design: InclusionDesign) -> float:
    """Pairwise-difference variance form, valid for fixed-size designs only."""
    if not design.fixed_size:
        raise ValueError("design is not fixed-size")
    t = np.asarray(values, dtype=float)
    units = np.arange(len(t))
    y = t / design.pi(units)
    diff = (y[:, None] - y[None, :]) ** 2
    return float(-0.5 * np.sum(design.delta(units) * diff))


def var_fixed_size_estimate(sample: StageSample) -> float:
    if not sample.design.fixed_size:
        raise ValueError("design is not fixed-size")
    y = _unit_totals(sample) / sample.pi()
    diff = (y[:, None] - y[None, :]) ** 2
    return float(-0.5 * np.sum(_sampled_delta_ratio(sample) * diff))


def srswor_variance_estimate(values: Sequence[float], N: int) -> float:
    """Closed form ``N^2 (1 - n/N) s^2 / n`` of the HT variance estimate under SRSWOR."""
    t = np.asarray(values, dtype=float)
    n = len(t)
    if n == 0 or n == N:
        return 0.0
    if n == 1:
        return float((1 - 1 / N) * (N * t[0]) ** 2) if N > 1 else 0.0
    return float(N * N * (1 - n / N) * np.var(t, ddof=1) / n)


def bernoulli_variance_estimate(values: Sequence[float], p: float) -> float:
    t = np.asarray(values, dtype=float)
    return float(np.sum((1 - p) / p ** 2 * t ** 2))


# multi-stage ----------------------------------------------------------------

def multi_stage_estimate(sample: StageSample) -> float:
    """Recursive HT total; each unit's total is the estimate from its own subsample."""
    if len(sample.units) == 0:
        return 0.0
    return ht_total(sample)


def two_stage_estimate(sample: StageSample) -> float:
    if sample.subsamples is None or any(s.values is None for s in sample.subsamples):
        raise ValueError("two-stage sample needs a second-stage design per unit")
    return multi_stage_estimate(sample)


def two_stage_variance(clusters: Sequence[Sequence[float]], stage1: InclusionDesign,
                       stage2: Sequence[InclusionDesign]) -> float:
    """Variance of the two-stage total from the full population.

    The first term uses the true cluster totals; the second adds each
    cluster's within-cluster HT variance weighted by ``1 / pi_I``.
    """
    if len(stage2) != len(clusters):
        raise ValueError("missing second-stage design")
    c = np.array([np.sum(v) for v in clusters], dtype=float)
    v1 = var_ht(c, stage1)
    pi1 = stage1.pi(np.arange(len(c)))
    v2 = sum(var_ht(v, d) / p for v, d, p in zip(clusters, stage2, pi1))
    return float(v1 + v2)


def stage_variance_terms(sample: StageSample) -> list[float]:
    """Per-stage contributions of the nested variance estimator.

    Entry ``k`` is the stage-``k`` between-unit term, pushed up through the
    ``1 / pi`` weights of the enclosing stages.
    """
    if len(sample.units) == 0:
        return [0.0] * sample.depth
    terms = [var_ht_estimate(sample)]
    if sample.subsamples is None:
        return terms
    pi = sample.pi()
    inner: list[float] = []
    for sub, p in zip(sample.subsamples, pi):
        for k, val in enumerate(stage_variance_terms(sub)):
            if k == len(inner):
                inner.append(0.0)
            inner[k] += val / p
    return terms + inner


def two_stage_variance_estimate(sample: StageSample) -> float:
    if sample.subsamples is None:
        raise ValueError("missing second-stage design")
    return float(sum(stage_variance_terms(sample)[:2]))


def multi_stage_variance_estimate(sample: StageSample, truncate_at: int | None = None) -> tuple[float, bool]:
    """Sum of the first ``truncate_at`` stage terms, clamped at zero.

    Returns
    -------
    variance : float
    clamped : bool
        True when the raw sum was negative.
    """
    if truncate_at is not None and truncate_at < 1:
        raise ValueError("truncate_at must be at least 1")
    terms = stage_variance_terms(sample)
    raw = float(sum(terms if truncate_at is None else terms[:truncate_at]))
    return (0.0, True) if raw < 0 else (raw, False)


# ratios ---------------------------------------------------------------------

def ratio_estimate(sum_est: float, count_est: float, var_sum: float, var_count: float,
                   cov: float, level: float = 0.95) -> Estimate:
    """AVG as ``sum / count`` with the first-order Taylor variance.

    ``Var(R) ~ (V_y - 2 R C_yx + R^2 V_x) / X^2``, which equals the variance
    estimate of the residual totals ``y - R x`` divided by ``X^2``.
    """
    if count_est <= 0:
        raise ValueError("empty-domain average")
    r = sum_est / count_est
    var = (var_sum - 2 * r * cov + r * r * var_count) / count_est ** 2
    return make_estimate(r, var, level)


def linearized_residuals(y: np.ndarray, x: np.ndarray, ratio: float) -> np.ndarray:
    return np.asarray(y, dtype=float) - ratio * np.asarray(x, dtype=float)
