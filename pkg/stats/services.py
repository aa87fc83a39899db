"""
Stats app services

Gaussian and two-component mixture algebra. Every execution-time law the
scheduler and simulator use is a Gaussian or a pair of them, so the whole
toolkit funnels through these helpers.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, Optional, Union

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

logger = logging.getLogger(__name__)

MIN_FIT_SAMPLES = 4
EM_MAX_ITERATIONS = 100
EM_TOLERANCE = 1e-8
# Keeps a collapsing component from producing infinite densities mid-fit.
VARIANCE_FLOOR_RATIO = 1e-9
ONE_COMPONENT_PARAMS = 2
TWO_COMPONENT_PARAMS = 5


class StatsError(Exception):
    """Domain-specific exception for distribution algebra failures."""


class StatsDomainError(StatsError):
    """An argument falls outside the domain of the operation."""


class MissingComponentError(StatsError):
    """A mixture does not carry the requested component."""


class InsufficientDataError(StatsError):
    """Not enough samples to fit a mixture."""


class InvalidMixtureError(StatsError):
    """A mixture violates the late-dominates-early rule."""


class Component(str, Enum):
    EARLY = 'early'
    LATE = 'late'
    LOCAL_EARLY = 'local_early'
    LOCAL_LATE = 'local_late'


@dataclass(frozen=True)
class Gaussian:
    """Normal law over durations in milliseconds."""

    mean: float
    variance: float = 0.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.mean) or not math.isfinite(self.variance):
            raise StatsDomainError(f"Gaussian parameters must be finite, got {self.mean}, {self.variance}")
        if self.variance < 0:
            raise StatsDomainError(f"Gaussian variance must be >= 0, got {self.variance}")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def quantile(self, p: float) -> float:
        return gaussian_quantile(self, p)

    def cdf(self, t: float) -> float:
        return gaussian_cdf(self, t)

    def __add__(self, other: 'Gaussian') -> 'Gaussian':
        return sum_gaussians(self, other)

    def to_dict(self) -> Dict[str, float]:
        return {'mean': self.mean, 'variance': self.variance}


@dataclass(frozen=True)
class MixtureModel:
    """
    A cluster's execution-time law.

    ``early``/``late`` model typical and straggling iterations of the
    pre-sync work; the optional local components model local tasks run
    while a sync option is skipped.
    """

    early: Gaussian
    late: Gaussian
    weight_early: float = 0.5
    local_early: Optional[Gaussian] = None
    local_late: Optional[Gaussian] = None
    local_weight_early: float = 0.5

    def __post_init__(self) -> None:
        for name in ('weight_early', 'local_weight_early'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise StatsDomainError(f"{name} must be in [0, 1], got {value}")

    def component(self, name: Union[Component, str]) -> Gaussian:
        key = Component(name)
        gaussian = getattr(self, key.value)
        if gaussian is None:
            raise MissingComponentError(f"Mixture has no {key.value} component")
        return gaussian

    @property
    def has_local(self) -> bool:
        return self.local_early is not None and self.local_late is not None

    def validation_errors(self) -> list:
        errors = []
        pairs = [('early', 'late', self.early, self.late)]
        if self.has_local:
            pairs.append(('local_early', 'local_late', self.local_early, self.local_late))
            if self.local_early.mean < 0:
                errors.append("local_early.mean must be >= 0")
        for low_name, high_name, low, high in pairs:
            if high.mean < low.mean:
                errors.append(f"{high_name}.mean ({high.mean}) < {low_name}.mean ({low.mean})")
            if high.variance < low.variance:
                errors.append(
                    f"{high_name}.variance ({high.variance}) < {low_name}.variance ({low.variance})"
                )
        return errors

    def validate(self) -> 'MixtureModel':
        errors = self.validation_errors()
        if errors:
            raise InvalidMixtureError("; ".join(errors))
        return self

    def monotone(self) -> 'MixtureModel':
        """Lift late components so they dominate the early ones in variance."""
        late = self.late
        if late.variance < self.early.variance:
            late = Gaussian(late.mean, self.early.variance)
        local_late = self.local_late
        if self.has_local and local_late.variance < self.local_early.variance:
            local_late = Gaussian(local_late.mean, self.local_early.variance)
        if late is self.late and local_late is self.local_late:
            return self
        logger.debug("Lifted late variance to keep mixture monotone")
        return replace(self, late=late, local_late=local_late)

    def with_local(self, local: 'MixtureModel') -> 'MixtureModel':
        return replace(
            self,
            local_early=local.early,
            local_late=local.late,
            local_weight_early=local.weight_early,
        )

    def to_dict(self) -> Dict[str, object]:
        payload: Dict[str, object] = {
            'early': self.early.to_dict(),
            'late': self.late.to_dict(),
            'weight_early': self.weight_early,
        }
        if self.has_local:
            payload['local_early'] = self.local_early.to_dict()
            payload['local_late'] = self.local_late.to_dict()
            payload['local_weight_early'] = self.local_weight_early
        return payload


# --------------------------------------------------------------------------- #
# Quantiles and sums                                                          #
# --------------------------------------------------------------------------- #


def _check_probability(p: float) -> None:
    if not 0.0 < p < 1.0:
        raise StatsDomainError(f"Probability must lie in (0, 1), got {p}")


def gaussian_quantile(g: Gaussian, p: float) -> float:
    _check_probability(p)
    if g.variance == 0:
        return g.mean
    return float(norm.ppf(p, loc=g.mean, scale=g.std))


def gaussian_quantiles(g: Gaussian, ps: Iterable[float]) -> np.ndarray:
    """Vectorized ``gaussian_quantile`` over an array of percentiles."""
    values = np.asarray(ps, dtype=float)
    if values.size and (np.any(values <= 0.0) or np.any(values >= 1.0)):
        raise StatsDomainError("Probabilities must lie in (0, 1)")
    if g.variance == 0:
        return np.full(values.shape, g.mean)
    return norm.ppf(values, loc=g.mean, scale=g.std)


def gaussian_cdf(g: Gaussian, t: float) -> float:
    if g.variance == 0:
        return 1.0 if t >= g.mean else 0.0
    return float(norm.cdf(t, loc=g.mean, scale=g.std))


def sum_gaussians(a: Gaussian, b: Gaussian) -> Gaussian:
    return Gaussian(a.mean + b.mean, a.variance + b.variance)


def mixture_quantile(m: MixtureModel, component: Union[Component, str], p: float) -> float:
    """Quantile of one named component; weights never blend in."""
    return gaussian_quantile(m.component(component), p)


# --------------------------------------------------------------------------- #
# Sampling                                                                    #
# --------------------------------------------------------------------------- #


def sample(g: Gaussian, rng: np.random.Generator) -> float:
    """One draw clamped at zero. Always consumes exactly one normal variate."""
    z = rng.standard_normal()
    return max(0.0, g.mean + g.std * float(z))


def sample_many(g: Gaussian, rng: np.random.Generator, size) -> np.ndarray:
    z = rng.standard_normal(size)
    return np.maximum(0.0, g.mean + g.std * z)


# --------------------------------------------------------------------------- #
# Fitting                                                                     #
# --------------------------------------------------------------------------- #


@dataclass
class _Group:
    values: np.ndarray = field(repr=False)

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def variance(self) -> float:
        return float(self.values.var())


def _single_component_preferred(values: np.ndarray, two_component_loglik: float) -> bool:
    one_component_loglik = float(norm.logpdf(values, loc=values.mean(), scale=values.std()).sum())
    # BIC with 2 free parameters for one Gaussian and 5 for the pair
    penalty = (TWO_COMPONENT_PARAMS - ONE_COMPONENT_PARAMS) * math.log(values.size)
    return 2.0 * (two_component_loglik - one_component_loglik) <= penalty


def fit_mixture(samples: Iterable[float]) -> MixtureModel:
    """
    Fit early/late components by expectation-maximization.

    EM starts from a median split, runs at most 100 iterations or until the
    relative log-likelihood change drops below 1e-8, then hard-assigns every
    sample to its most likely component. The returned means and variances
    are the maximum-likelihood estimates for that assignment.

    When BIC does not favour two components over one, both components are
    the single-Gaussian fit, so unimodal windows do not get split in half.
    """
    values = np.asarray(samples if isinstance(samples, np.ndarray) else list(samples), dtype=float).ravel()
    if values.size < MIN_FIT_SAMPLES:
        raise InsufficientDataError(
            f"Need at least {MIN_FIT_SAMPLES} samples to fit a mixture, got {values.size}"
        )
    if not np.all(np.isfinite(values)):
        raise StatsDomainError("Samples must be finite")

    if np.ptp(values) == 0:
        value = float(values[0])
        return MixtureModel(early=Gaussian(value, 0.0), late=Gaussian(value, 0.0), weight_early=0.5)

    ordered = np.sort(values)
    half = values.size // 2
    split = (_Group(ordered[:half]), _Group(ordered[half:]))

    means = np.array([split[0].mean, split[1].mean])
    variances = np.array([split[0].variance, split[1].variance])
    weights = np.array([split[0].values.size, split[1].values.size], dtype=float) / values.size
    floor = max(VARIANCE_FLOOR_RATIO * float(values.var()), np.finfo(float).tiny)

    def log_density(mu: np.ndarray, var: np.ndarray, w: np.ndarray) -> np.ndarray:
        scale = np.sqrt(np.maximum(var, floor))
        return norm.logpdf(values[:, None], loc=mu, scale=scale) + np.log(np.maximum(w, np.finfo(float).tiny))

    previous = None
    iterations = 0
    for iterations in range(1, EM_MAX_ITERATIONS + 1):
        joint = log_density(means, variances, weights)
        per_sample = logsumexp(joint, axis=1)
        likelihood = float(per_sample.sum())
        resp = np.exp(joint - per_sample[:, None])
        totals = resp.sum(axis=0)
        if np.any(totals <= 0):
            break
        weights = totals / values.size
        means = (resp * values[:, None]).sum(axis=0) / totals
        variances = (resp * (values[:, None] - means) ** 2).sum(axis=0) / totals
        if previous is not None and abs(likelihood - previous) <= EM_TOLERANCE * max(abs(previous), 1e-300):
            break
        previous = likelihood

    final = log_density(means, variances, weights)
    if _single_component_preferred(values, float(logsumexp(final, axis=1).sum())):
        single = Gaussian(float(values.mean()), float(values.var()))
        logger.debug("Mixture on %d samples collapsed to one component at %.3f", values.size, single.mean)
        return MixtureModel(early=single, late=single, weight_early=1.0)

    labels = np.argmax(final, axis=1)
    groups = [_Group(values[labels == k]) for k in (0, 1)]
    if any(group.values.size == 0 for group in groups):
        groups = list(split)

    early, late = sorted(groups, key=lambda group: (group.mean, group.variance))
    logger.debug(
        "Fitted mixture on %d samples in %d EM iterations: early=%.3f late=%.3f",
        values.size,
        iterations,
        early.mean,
        late.mean,
    )
    return MixtureModel(
        early=Gaussian(early.mean, early.variance),
        late=Gaussian(late.mean, late.variance),
        weight_early=early.values.size / values.size,
    )
