"""Reference divergences used to check the analytic bounds."""

from __future__ import annotations

import dataclasses
import math
import warnings
from typing import Callable, Iterable, Optional

import numpy as np

from preproc_dp.core import DatasetMatrix, UnsupportedError
from preproc_dp.mechanisms import MechanismKind, MechanismSpec
from preproc_dp.preprocessing import PreprocSpec, transform


class EstimatorWarning(UserWarning):
  pass


@dataclasses.dataclass(frozen=True)
class DivergenceEstimate:
  value: float
  method: str
  samples: int
  ci_width: float
  ci_low: float = math.nan
  ci_high: float = math.nan

  def __post_init__(self):
    if self.value < 0 or self.ci_width < 0:
      raise ValueError('value and ci_width must be non-negative')


def renyi_gaussian(mu1, mu2, sigma: float, alpha: float) -> float:
  """D_alpha(N(mu1, sigma^2 I) || N(mu2, sigma^2 I))."""
  if sigma <= 0 or alpha <= 1:
    raise ValueError('need sigma > 0 and alpha > 1')
  diff = np.atleast_1d(np.asarray(mu1, float) - np.asarray(mu2, float))
  return float(alpha * diff @ diff / (2 * sigma * sigma))


def renyi_laplace(shift: float, scale: float, alpha: float) -> float:
  """D_alpha between two Laplace laws with equal scale and means ``shift`` apart."""
  t = abs(shift) / scale
  if t == 0:
    return 0.0
  if math.isinf(alpha):
    return t
  # log of a/(2a-1) e^{(a-1)t} + (a-1)/(2a-1) e^{-a t}, kept in log space.
  a = alpha
  lw1 = math.log(a / (2 * a - 1)) + (a - 1) * t
  lw2 = math.log((a - 1) / (2 * a - 1)) - a * t
  return float(np.logaddexp(lw1, lw2) / (a - 1))


def _plugin(p: np.ndarray, q: np.ndarray, alpha: float):
  """Histogram plug-in D_alpha; returns (value, unmatched p-mass)."""
  both = (p > 0) & (q > 0)
  unmatched = float(p[(p > 0) & (q == 0)].sum())
  if not both.any():
    return math.inf, unmatched
  lp, lq = np.log(p[both]), np.log(q[both])
  s = np.logaddexp.reduce(alpha * lp + (1 - alpha) * lq)
  return float(s / (alpha - 1)), unmatched


def renyi_mc(sampler_p: Callable, sampler_q: Callable, alpha: float,
             n_samples: int = 100_000, bins: int = 256, rng_seed=0,
             n_boot: int = 200) -> DivergenceEstimate:
  """Histogram estimate of D_alpha(P || Q) from 1-D samples with a bootstrap CI.

  Samplers are called as ``sampler(rng, size)``. Both samples share one
  binning over their pooled range. ``ci_width`` is the half-width of the
  95% percentile bootstrap interval.
  """
  if n_samples < 10_000:
    raise ValueError('n_samples must be at least 1e4')
  rng = np.random.default_rng(rng_seed)
  xp = np.asarray(sampler_p(rng, n_samples), float).ravel()
  xq = np.asarray(sampler_q(rng, n_samples), float).ravel()
  lo, hi = min(xp.min(), xq.min()), max(xp.max(), xq.max())
  if hi == lo:
    hi = lo + 1.0
  edges = np.linspace(lo, hi, bins + 1)
  cp = np.histogram(xp, edges)[0]
  cq = np.histogram(xq, edges)[0]
  ph, qh = cp / cp.sum(), cq / cq.sum()
  value, unmatched = _plugin(ph, qh, alpha)
  boot = np.empty(n_boot)
  for b in range(n_boot):
    bp = rng.multinomial(len(xp), ph) / len(xp)
    bq = rng.multinomial(len(xq), qh) / len(xq)
    boot[b] = _plugin(bp, bq, alpha)[0]
  boot = boot[np.isfinite(boot)]
  low, high = np.percentile(boot, [2.5, 97.5]) if boot.size else (math.nan, math.nan)
  half = float((high - low) / 2) if boot.size else math.inf
  if unmatched > 0:
    warnings.warn(f'{unmatched:.3g} of the P mass falls in bins where Q has no samples; '
                  'the estimate ignores it and the CI is widened', EstimatorWarning)
    # Half-count pseudo-occupancy bounds the effect of the empty bins.
    q_alt = np.where((cp > 0) & (cq == 0), 0.5 / len(xq), qh)
    alt, _ = _plugin(ph, q_alt, alpha)
    half += abs(alt - value)
  return DivergenceEstimate(max(value, 0.0), 'histogram_mc', int(len(xp)),
                            half, float(low), float(high))


def first_coordinate_mean(x) -> float:
  rows = x.rows if isinstance(x, DatasetMatrix) else np.asarray(x)
  return float(rows[:, 0].mean())


def brute_force_budget_audit(mechanism: MechanismSpec, preproc: PreprocSpec,
                             neighbor_pairs: Iterable, alpha: float,
                             statistic: Callable = first_coordinate_mean) -> float:
  """Largest exact D_alpha between mechanism outputs over pre-processed neighbor pairs.

  The mechanism releases ``statistic`` of the pre-processed data with
  Gaussian or Laplace noise calibrated as in ``mechanism``.
  """
  kind = MechanismKind(mechanism.kind)
  if kind not in (MechanismKind.GAUSSIAN, MechanismKind.LAPLACE):
    raise UnsupportedError('the audit needs a closed-form divergence (gaussian or laplace)')
  scale = mechanism.global_sensitivity / mechanism.eps
  worst = 0.0
  for a, b in neighbor_pairs:
    fa = np.atleast_1d(statistic(transform(preproc, a)))
    fb = np.atleast_1d(statistic(transform(preproc, b)))
    if kind == MechanismKind.GAUSSIAN:
      div = renyi_gaussian(fa, fb, scale, alpha)
    else:
      div = sum(renyi_laplace(float(u - v), scale, alpha) for u, v in zip(fa, fb))
    worst = max(worst, div)
  return worst


def uniform_ball(rng: np.random.Generator, n: int, d: int, radius: float = 1.0) -> np.ndarray:
  g = rng.standard_normal((n, d))
  g /= np.linalg.norm(g, axis=1, keepdims=True)
  return g * radius * rng.random((n, 1)) ** (1.0 / d)


def random_neighbor_pairs(rng: np.random.Generator, n: int, d: int, n_pairs: int,
                          p_missing: int = 0) -> list:
  """Replace-one neighbor pairs of unit-ball datasets.

  ``p_missing`` rows (never the swapped one) get one missing cell each.
  """
  pairs = []
  for _ in range(n_pairs):
    x = uniform_ball(rng, n, d)
    z = uniform_ball(rng, 1, d)[0]
    i = int(rng.integers(n))
    mask = np.zeros((n, d), dtype=bool)
    if p_missing:
      rows = rng.choice([r for r in range(n) if r != i], size=p_missing, replace=False)
      mask[rows, rng.integers(d, size=p_missing)] = True
    y = x.copy()
    y[i] = z
    pairs.append((DatasetMatrix(x, mask), DatasetMatrix(y, mask)))
  return pairs
