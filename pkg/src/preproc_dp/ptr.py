"""Propose-test-release for rank-k PCA followed by DP-GD."""

from __future__ import annotations

import dataclasses
import math
import warnings
from typing import Callable, Optional

import numpy as np

from preproc_dp.core import (CollectionProfile, ConfigurationError, DatasetMatrix,
                             PrivacyBudget)
from preproc_dp.mechanisms import MechanismKind, MechanismSpec, run_dp_gd
from preproc_dp.preprocessing import apply_pca, covariance, sorted_eigh

# Eigen-gap Lipschitz constant: |delta_k(S) - delta_k(S')| <= GAP_LIPSCHITZ / n
# for neighbors with n >= 101.
GAP_LIPSCHITZ = 12.2
MIN_N = 101


@dataclasses.dataclass(frozen=True)
class PtrConfig:
  beta: float
  eps: float
  delta: float
  k: int
  T: int = 100
  L: float = 1.0
  mu: float = 1.0
  lr: float = 1.0
  clip_ratio: float = 1.0  # C / R when rows are clipped to radius C before PCA

  def __post_init__(self):
    if not self.beta > 0:
      raise ValueError('beta must be positive')
    if not self.eps > 0:
      raise ValueError('eps must be positive')
    if not 0 < self.delta < 1:
      raise ValueError('delta must lie in (0, 1)')
    if self.k < 1 or self.T < 1:
      raise ValueError('k and T must be >= 1')
    if not 0 < self.clip_ratio <= 1:
      raise ValueError('clip_ratio must lie in (0, 1]')

  @property
  def pca_term(self) -> float:
    r = GAP_LIPSCHITZ * self.clip_ratio * self.mu / (self.L * self.beta)
    return 1 + r * r

  @property
  def delta_ceiling(self) -> float:
    """Largest delta allowed by the privacy guarantee's precondition."""
    return math.exp(-1.05 * self.eps ** 2 * self.pca_term)

  @property
  def threshold(self) -> float:
    return math.log(2 / self.delta) / self.eps


@dataclasses.dataclass(frozen=True)
class PtrOutcome:
  """Either an abort (params is None) or a released model."""

  aborted: bool
  params: Optional[np.ndarray] = None
  trace: Optional[np.ndarray] = None

  def to_dict(self) -> dict:
    if self.aborted:
      return {'outcome': 'abort'}
    return {'outcome': 'release', 'model': self.params.tolist()}


def eigen_gap(data: DatasetMatrix, k: int) -> float:
  """lambda_k - lambda_{k+1} of the centered covariance (1-indexed, descending)."""
  x = data.complete_rows()
  if not 1 <= k < data.d:
    raise ValueError(f'need 1 <= k < d, got k={k}, d={data.d}')
  w, _ = sorted_eigh(covariance(x))
  return max(float(w[k - 1] - w[k]), 0.0)


def ptr_surrogate(data: DatasetMatrix, k: int, beta: float) -> float:
  """Lower bound on the number of rows to change before the gap drops below beta."""
  return max(0.0, (eigen_gap(data, k) - beta) * data.n / GAP_LIPSCHITZ)


def ptr_test_statistic(data: DatasetMatrix, k: int, beta: float, eps: float,
                       rng_seed) -> float:
  if data.n < MIN_N:
    raise ValueError(f'the gap bound needs n >= {MIN_N}')
  rng = np.random.default_rng(rng_seed)
  return ptr_surrogate(data, k, beta) + rng.laplace(0.0, 1.0 / eps)


def run_ptr(data: DatasetMatrix, config: PtrConfig, loss_grad: Callable,
            rng_seed: int, init: Optional[np.ndarray] = None) -> PtrOutcome:
  """Tests the eigen-gap privately; on success trains DP-GD on rank-k PCA output.

  DP-GD runs with sigma = 2 L sqrt(T) / (eps n), i.e. the eps/2 calibration.
  """
  if config.delta > config.delta_ceiling:
    warnings.warn(
        f'delta={config.delta:g} exceeds the guarantee precondition '
        f'{config.delta_ceiling:.3g}; the released budget is not certified',
        stacklevel=2)
  test_seed, gd_seed = np.random.SeedSequence(rng_seed).spawn(2)
  gamma = ptr_test_statistic(data, config.k, config.beta, config.eps, test_seed)
  if gamma <= config.threshold:
    return PtrOutcome(aborted=True)
  reduced = apply_pca(data, config.k, 'rank')
  spec = MechanismSpec(MechanismKind.DP_GD, eps=config.eps / 2, L=config.L,
                       mu=config.mu, T=config.T, lr=config.lr, n=data.n)
  w0 = np.zeros(data.d) if init is None else np.asarray(init, dtype=np.float64)
  params, trace = run_dp_gd(spec, loss_grad, reduced, w0, gd_seed, return_trace=True)
  return PtrOutcome(aborted=False, params=params, trace=trace)


def ptr_privacy_budget(config: PtrConfig,
                       profile: Optional[CollectionProfile] = None) -> PrivacyBudget:
  """(eps_hat + eps, delta)-DP with eps_hat = 3 eps sqrt(1.05 (1 + (12.2 mu / (L beta))^2) log(1/delta))."""
  if config.delta > config.delta_ceiling:
    raise ConfigurationError(
        f'delta={config.delta:g} must be <= exp(-1.05 eps^2 (1 + (12.2 mu/(L beta))^2)) '
        f'= {config.delta_ceiling:.3g}')
  if profile is not None and profile.n < MIN_N:
    raise ConfigurationError(f'the guarantee needs n >= {MIN_N}')
  eps_hat = 3 * config.eps * math.sqrt(1.05 * config.pca_term * math.log(1 / config.delta))
  prov = dict(mechanism='dp_gd', preproc='pca_rank', method='ptr',
              conversion='ptr', beta=config.beta, eps_test=config.eps)
  return PrivacyBudget(alpha=math.inf, eps_hat=eps_hat, eps_dp=eps_hat + config.eps,
                       delta_dp=config.delta, provenance=prov)
