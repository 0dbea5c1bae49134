"""DP mechanisms and their closed-form RDP / SRDP curves."""

from __future__ import annotations

import dataclasses
import enum
import json
import math
from typing import Callable, Optional, Sequence

import numpy as np

from preproc_dp.core import (AlphaDomain, CollectionProfile, ConfigurationError,
                             DatasetMatrix, DomainError, NumericError, RdpCurve,
                             SrdpCurve)


class ValidityError(DomainError):
  """A lemma precondition fails at the requested evaluation point."""


class MechanismKind(str, enum.Enum):
  GAUSSIAN = 'gaussian'
  LAPLACE = 'laplace'
  EXPONENTIAL = 'exponential'
  DP_GD = 'dp_gd'
  DP_SGD_SAMP = 'dp_sgd_samp'
  DP_SGD_ITER = 'dp_sgd_iter'


GRADIENT_KINDS = (MechanismKind.DP_GD, MechanismKind.DP_SGD_SAMP,
                  MechanismKind.DP_SGD_ITER)


def gd_sigma(L: float, T: int, eps: float, n: int) -> float:
  return L * math.sqrt(T) / (eps * n)


def sgd_iter_sigma(L: float, lr: float, eps: float, n: int) -> float:
  return 8 * math.sqrt(2 * math.log(n)) * lr * L / (eps * math.sqrt(n))


@dataclasses.dataclass(frozen=True)
class MechanismSpec:
  """Parameters of one mechanism.

  For gradient mechanisms ``sigma`` is derived from (L, T, eps, n) or
  (L, lr, eps, n) when omitted, and checked against that rule otherwise.
  ``n`` may be left unset, in which case the rule is applied at run time.
  """

  kind: MechanismKind
  eps: float
  L: float = 1.0
  mu: float = 1.0
  global_sensitivity: float = 1.0
  T: int = 1
  sigma: Optional[float] = None
  lr: Optional[float] = None
  batch: Optional[int] = None
  n: Optional[int] = None

  def __post_init__(self):
    kind = MechanismKind(self.kind)
    object.__setattr__(self, 'kind', kind)
    if not self.L > 0:
      raise ValueError('L must be positive')
    if not self.eps > 0:
      raise ValueError('eps must be positive')
    if self.global_sensitivity <= 0:
      raise ValueError('global sensitivity must be positive')
    if kind not in GRADIENT_KINDS:
      return
    if self.T < 1:
      raise ValueError('T must be >= 1')
    want = self.required_sigma(self.n) if self.n is not None else None
    if self.sigma is None:
      object.__setattr__(self, 'sigma', want)
    elif self.sigma <= 0:
      raise ValueError('sigma must be positive')
    if self.sigma is not None and want is not None:
      self._check_sigma(self.sigma, want)

  def required_sigma(self, n: int) -> Optional[float]:
    if self.kind in (MechanismKind.DP_GD, MechanismKind.DP_SGD_SAMP):
      return gd_sigma(self.L, self.T, self.eps, n)
    if self.kind == MechanismKind.DP_SGD_ITER:
      if self.lr is None:
        raise ConfigurationError('DP-SGD-iter needs a learning rate')
      return sgd_iter_sigma(self.L, self.lr, self.eps, n)
    return None

  def _check_sigma(self, sigma: float, want: float):
    if self.kind == MechanismKind.DP_SGD_SAMP:
      if sigma < want * (1 - 1e-12):
        raise ValueError(f'DP-SGD-samp needs sigma >= {want:.6g}, got {sigma:.6g}')
    elif not math.isclose(sigma, want, rel_tol=1e-9):
      raise ValueError(f'{self.kind.value} fixes sigma = {want:.6g}, got {sigma:.6g}')

  def sigma_for(self, n: int) -> float:
    want = self.required_sigma(n)
    if self.sigma is None:
      return want
    self._check_sigma(self.sigma, want)
    return self.sigma

  def to_dict(self) -> dict:
    d = dataclasses.asdict(self)
    d['kind'] = self.kind.value
    return d

  def to_json(self) -> str:
    return json.dumps(self.to_dict())

  @classmethod
  def from_dict(cls, d: dict) -> 'MechanismSpec':
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
      raise ConfigurationError(f'unknown mechanism fields: {sorted(unknown)}')
    return cls(**d)

  @classmethod
  def from_json(cls, s: str) -> 'MechanismSpec':
    return cls.from_dict(json.loads(s))


def _need_n(spec: MechanismSpec, profile: Optional[CollectionProfile] = None) -> int:
  if spec.n is not None:
    return spec.n
  if profile is not None:
    return profile.n
  raise ConfigurationError(f'{spec.kind.value} curve needs the dataset size n')


def _sgd_samp_domain(spec: MechanismSpec, n: int) -> AlphaDomain:
  L, T, eps = spec.L, spec.T, spec.eps
  arg = n * n * eps / (L * math.sqrt(T))
  second = (L * L * T / (eps * eps * n * n)) * math.log(arg) if arg > 0 else -math.inf
  hi = min(math.sqrt(T) / eps, second)
  return AlphaDomain(1.0, hi,
                     'alpha <= min{sqrt(T)/eps, (L^2 T/(eps^2 n^2)) log(n^2 eps/(L sqrt(T)))}')


def _sgd_iter_alpha_max(sigma: float, scale: float) -> float:
  # Largest alpha with scale * sqrt(2 alpha (alpha - 1)) <= sigma.
  if scale == 0:
    return math.inf
  r = sigma / scale
  return 0.5 * (1 + math.sqrt(1 + 2 * r * r))


def _sgd_iter_domains(spec: MechanismSpec, n: int, tau: Optional[float] = None):
  sigma = spec.sigma_for(n)
  doms = [AlphaDomain(1.0, _sgd_iter_alpha_max(sigma, spec.L),
                      'L*sqrt(2 alpha (alpha-1)) <= sigma')]
  if tau is not None:
    doms.append(AlphaDomain(1.0, _sgd_iter_alpha_max(sigma, tau * spec.L),
                            'tau*L*sqrt(2 alpha (alpha-1)) <= sigma'))
  return tuple(doms)


def rdp_curve(spec: MechanismSpec) -> RdpCurve:
  """The RDP curve of a mechanism under its calibration."""
  eps = spec.eps
  k = spec.kind
  if k == MechanismKind.GAUSSIAN:
    return RdpCurve(lambda a: a * eps * eps / 2, name='gaussian')
  if k in (MechanismKind.LAPLACE, MechanismKind.EXPONENTIAL):
    return RdpCurve(lambda a: eps, at_infinity=eps, name=k.value)
  if k == MechanismKind.DP_GD:
    return RdpCurve(lambda a: 2 * a * eps * eps, name='dp_gd')
  if k == MechanismKind.DP_SGD_SAMP:
    dom = _sgd_samp_domain(spec, _need_n(spec))
    return RdpCurve(lambda a: a * a * eps * eps / 2, domains=(dom,),
                    name='dp_sgd_samp')
  if k == MechanismKind.DP_SGD_ITER:
    doms = _sgd_iter_domains(spec, _need_n(spec))
    return RdpCurve(lambda a: a * eps * eps / 2, domains=doms,
                    name='dp_sgd_iter')
  raise ConfigurationError(f'unknown mechanism {k}')


def srdp_curve(spec: MechanismSpec, profile: Optional[CollectionProfile] = None) -> SrdpCurve:
  """The smooth-RDP curve of a mechanism over a dataset collection."""
  eps, L, mu, gs = spec.eps, spec.L, spec.mu, spec.global_sensitivity
  k = spec.kind
  if k == MechanismKind.GAUSSIAN:
    return SrdpCurve(lambda a, t: a * (L * t * eps) ** 2 / (2 * gs * gs),
                     name='gaussian')
  if k in (MechanismKind.LAPLACE, MechanismKind.EXPONENTIAL):
    lin = lambda t: L * t * eps / gs
    return SrdpCurve(lambda a, t: lin(t), at_infinity=lin, name=k.value)
  if k == MechanismKind.DP_GD:
    return SrdpCurve(lambda a, t: a * (mu * t * eps) ** 2 / (2 * L * L),
                     name='dp_gd')
  if profile is None:
    raise ConfigurationError(f'{k.value} SRDP curve needs a collection profile')
  if k == MechanismKind.DP_SGD_SAMP:
    (gamma,) = profile.require('gamma')
    dom = _sgd_samp_domain(spec, _need_n(spec, profile))
    return SrdpCurve(
        lambda a, t: a * (mu * t * eps * gamma) ** 2 / (2 * L * L),
        domains=lambda t: (dom,), name='dp_sgd_samp')
  if k == MechanismKind.DP_SGD_ITER:
    (k_tilde,) = profile.require('k_tilde')
    if not profile.consecutive_diffs:
      raise ConfigurationError(
          'DP-SGD-iter SRDP requires differing points to be consecutive '
          '(set consecutive_diffs in the profile)')
    n = _need_n(spec, profile)
    if k_tilde >= n:
      raise ConfigurationError('k_tilde must be below n')
    coef = n * math.log(n - k_tilde + 2) / (2 * (n - k_tilde + 1) * L * L * math.log(n))
    return SrdpCurve(lambda a, t: a * t * t * mu * mu * coef,
                     domains=lambda t: _sgd_iter_domains(spec, n, t),
                     name='dp_sgd_iter')
  raise ConfigurationError(f'unknown mechanism {k}')


def subsample_amplify(curve: SrdpCurve, n: int, B: int, k: int) -> SrdpCurve:
  """SRDP of the curve's algorithm run on a uniform size-B subsample."""
  if B < 1 or n < 2:
    raise ValueError('need B >= 1 and n >= 2')
  if int(k) != k or k < 1.0 / B or k > (n - 1) / B:
    raise ValueError(f'k must be an integer in [1/B, (n-1)/B], got {k}')
  q = (1 - (k * B - 1) / n) ** B

  def fn(a, t):
    base = curve(a, t)
    if base > 1 / (a - 1):
      raise ValidityError(
          f'subsampling needs eps(alpha, tau) <= 1/(alpha-1); got {base:.6g} at alpha={a:g}')
    return 2 * q * curve(a, t / k) + 2 * (1 - q) * base

  return SrdpCurve(fn, domains=curve.domains, name=f'subsampled({curve.name})')


def _value(value_fn, data) -> np.ndarray:
  return np.atleast_1d(np.asarray(value_fn(data), dtype=np.float64))


def run_gaussian(spec: MechanismSpec, value_fn: Callable, data: DatasetMatrix,
                 rng_seed: int) -> np.ndarray:
  """value_fn(data) plus N(0, (global_sensitivity/eps)^2) noise per coordinate."""
  v = _value(value_fn, data)
  rng = np.random.default_rng(rng_seed)
  return v + rng.normal(0.0, spec.global_sensitivity / spec.eps, size=v.shape)


def run_laplace(spec: MechanismSpec, value_fn: Callable, data: DatasetMatrix,
                rng_seed: int) -> np.ndarray:
  v = _value(value_fn, data)
  rng = np.random.default_rng(rng_seed)
  return v + rng.laplace(0.0, spec.global_sensitivity / spec.eps, size=v.shape)


def run_exponential(spec: MechanismSpec, score_fn: Callable, data: DatasetMatrix,
                    rng_seed: int, candidates: Optional[Sequence] = None,
                    bounds: Optional[tuple] = None,
                    score_max: Optional[float] = None,
                    max_tries: int = 1_000_000):
  """Samples w with density proportional to exp(eps * Q(w, S) / (2 Delta_Q)).

  With ``candidates`` the draw is exact over the finite set. Otherwise ``bounds``
  is a (lo, hi) box and ``score_max`` an upper bound on Q over it; proposals are
  uniform on the box and accepted with probability exp(eps (Q - score_max) / (2 Delta_Q)).
  """
  rng = np.random.default_rng(rng_seed)
  scale = spec.eps / (2 * spec.global_sensitivity)
  if candidates is not None:
    scores = np.array([score_fn(c, data) for c in candidates], dtype=np.float64)
    if not np.all(np.isfinite(scores)):
      raise NumericError('non-finite score')
    logits = scale * (scores - scores.max())
    probs = np.exp(logits)
    probs /= probs.sum()
    return candidates[int(rng.choice(len(candidates), p=probs))]
  if bounds is None or score_max is None:
    raise ConfigurationError('continuous sampling needs bounds and score_max')
  lo, hi = (np.atleast_1d(np.asarray(b, dtype=np.float64)) for b in bounds)
  for _ in range(max_tries):
    w = rng.uniform(lo, hi)
    q = float(score_fn(w, data))
    if q > score_max + 1e-12:
      raise ValueError(f'score {q:.6g} exceeds the declared score_max {score_max:.6g}')
    if rng.random() < math.exp(scale * (q - score_max)):
      return w
  raise NumericError('rejection sampler exhausted max_tries')


def project_ball(w: np.ndarray, radius: float = 1.0) -> np.ndarray:
  nrm = float(np.linalg.norm(w))
  return w if nrm <= radius else w * (radius / nrm)


def run_dp_gd(spec: MechanismSpec, loss_grad: Callable, data: DatasetMatrix,
              init, rng_seed: int, return_trace: bool = False):
  """Projected noisy gradient descent on the unit ball; returns the average iterate.

  ``loss_grad(w, data)`` must return the gradient of the average loss.
  """
  if spec.kind != MechanismKind.DP_GD:
    raise ConfigurationError('run_dp_gd needs a dp_gd spec')
  sigma = spec.sigma_for(data.n)
  lr = 1.0 if spec.lr is None else spec.lr
  rng = np.random.default_rng(rng_seed)
  w = project_ball(np.asarray(init, dtype=np.float64).copy())
  total = np.zeros_like(w)
  trace = []
  for _ in range(spec.T):
    g = np.asarray(loss_grad(w, data), dtype=np.float64)
    if not np.all(np.isfinite(g)):
      raise NumericError('loss gradient is not finite')
    noise = rng.normal(0.0, sigma, size=w.shape)
    w = project_ball(w - lr * (g + noise))
    total += w
    if return_trace:
      trace.append(w.copy())
  avg = total / spec.T
  return (avg, np.array(trace)) if return_trace else avg
