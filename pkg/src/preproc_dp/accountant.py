"""End-to-end accounting for pre-processing followed by a DP mechanism."""

from __future__ import annotations

import dataclasses
import math
import warnings
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from preproc_dp.core import (CollectionProfile, ConfigurationError, DomainError,
                             InfeasibleError, PrivacyBudget, RdpCurve,
                             SensitivityBounds, SrdpCurve, UnsupportedError,
                             rdp_sum, srdp_sum)
from preproc_dp.mechanisms import MechanismKind
from preproc_dp.preprocessing import PreprocKind, PreprocSpec, sensitivity

DEFAULT_ALPHAS = (1.5, 2, 3, 5, 8, 11, 16, 32, 64, 128, 256)
DEFAULT_CS = (1, 1.1, 1.5, 2, 3, 5)

# Re-exported for sequential composition of several mechanisms.
sequential_rdp = rdp_sum
sequential_srdp = srdp_sum


@dataclasses.dataclass(frozen=True)
class ComposeConfig:
  alpha_grid: Sequence[float] = DEFAULT_ALPHAS
  c_grid: Sequence[float] = DEFAULT_CS
  target_delta: float = 1e-5

  def __post_init__(self):
    if not self.alpha_grid or not self.c_grid:
      raise ValueError('grids must be non-empty')
    if any(a <= 1 for a in self.alpha_grid):
      raise ValueError('all alphas must exceed 1')
    if any(c < 1 for c in self.c_grid):
      raise ValueError('all c must be >= 1')
    if not 0 < self.target_delta < 1:
      raise ValueError('target_delta must lie in (0, 1)')


def rdp_to_dp(eps_rdp: float, alpha: float, delta: float):
  """(alpha, eps)-RDP implies (eps + log(1/delta)/(alpha-1), delta)-DP."""
  if alpha <= 1:
    raise ValueError('alpha must exceed 1')
  if not 0 < delta <= 1:
    raise ValueError('delta must lie in (0, 1]')
  return eps_rdp + math.log(1 / delta) / (alpha - 1), delta


def _branch_srdp_first(rdp: RdpCurve, srdp: SrdpCurve, tau: float,
                       alpha: float, c: float) -> float:
  if c == 1:
    if math.isinf(rdp.at_infinity):
      raise DomainError(f'c=1 needs a finite alpha->inf limit of {rdp.name or "the RDP curve"}')
    return srdp(alpha, tau) + rdp.at_infinity
  w = (alpha * c - 1) / (c * (alpha - 1))
  return w * srdp(alpha * c, tau) + rdp((c * alpha - 1) / (c - 1))


def _branch_rdp_first(rdp: RdpCurve, srdp: SrdpCurve, tau: float,
                      alpha: float, c: float) -> float:
  if c == 1:
    lim = srdp(math.inf, tau)
    if math.isinf(lim):
      raise DomainError(f'c=1 needs a finite alpha->inf limit of {srdp.name or "the SRDP curve"}')
    return rdp(alpha) + lim
  w = (alpha * c - 1) / (c * (alpha - 1))
  return w * rdp(alpha * c) + srdp((c * alpha - 1) / (c - 1), tau)


def compose(rdp: RdpCurve, srdp: SrdpCurve, sens: SensitivityBounds,
            alpha: float, c1: float = 2.0, c2: float = 2.0) -> float:
  """RDP of the mechanism run on pre-processed data, at order alpha.

  c = 1 substitutes the alpha -> inf value of the partner curve.
  """
  if alpha <= 1:
    raise DomainError('alpha must exceed 1')
  if c1 < 1 or c2 < 1:
    raise ValueError('c1, c2 must be >= 1')
  tau = sens.tau
  return max(_branch_srdp_first(rdp, srdp, tau, alpha, c1),
             _branch_rdp_first(rdp, srdp, tau, alpha, c2))


def compose_optimized(rdp: RdpCurve, srdp: SrdpCurve, sens: SensitivityBounds,
                      config: ComposeConfig = ComposeConfig(),
                      mechanism_id: str = '', preproc_id: str = '') -> PrivacyBudget:
  """Grid search over (alpha, c1, c2) for the smallest converted DP epsilon."""
  tau = sens.tau
  delta = config.target_delta
  best = None
  reasons = set()
  for a in config.alpha_grid:
    b1, b2 = [], []
    for c in config.c_grid:
      for store, fn in ((b1, _branch_srdp_first), (b2, _branch_rdp_first)):
        try:
          store.append((fn(rdp, srdp, tau, a, c), c))
        except DomainError as e:
          reasons.add(str(e))
    if not b1 or not b2:
      continue
    v1, c1 = min(b1)
    v2, c2 = min(b2)
    eps_hat = max(v1, v2)
    if not math.isfinite(eps_hat):
      continue
    eps_dp, _ = rdp_to_dp(eps_hat, a, delta)
    if best is None or eps_dp < best[0]:
      best = (eps_dp, a, eps_hat, c1, c2)
  if best is None:
    raise InfeasibleError('no feasible (alpha, c1, c2): ' + '; '.join(sorted(reasons)[:3]))
  eps_dp, a, eps_hat, c1, c2 = best
  prov = dict(mechanism=mechanism_id or rdp.name, preproc=preproc_id,
              c1=c1, c2=c2, alpha=a, tau=tau, method='generic')
  return PrivacyBudget(a, eps_hat, eps_dp, delta, prov)


def _table_p(preproc: PreprocKind, profile: CollectionProfile, eta: float) -> float:
  spec = PreprocSpec(PreprocKind.QUANTIZE, eta=eta) if preproc in (
      PreprocKind.QUANTIZE, PreprocKind.DEDUP) else PreprocSpec(
          PreprocKind.IMPUTE, model='mean')
  return sensitivity(spec, profile).delta_inf


def _min_gap(profile: CollectionProfile) -> float:
  (dk,) = profile.require('delta_min_k')
  return dk if profile.delta_min_1 is None else min(dk, profile.delta_min_1)


def table2_closed_form(mechanism_kind, preproc_kind, profile: CollectionProfile,
                       eps: float, alpha: float) -> float:
  """Tabulated end-to-end RDP bound for unit Lipschitz/smoothness/sensitivity.

  ``p`` is the changed-row sensitivity of the step (2 * max_cluster for
  dedup/quantization, the missing count for mean imputation).
  """
  mech = MechanismKind(mechanism_kind)
  if isinstance(preproc_kind, PreprocSpec):
    if preproc_kind.kind == PreprocKind.IMPUTE and preproc_kind.model != 'mean':
      raise UnsupportedError(f'no closed form for {preproc_kind.model} imputation')
    preproc_kind = preproc_kind.kind
  pre = PreprocKind(preproc_kind)
  if alpha < 11:
    raise DomainError('the closed forms hold for alpha >= 11')
  n = profile.n
  a, e2 = alpha, eps * eps
  lap = mech in (MechanismKind.LAPLACE, MechanismKind.EXPONENTIAL)

  if pre in (PreprocKind.DEDUP, PreprocKind.QUANTIZE):
    eta = 1.0 if pre == PreprocKind.DEDUP else profile.require('eta')[0]
    p = _table_p(pre, profile, eta)
    s2 = (eta * p) ** 2
    if mech == MechanismKind.GAUSSIAN:
      return 1.05 * a * e2 * (1 + s2)
    if mech == MechanismKind.DP_GD:
      return 1.05 * a * e2 * (4 + s2)
    if lap:
      return eps * (1 + eta * p)
    if mech == MechanismKind.DP_SGD_ITER:
      return 1.1 * a * e2 * (1 + s2 * n * math.log(n - p) / ((n - p) * math.log(n)))
  elif pre == PreprocKind.IMPUTE:
    p = profile.p
    if mech == MechanismKind.GAUSSIAN:
      return 1.05 * a * e2 * (1 + 4 * p * p / (n - p) ** 2)
    if mech == MechanismKind.DP_GD:
      return 4.2 * a * e2 * (1 + p * p / (n - p) ** 2)
    if lap:
      return eps * (1 + 2 * p / (n - p))
    if mech == MechanismKind.DP_SGD_ITER:
      return 1.1 * a * e2 * (1 + 4 * p * p * n * math.log(n - p) / ((n - p) ** 3 * math.log(n)))
  elif pre == PreprocKind.PCA_RANK:
    if n < 101:
      raise ConfigurationError('the PCA closed forms need n >= 101')
    g = _min_gap(profile)
    r = 12.2 / g
    if mech == MechanismKind.GAUSSIAN:
      return 1.05 * a * e2 * (1 + r * r)
    if mech == MechanismKind.DP_GD:
      return 1.05 * a * e2 * (4 + r * r)
    if lap:
      return eps * (1 + r)
    if mech == MechanismKind.DP_SGD_SAMP:
      return 1.05 * a * e2 * (2 * a + r * r)
  elif pre == PreprocKind.STANDARD_SCALE:
    (s,) = profile.require('sigma_min')
    if mech == MechanismKind.GAUSSIAN:
      return 1.05 * a * e2 * (1 + 4 / s ** 3)
    if mech == MechanismKind.DP_GD:
      return 4.2 * a * e2 * (1 + 1 / s ** 3)
    if lap:
      return eps * (1 + 4 / s ** 3)
    if mech == MechanismKind.DP_SGD_SAMP:
      return 2.1 * a * e2 * (a + 8 / s ** 6)
  raise UnsupportedError(f'no closed form for {mech.value} with {pre.value}')


def table2_supported(mechanism_kind, preproc_kind) -> bool:
  try:
    prof = CollectionProfile(n=200, p=1, eta=0.1, max_cluster=1, delta_min_k=0.5,
                             sigma_min=0.5)
    table2_closed_form(mechanism_kind, preproc_kind, prof, 1.0, 11)
    return True
  except UnsupportedError:
    return False


def group_privacy_baseline(rdp: RdpCurve, group_size: int, alpha: float,
                           delta: float):
  """(eps, delta) for datasets differing in ``group_size`` rows via group privacy.

  The RDP curve is converted at (alpha, delta0) with
  delta0 = delta / (k e^{(k-1) eps0}), then the group bound
  (k eps0, k e^{(k-1) eps0} delta0) = (k eps0, delta) is applied. Solving
  the fixed point gives eps0 = ((alpha-1) eps(alpha) + log(1/delta) + log k) / (alpha - k),
  which needs alpha > k; otherwise the bound is infinite.
  """
  k = int(group_size)
  if k < 1:
    raise ValueError('group_size must be >= 1')
  if alpha <= k:
    return math.inf, delta
  eps0 = ((alpha - 1) * rdp(alpha) + math.log(1 / delta) + math.log(k)) / (alpha - k)
  return k * eps0, delta


def group_privacy_optimized(rdp: RdpCurve, group_size: int, delta: float,
                            alpha_max: float = 1e7) -> tuple:
  """Minimises the group-privacy baseline over continuous alpha > group_size.

  Returns (eps, delta, alpha).
  """
  k = int(group_size)
  hi = min(alpha_max, max(d.hi for d in rdp.domains))
  if hi <= k:
    return math.inf, delta, math.nan

  def f(t):
    a = k + math.exp(t)
    if a > hi:
      return math.inf
    return group_privacy_baseline(rdp, k, a, delta)[0]

  ts = np.linspace(-6, math.log(hi - k), 200)
  vals = [f(t) for t in ts]
  i = int(np.argmin(vals))
  lo_t, hi_t = ts[max(i - 1, 0)], ts[min(i + 1, len(ts) - 1)]
  res = optimize.minimize_scalar(f, bounds=(lo_t, hi_t), method='bounded')
  t = res.x if res.fun < vals[i] else ts[i]
  return f(t), delta, k + math.exp(t)


def account(mechanism_rdp: RdpCurve, mechanism_srdp: SrdpCurve,
            preproc: PreprocSpec, profile: CollectionProfile,
            config: ComposeConfig = ComposeConfig(), dashed: bool = False) -> PrivacyBudget:
  """Generic accounting from a pre-processing spec and a profile."""
  if dashed:
    warnings.warn('no tabulated guarantee exists for this combination; '
                  'relying on the user-supplied profile for the generic bound')
  sens = sensitivity(preproc, profile)
  return compose_optimized(mechanism_rdp, mechanism_srdp, sens, config,
                           preproc_id=preproc.kind.value)


def compose_best_c(rdp: RdpCurve, srdp: SrdpCurve, sens: SensitivityBounds,
                   alpha: float, c_grid: Sequence[float] = DEFAULT_CS) -> float:
  """Smallest composed RDP at a fixed order over the c grid."""
  tau = sens.tau
  b1, b2 = [], []
  for c in c_grid:
    for store, fn in ((b1, _branch_srdp_first), (b2, _branch_rdp_first)):
      try:
        store.append(fn(rdp, srdp, tau, alpha, c))
      except DomainError:
        pass
  if not b1 or not b2:
    raise InfeasibleError(f'no feasible c at alpha={alpha:g}')
  return max(min(b1), min(b2))
