"""Synthetic low-rank classification and the private logistic-regression comparison."""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import io
import math
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from preproc_dp.accountant import (ComposeConfig, compose_optimized,
                                   group_privacy_optimized, rdp_to_dp)
from preproc_dp.core import (CollectionProfile, DatasetMatrix, InfeasibleError,
                             SensitivityBounds)
from preproc_dp.mechanisms import (MechanismKind, MechanismSpec, project_ball,
                                   rdp_curve, run_dp_gd, srdp_curve)
from preproc_dp.preprocessing import (PreprocKind, PreprocSpec, covariance,
                                      sensitivity, sorted_eigh)
from preproc_dp.ptr import eigen_gap

ARMS = ('preprocessed', 'no_preprocess', 'dp_pca')


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
  n: int = 1000
  d: int = 200
  approx_rank: int = 20
  class_count: int = 2
  eps_list: Sequence[float] = (1.0, 2.0, 5.0)
  delta: float = 1e-5
  seeds: Sequence[int] = tuple(range(10))
  k: int = 20
  clip: Optional[float] = None  # clipping radius as a fraction of R
  noise_scale: float = 0.05
  class_sep: float = 1.0
  T: int = 100
  lr: float = 1.0
  smoothness: float = 0.25  # logistic loss on unit-ball rows
  workers: int = 1

  def __post_init__(self):
    if self.approx_rank > self.d:
      raise ValueError('approx_rank must not exceed d')
    if not self.eps_list:
      raise ValueError('eps_list must be non-empty')
    if self.class_count != 2:
      raise ValueError('only binary classification is supported')
    if not 1 <= self.k < self.d:
      raise ValueError('need 1 <= k < d')
    if self.clip is not None and not 0 < self.clip <= 1:
      raise ValueError('clip must lie in (0, 1]')

  def to_dict(self) -> dict:
    d = dataclasses.asdict(self)
    d['eps_list'] = list(self.eps_list)
    d['seeds'] = list(self.seeds)
    return d

  @classmethod
  def from_dict(cls, d: dict) -> 'ExperimentConfig':
    d = dict(d)
    for key in ('eps_list', 'seeds'):
      if key in d:
        d[key] = tuple(d[key])
    return cls(**d)


def make_classification(config: ExperimentConfig, seed: int) -> DatasetMatrix:
  """Two Gaussian classes in a random approx_rank-dim subspace plus isotropic noise.

  Rows are rescaled by a common factor so the largest norm is 1; labels are +-1.
  """
  rng = np.random.default_rng(seed)
  n, d, r = config.n, config.d, config.approx_rank
  basis, _ = np.linalg.qr(rng.standard_normal((d, r)))
  centers = config.class_sep * rng.standard_normal((2, r))
  y = rng.integers(0, 2, size=n)
  z = centers[y] + rng.standard_normal((n, r))
  x = z @ basis.T
  if config.noise_scale > 0:
    x = x + config.noise_scale * rng.standard_normal((n, d))
  x = x / np.linalg.norm(x, axis=1).max()
  return DatasetMatrix(x, None, 2.0 * y - 1.0)


def logistic_loss(w: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
  return float(np.mean(np.logaddexp(0.0, -y * (x @ w))))


def logistic_grad(w: np.ndarray, data: DatasetMatrix) -> np.ndarray:
  x, y = data.rows, data.labels
  m = -y * (x @ w)
  return x.T @ (-y * _sigmoid(m)) / x.shape[0]


def _sigmoid(t):
  return 0.5 * (1 + np.tanh(0.5 * t))


def nonprivate_minimizer(data: DatasetMatrix, tol: float = 1e-6,
                         max_iter: int = 100_000) -> np.ndarray:
  """Projected GD on the unit ball until the step falls under ``tol``."""
  x = data.rows
  beta = 0.25 * float(np.linalg.eigvalsh(x.T @ x / x.shape[0]).max())
  lr = 1.0 / max(beta, 1e-12)
  w = np.zeros(data.d)
  for _ in range(max_iter):
    w_new = project_ball(w - lr * logistic_grad(w, data))
    # Gradient-mapping norm.
    if np.linalg.norm(w_new - w) / lr < tol:
      return w_new
    w = w_new
  return w


def _gd_dp_epsilon(eps_mech: float, delta: float, alphas) -> float:
  curve = rdp_curve(MechanismSpec(MechanismKind.DP_GD, eps=eps_mech))
  return min(rdp_to_dp(curve(a), a, delta)[0] for a in alphas)


def _solve_eps(budget_fn, target: float) -> float:
  """Largest mechanism eps whose converted budget stays at or below ``target``."""
  lo, hi = 1e-8, 1.0
  while budget_fn(hi) < target:
    hi *= 2
    if hi > 1e8:
      return hi
  f = lambda t: budget_fn(math.exp(t)) - target
  t = optimize.brentq(f, math.log(lo), math.log(hi), xtol=1e-10)
  # Step down until certified under the target.
  e = math.exp(t)
  while budget_fn(e) > target:
    e *= 1 - 1e-9
  return e


def pipeline_profile(data: DatasetMatrix, k: int) -> CollectionProfile:
  """Profile whose gaps are those of the observed dataset."""
  return CollectionProfile(n=data.n, delta_min_k=eigen_gap(data, k),
                           delta_min_1=eigen_gap(data, 1))


def preprocessed_mech_eps(config: ExperimentConfig, data: DatasetMatrix,
                          target_eps: float) -> tuple:
  """Mechanism eps for PCA-rank + DP-GD so that the composed (eps, delta) meets the target."""
  profile = pipeline_profile(data, config.k)
  sens = sensitivity(PreprocSpec(PreprocKind.PCA_RANK, k=config.k), profile)
  if config.clip is not None:
    sens = SensitivityBounds(sens.delta2 * config.clip, sens.delta_inf)
  cc = ComposeConfig(target_delta=config.delta)

  def budget(e):
    spec = MechanismSpec(MechanismKind.DP_GD, eps=e, mu=config.smoothness)
    return compose_optimized(rdp_curve(spec), srdp_curve(spec), sens, cc).eps_dp

  e = _solve_eps(budget, target_eps)
  spec = MechanismSpec(MechanismKind.DP_GD, eps=e, mu=config.smoothness)
  return e, compose_optimized(rdp_curve(spec), srdp_curve(spec), sens, cc,
                              preproc_id='pca_rank')


def plain_mech_eps(target_eps: float, delta: float) -> float:
  alphas = ComposeConfig().alpha_grid
  return _solve_eps(lambda e: _gd_dp_epsilon(e, delta, alphas), target_eps)


def gaussian_sigma_for(eps: float, delta: float, sens: float) -> float:
  """Smallest Gaussian noise std meeting (eps, delta) through the RDP conversion."""
  alphas = np.concatenate([np.linspace(1.01, 10, 500), np.geomspace(10, 1e4, 500)])
  # RDP alpha s^2 / (2 sigma^2); solve for the best alpha in closed form per alpha.
  best = math.inf
  for a in alphas:
    room = eps - math.log(1 / delta) / (a - 1)
    if room > 0:
      best = min(best, sens * math.sqrt(a / (2 * room)))
  return best


def dp_pca_basis(data: DatasetMatrix, k: int, eps: float, delta: float,
                 rng: np.random.Generator) -> np.ndarray:
  """Top-k eigenvectors of the second-moment matrix after symmetric Gaussian noise."""
  x = data.rows
  n, d = x.shape
  sigma = gaussian_sigma_for(eps, delta, 2.0 / n)
  g = rng.normal(0.0, sigma, size=(d, d))
  noise = np.triu(g) + np.triu(g, 1).T
  _, v = sorted_eigh(x.T @ x / n + noise)
  return v[:, :k]


def _clip_rows(data: DatasetMatrix, ratio: float) -> DatasetMatrix:
  radius = ratio * float(np.linalg.norm(data.rows, axis=1).max())
  rows = data.rows
  norms = np.linalg.norm(rows, axis=1, keepdims=True)
  rows = rows * np.minimum(1.0, radius / np.maximum(norms, 1e-300))
  return DatasetMatrix(rows, None, data.labels)


def _train(data: DatasetMatrix, eps_mech: float, config: ExperimentConfig,
           seed) -> np.ndarray:
  spec = MechanismSpec(MechanismKind.DP_GD, eps=eps_mech, mu=config.smoothness,
                       T=config.T, lr=config.lr, n=data.n)
  return run_dp_gd(spec, logistic_grad, data, np.zeros(data.d), seed)


def _run_one(config: ExperimentConfig, eps: float, seed: int) -> list:
  data = make_classification(config, seed)
  base = nonprivate_minimizer(data)
  base_loss = logistic_loss(base, data.rows, data.labels)
  ss = np.random.SeedSequence([seed, int(round(eps * 1000))])
  s_a, s_b, s_c, s_pca = ss.spawn(4)
  out = []

  def record(arm, w, mech_eps, status='ok', detail=''):
    loss = math.nan if w is None else logistic_loss(w, data.rows, data.labels)
    out.append(dict(eps=eps, seed=seed, arm=arm, loss=loss,
                    excess=loss - base_loss, mech_eps=mech_eps,
                    status=status, detail=detail))

  # (a) non-private PCA (rank mode) then DP-GD, budget via the composer.
  try:
    src = data if config.clip is None else _clip_rows(data, config.clip)
    e_a, _ = preprocessed_mech_eps(config, src, eps)
    a_basis = _pca(src, config.k)
    reduced = DatasetMatrix(src.rows @ a_basis @ a_basis.T, None, src.labels)
    record('preprocessed', _train(reduced, e_a, config, s_a), e_a)
  except InfeasibleError as e:
    record('preprocessed', None, math.nan, 'infeasible', str(e))
  # (b) DP-GD on raw data.
  e_b = plain_mech_eps(eps, config.delta)
  record('no_preprocess', _train(data, e_b, config, s_b), e_b)
  # (c) DP-PCA at (eps/2, delta/2) then DP-GD at (eps/2, delta/2).
  basis = dp_pca_basis(data, config.k, eps / 2, config.delta / 2,
                       np.random.default_rng(s_pca))
  reduced = DatasetMatrix(data.rows @ basis @ basis.T, None, data.labels)
  e_c = plain_mech_eps(eps / 2, config.delta / 2)
  record('dp_pca', _train(reduced, e_c, config, s_c), e_c)
  return out


def _pca(data: DatasetMatrix, k: int) -> np.ndarray:
  _, v = sorted_eigh(covariance(data.rows))
  return v[:, :k]


@dataclasses.dataclass
class ComparisonResult:
  rows: list

  def summary(self) -> dict:
    """(eps, arm) -> (mean excess loss, standard error, count)."""
    out = {}
    keys = sorted({(r['eps'], r['arm']) for r in self.rows})
    for key in keys:
      vals = np.array([r['excess'] for r in self.rows
                       if (r['eps'], r['arm']) == key and r['status'] == 'ok'])
      if vals.size == 0:
        out[key] = (math.nan, math.nan, 0)
        continue
      se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
      out[key] = (float(vals.mean()), se, int(vals.size))
    return out

  def infeasible(self) -> bool:
    return any(r['status'] == 'infeasible' for r in self.rows)

  def to_csv(self) -> str:
    buf = io.StringIO()
    fields = ['eps', 'seed', 'arm', 'loss', 'excess', 'mech_eps', 'status', 'detail']
    w = csv.DictWriter(buf, fieldnames=fields)
    w.writeheader()
    for r in self.rows:
      w.writerow(r)
    return buf.getvalue()


def run_comparison(config: ExperimentConfig) -> ComparisonResult:
  jobs = [(eps, seed) for eps in config.eps_list for seed in config.seeds]
  if config.workers > 1:
    with concurrent.futures.ProcessPoolExecutor(config.workers) as pool:
      parts = list(pool.map(_run_one, [config] * len(jobs), *zip(*jobs)))
  else:
    parts = [_run_one(config, eps, seed) for eps, seed in jobs]
  rows = [r for part in parts for r in part]
  rows.sort(key=lambda r: (r['eps'], r['seed'], ARMS.index(r['arm'])))
  return ComparisonResult(rows)


def default_sweeps() -> dict:
  """Sweep points for the three comparison curves."""
  return {
      'quantization': [dict(eta=eta, p=p, n=1000)
                       for eta in (0.01, 0.05, 0.1, 0.2, 0.3)
                       for p in (2, 10, 20, 50, 100)],
      'imputation': [dict(p=p, n=100) for p in (1, 2, 5, 10, 20, 30, 40, 50, 70, 90, 95)],
      'pca': [dict(n=int(n), delta_min=0.5)
              for n in (101, 200, 500, 1000, 2000, 5000, 10000)],
  }


def _sweep_bounds(name: str, pt: dict) -> tuple:
  if name == 'quantization':
    return pt['eta'] * pt['p'], SensitivityBounds(pt['eta'], pt['p'])
  if name == 'imputation':
    prof = CollectionProfile(n=pt['n'], p=pt['p'])
    return pt['p'] / pt['n'], sensitivity(PreprocSpec(PreprocKind.IMPUTE, model='mean'), prof)
  if name == 'pca':
    prof = CollectionProfile(n=pt['n'], delta_min_k=pt['delta_min'],
                             delta_min_1=pt['delta_min'])
    return pt['n'], sensitivity(PreprocSpec(PreprocKind.PCA_RANK, k=1), prof)
  raise ValueError(name)


def comparison_curves(profile_sweeps: Optional[dict] = None, eps: float = 1.0,
                      delta: float = 1e-5) -> dict:
  """name -> list of (x, ours, group_privacy) for a Gaussian mechanism."""
  sweeps = default_sweeps() if profile_sweeps is None else profile_sweeps
  spec = MechanismSpec(MechanismKind.GAUSSIAN, eps=eps)
  rdp, srdp = rdp_curve(spec), srdp_curve(spec)
  cc = ComposeConfig(target_delta=delta)
  out = {}
  for name, points in sweeps.items():
    rows = []
    for pt in points:
      x, sens = _sweep_bounds(name, pt)
      ours = compose_optimized(rdp, srdp, sens, cc).eps_dp
      group = int(round(sens.delta_inf)) + 1
      base = group_privacy_optimized(rdp, group, delta)[0]
      rows.append((float(x), float(ours), float(base)))
    out[name] = rows
  return out


def emit_comparison_curves(profile_sweeps: Optional[dict] = None, eps: float = 1.0,
                           delta: float = 1e-5) -> dict:
  """name -> CSV text with columns x, ours, group_privacy."""
  csvs = {}
  for name, rows in comparison_curves(profile_sweeps, eps, delta).items():
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(['x', 'ours', 'group_privacy'])
    for r in rows:
      w.writerow([repr(v) for v in r])
    csvs[name] = buf.getvalue()
  return csvs
