"""Data-dependent pre-processing steps and their sensitivity bounds."""

from __future__ import annotations

import dataclasses
import enum
import json
import math
from typing import Iterable, Optional, Sequence

import numpy as np

from preproc_dp.core import (CollectionProfile, ConfigurationError, DatasetMatrix,
                             NumericError, SensitivityBounds, UnsupportedError,
                             hamming_distance)

# Distances within this slack of a ball radius count as on the boundary.
_TOL = 1e-12


class ImputationError(ValueError):
  pass


class ScalingError(ValueError):
  pass


class PreprocKind(str, enum.Enum):
  DEDUP = 'dedup'
  QUANTIZE = 'quantize'
  IMPUTE = 'impute'
  PCA_DIM = 'pca_dim'
  PCA_RANK = 'pca_rank'
  STANDARD_SCALE = 'standard_scale'
  MINMAX_SCALE = 'minmax_scale'
  IDENTITY = 'identity'


IMPUTE_MODELS = ('mean', 'median', 'trimmed_mean', 'linear_regression')


@dataclasses.dataclass(frozen=True)
class PreprocSpec:
  kind: PreprocKind
  eta: Optional[float] = None
  k: Optional[int] = None
  model: Optional[str] = None
  m: int = 0

  def __post_init__(self):
    kind = PreprocKind(self.kind)
    object.__setattr__(self, 'kind', kind)
    if kind in (PreprocKind.DEDUP, PreprocKind.QUANTIZE):
      if self.eta is None or not self.eta > 0:
        raise ValueError(f'{kind.value} needs eta > 0')
    if kind in (PreprocKind.PCA_DIM, PreprocKind.PCA_RANK):
      if self.k is None or self.k < 1:
        raise ValueError('PCA needs k >= 1')
    if kind == PreprocKind.IMPUTE:
      if self.model not in IMPUTE_MODELS:
        raise ValueError(f'impute model must be one of {IMPUTE_MODELS}')
      if self.m < 0:
        raise ValueError('m must be non-negative')

  def to_dict(self) -> dict:
    d = dataclasses.asdict(self)
    d['kind'] = self.kind.value
    return d

  @classmethod
  def from_dict(cls, d: dict) -> 'PreprocSpec':
    return cls(**d)

  @classmethod
  def from_json(cls, s: str) -> 'PreprocSpec':
    return cls.from_dict(json.loads(s))


@dataclasses.dataclass(frozen=True)
class GoodCluster:
  center: int
  members: frozenset

  @property
  def size(self) -> int:
    return len(self.members)


def _pairwise(x: np.ndarray) -> np.ndarray:
  return np.linalg.norm(x[:, None, :] - x[None, :, :], axis=-1)


def find_good_clusters(data: DatasetMatrix, eta: float) -> list:
  """All balls B(x, eta) whose (eta, 3 eta] annulus holds no point, one per center."""
  x = data.complete_rows()
  dist = _pairwise(x)
  out = []
  for i in range(data.n):
    row = dist[i]
    if np.any((row > eta + _TOL) & (row <= 3 * eta + _TOL)):
      continue
    members = frozenset(np.flatnonzero(row <= eta + _TOL).tolist())
    out.append(GoodCluster(i, members))
  return out


def _cluster_assignment(data: DatasetMatrix, eta: float) -> np.ndarray:
  """Maps each row to the representative it collapses onto (itself if none)."""
  rep = np.arange(data.n)
  clusters = find_good_clusters(data, eta)
  # Larger clusters first, ties by lowest center index. Two good clusters
  # either coincide or are disjoint, so the first center seen for a member
  # set is its representative.
  clusters.sort(key=lambda c: (-c.size, c.center))
  claimed = np.zeros(data.n, dtype=bool)
  for c in clusters:
    if c.size < 2 or claimed[c.center]:
      continue
    for j in c.members:
      if not claimed[j]:
        rep[j] = c.center
        claimed[j] = True
  return rep


def _dedup_keep(data: DatasetMatrix, eta: float) -> np.ndarray:
  rep = _cluster_assignment(data, eta)
  return rep == np.arange(data.n)


def apply_dedup(data: DatasetMatrix, eta: float) -> DatasetMatrix:
  """Keeps one center per good cluster and drops the other members."""
  keep = _dedup_keep(data, eta)
  labels = None if data.labels is None else data.labels[keep]
  return DatasetMatrix(data.rows[keep], data.missing_mask[keep], labels)


def apply_quantize(data: DatasetMatrix, eta: float) -> DatasetMatrix:
  """Moves every member of a good cluster onto the cluster center."""
  rep = _cluster_assignment(data, eta)
  return data.replace(rows=data.rows[rep])


def _impute_value(vals: np.ndarray, model: str, m: int) -> float:
  if model == 'mean':
    return float(vals.mean())
  if model == 'median':
    return float(np.median(vals))
  if model == 'trimmed_mean':
    s = np.sort(vals)
    if len(s) - 2 * m < 1:
      raise ImputationError(f'cannot trim {m} from each side of {len(s)} values')
    return float(s[m:len(s) - m].mean())
  raise ValueError(model)


def _fit_regression(x: np.ndarray, complete: np.ndarray, j: int) -> np.ndarray:
  others = [c for c in range(x.shape[1]) if c != j]
  xr = x[complete][:, others]
  y = x[complete][:, j]
  gram = xr.T @ xr
  if xr.shape[0] == 0 or np.linalg.matrix_rank(gram) < len(others):
    raise NumericError(f'regression for feature {j} is singular')
  return np.linalg.solve(gram, xr.T @ y)


def apply_impute(data: DatasetMatrix, model: str, m: int = 0) -> DatasetMatrix:
  """Fills missing cells from a model fitted on the observed data."""
  if model not in IMPUTE_MODELS:
    raise ValueError(f'unknown imputation model {model!r}')
  if not data.has_missing:
    return data
  x = data.rows.copy()
  mask = data.missing_mask
  n, d = x.shape
  if model == 'linear_regression':
    if d < 2:
      raise ImputationError('regression imputation needs at least two features')
    complete = ~mask.any(axis=1)
    for j in range(d):
      miss = mask[:, j]
      if not miss.any():
        continue
      beta = _fit_regression(data.rows, complete, j)
      others = [c for c in range(d) if c != j]
      rows = np.flatnonzero(miss)
      for i in rows:
        if mask[i, others].any():
          raise ImputationError(f'row {i} lacks the regressors for feature {j}')
      x[rows, j] = data.rows[np.ix_(rows, others)] @ beta
  else:
    for j in range(d):
      miss = mask[:, j]
      if not miss.any():
        continue
      obs = data.rows[~miss, j]
      if obs.size == 0:
        raise ImputationError(f'feature {j} has no observed values')
      x[miss, j] = _impute_value(obs, model, m)
  # Model fills can leave the unit ball (e.g. regression); project back.
  norms = np.linalg.norm(x, axis=1, keepdims=True)
  x = np.where(norms > 1, x / np.maximum(norms, 1e-300), x)
  return DatasetMatrix(x, None, data.labels)


def covariance(x: np.ndarray) -> np.ndarray:
  """Centered empirical covariance with 1/n normalisation."""
  xc = x - x.mean(axis=0)
  return xc.T @ xc / x.shape[0]


def sorted_eigh(cov: np.ndarray):
  """Eigenpairs in descending order with a fixed sign convention."""
  try:
    w, v = np.linalg.eigh(cov)
  except np.linalg.LinAlgError as e:
    raise NumericError(f'eigendecomposition failed: {e}') from e
  order = np.argsort(w)[::-1]
  w, v = w[order], v[:, order]
  idx = np.argmax(np.abs(v), axis=0)
  signs = np.sign(v[idx, np.arange(v.shape[1])])
  signs[signs == 0] = 1.0
  return w, v * signs


def pca_basis(data: DatasetMatrix, k: int) -> np.ndarray:
  x = data.complete_rows()
  if not 1 <= k <= data.d:
    raise ValueError(f'need 1 <= k <= d, got k={k}, d={data.d}')
  _, v = sorted_eigh(covariance(x))
  return v[:, :k]


def apply_pca(data: DatasetMatrix, k: int, mode: str = 'rank') -> DatasetMatrix:
  """Projects onto the top-k covariance eigenvectors.

  ``mode='dim'`` returns the k coordinates; ``mode='rank'`` returns the
  projection back in the original d dimensions.
  """
  a = pca_basis(data, k)
  x = data.rows
  if mode == 'dim':
    out = x @ a
  elif mode == 'rank':
    out = x @ a @ a.T
  else:
    raise ValueError(f"mode must be 'dim' or 'rank', got {mode!r}")
  return DatasetMatrix(out, None, data.labels)


def apply_scale(data: DatasetMatrix, kind: str = 'standard') -> DatasetMatrix:
  """Per-feature standard or min-max scaling.

  Scaled rows generally leave the unit ball, so the result is a plain array.
  """
  x = data.complete_rows()
  if kind == 'standard':
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    if np.any(sd <= 0):
      raise ScalingError('a feature has zero standard deviation')
    return (x - mu) / sd
  if kind == 'minmax':
    lo, hi = x.min(axis=0), x.max(axis=0)
    if np.any(hi <= lo):
      raise ScalingError('a feature is constant')
    return (x - lo) / (hi - lo)
  raise ValueError(f'unknown scaling kind {kind!r}')


def transform(spec: PreprocSpec, data: DatasetMatrix):
  """Applies a PreprocSpec; scaling returns an array, the rest a DatasetMatrix."""
  k = spec.kind
  if k == PreprocKind.IDENTITY:
    return data
  if k == PreprocKind.DEDUP:
    return apply_dedup(data, spec.eta)
  if k == PreprocKind.QUANTIZE:
    return apply_quantize(data, spec.eta)
  if k == PreprocKind.IMPUTE:
    return apply_impute(data, spec.model, spec.m)
  if k == PreprocKind.PCA_DIM:
    return apply_pca(data, spec.k, 'dim')
  if k == PreprocKind.PCA_RANK:
    return apply_pca(data, spec.k, 'rank')
  if k == PreprocKind.STANDARD_SCALE:
    return apply_scale(data, 'standard')
  if k == PreprocKind.MINMAX_SCALE:
    return apply_scale(data, 'minmax')
  raise ValueError(k)


def pca_delta_bar(n: int, gap: float) -> float:
  return 4 * (3 * n + 2) / (n * (n - 1) * gap)


def sensitivity(spec: PreprocSpec, profile: CollectionProfile,
                strict: bool = False) -> SensitivityBounds:
  """Analytic (Delta_2, Delta_inf) of a pre-processing step over a collection.

  Quantization reports Delta_2 = eta by default. That value bounds how far a
  row moves from its own position, but when the swapped row is a cluster's
  representative a shared row can land on two representatives up to 2 eta
  apart. ``strict=True`` returns the sound 2 eta instead.
  """
  k = spec.kind
  n, p = profile.n, profile.p
  if k == PreprocKind.IDENTITY:
    return SensitivityBounds(0.0, 0)
  if k in (PreprocKind.DEDUP, PreprocKind.QUANTIZE):
    (mc,) = profile.require('max_cluster')
    d2 = 1.0 if k == PreprocKind.DEDUP else float(spec.eta) * (2 if strict else 1)
    return SensitivityBounds(d2, min(2 * mc, n))
  if k == PreprocKind.IMPUTE:
    if spec.model == 'mean':
      if n - p < 1:
        raise ConfigurationError('mean imputation needs n > p')
      return SensitivityBounds(2.0 / (n - p), p)
    if spec.model == 'median':
      hi, lo = profile.require('x_order_stats')[0]
      return SensitivityBounds(max(hi - lo, 0.0), p)
    if spec.model == 'trimmed_mean':
      hi, lo = profile.require('x_order_stats')[0]
      denom = n - 2 * spec.m - p
      if denom < 1:
        raise ConfigurationError('trimmed mean needs n - 2m - p >= 1')
      return SensitivityBounds(max(hi - lo, 0.0) / denom, p)
    if spec.model == 'linear_regression':
      lmin, lmax = profile.require('lambda_min', 'lambda_max')
      if lmin <= 0:
        raise ConfigurationError('lambda_min must be positive')
      return SensitivityBounds(lmax ** 2 / ((lmax + 1) * lmin ** 2) + 1 / lmin, p)
  if k in (PreprocKind.PCA_DIM, PreprocKind.PCA_RANK):
    dk, d1 = profile.require('delta_min_k', 'delta_min_1')
    gap = min(dk, d1)
    if gap <= 0:
      raise ConfigurationError('minimum eigen-gaps must be positive')
    bar = pca_delta_bar(n, gap)
    return SensitivityBounds(2 * bar if k == PreprocKind.PCA_DIM else bar, n)
  if k == PreprocKind.STANDARD_SCALE:
    (s,) = profile.require('sigma_min')
    if s <= 0:
      raise ConfigurationError('sigma_min must be positive')
    return SensitivityBounds(2 / (s ** 3 * n) + 2 / (n * s), n)
  if k == PreprocKind.MINMAX_SCALE:
    raise UnsupportedError('no L2 sensitivity is known for min-max scaling')
  raise ValueError(k)


def _rowwise_images(spec: PreprocSpec, data: DatasetMatrix):
  """Per input row: the processed row, or None when the row is removed."""
  if spec.kind == PreprocKind.DEDUP:
    keep = _dedup_keep(data, spec.eta)
    return [data.rows[i] if keep[i] else None for i in range(data.n)]
  out = transform(spec, data)
  arr = out if isinstance(out, np.ndarray) else out.rows
  if arr.shape[0] != data.n:
    raise ValueError('row count changed unexpectedly')
  return list(arr)


def _differing_row(a: DatasetMatrix, b: DatasetMatrix) -> int:
  diff = ((a.rows != b.rows) | (a.missing_mask != b.missing_mask)).any(axis=1)
  idx = np.flatnonzero(diff)
  if len(idx) != 1:
    raise ValueError(f'pair is not neighboring (hamming distance {len(idx)})')
  return int(idx[0])


def empirical_sensitivity(spec: PreprocSpec, pairs: Iterable,
                          tol: float = 1e-12) -> SensitivityBounds:
  """Largest displacement and changed-row count observed over neighbor pairs.

  Only the rows the two datasets share are compared. A row that survives on
  one side only counts as displacement 1.
  """
  d2, dinf = 0.0, 0
  for a, b in pairs:
    if a.rows.shape != b.rows.shape:
      raise ValueError('neighboring datasets must have equal shape')
    swapped = _differing_row(a, b)
    ia, ib = _rowwise_images(spec, a), _rowwise_images(spec, b)
    changed = 0
    for i in range(a.n):
      if i == swapped:
        continue
      u, v = ia[i], ib[i]
      if u is None and v is None:
        continue
      if u is None or v is None:
        dist = 1.0
      else:
        dist = float(np.linalg.norm(u - v))
      if dist > tol:
        changed += 1
        d2 = max(d2, dist)
    dinf = max(dinf, changed)
  return SensitivityBounds(d2, dinf)


def max_good_cluster(collection: Iterable[DatasetMatrix], eta: float) -> int:
  return max(max((c.size for c in find_good_clusters(s, eta)), default=1)
             for s in collection)


def order_stat_profile(collection: Iterable[DatasetMatrix], model: str,
                       m: int = 0) -> tuple:
  """(hi, lo) order statistics over a collection for median / trimmed-mean bounds.

  Median: hi is the largest upper median and lo the smallest lower median of
  any feature. Trimmed mean: hi is the largest x_(n_j - m + 1) and lo the
  smallest x_(max(m, 1)), the extreme values a one-point swap can bring into
  the kept window.
  """
  hi, lo = -math.inf, math.inf
  for s in collection:
    for j in range(s.d):
      v = np.sort(s.rows[~s.missing_mask[:, j], j])
      nj = len(v)
      if nj == 0:
        continue
      if model == 'median':
        up, down = v[nj // 2], v[(nj - 1) // 2]
      elif model == 'trimmed_mean':
        up, down = v[min(nj - m, nj - 1)], v[max(m, 1) - 1]
      else:
        raise ValueError(model)
      hi, lo = max(hi, up), min(lo, down)
  return (float(hi), float(lo))


def min_feature_std(collection: Iterable[DatasetMatrix]) -> float:
  return float(min(s.complete_rows().std(axis=0).min() for s in collection))
