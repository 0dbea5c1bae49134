"""Shared domain types, dataset distances and privacy-loss curves."""

from __future__ import annotations

import csv
import dataclasses
import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

# Slack used when checking the unit-ball constraint on ingest.
NORM_TOL = 1e-9


class DimensionError(ValueError):
  """Two inputs have incompatible shapes."""


class DomainError(ValueError):
  """A curve was evaluated outside its valid order range."""


class ConfigurationError(ValueError):
  """A required parameter or profile field is missing or invalid."""


class UnsupportedError(ValueError):
  """The requested combination has no known guarantee."""


class InfeasibleError(ValueError):
  """No grid point produced a valid budget."""


class NumericError(ArithmeticError):
  """A numerical routine failed or produced non-finite values."""


def _frozen(a: np.ndarray) -> np.ndarray:
  a = np.array(a, copy=True)
  a.setflags(write=False)
  return a


@dataclasses.dataclass(frozen=True, eq=False)
class DatasetMatrix:
  """An n x d matrix of rows in the closed unit ball.

  Missing cells are flagged in ``missing_mask``; their entries in ``rows``
  are stored as 0 so that row norms ignore them.
  """

  rows: np.ndarray
  missing_mask: Optional[np.ndarray] = None
  labels: Optional[np.ndarray] = None

  def __post_init__(self):
    rows = np.asarray(self.rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < 1:
      raise DimensionError(f'rows must be a non-empty 2-D array, got {rows.shape}')
    if self.missing_mask is None:
      mask = np.zeros(rows.shape, dtype=bool)
    else:
      mask = np.asarray(self.missing_mask, dtype=bool)
      if mask.shape != rows.shape:
        raise DimensionError(
            f'missing_mask shape {mask.shape} != rows shape {rows.shape}')
    rows = np.where(mask, 0.0, rows)
    if not np.all(np.isfinite(rows)):
      raise ValueError('rows contain non-finite values outside the mask')
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms > 1.0 + NORM_TOL):
      bad = int(np.argmax(norms))
      raise DomainError(f'row {bad} has norm {norms[bad]:.6g} > 1')
    labels = None
    if self.labels is not None:
      labels = np.asarray(self.labels, dtype=np.float64).reshape(-1)
      if labels.shape[0] != rows.shape[0]:
        raise DimensionError('labels length must equal the number of rows')
      labels = _frozen(labels)
    object.__setattr__(self, 'rows', _frozen(rows))
    object.__setattr__(self, 'missing_mask', _frozen(mask))
    object.__setattr__(self, 'labels', labels)

  @property
  def n(self) -> int:
    return self.rows.shape[0]

  @property
  def d(self) -> int:
    return self.rows.shape[1]

  @property
  def has_missing(self) -> bool:
    return bool(self.missing_mask.any())

  def complete_rows(self) -> np.ndarray:
    """Returns the row array, refusing datasets with missing cells."""
    if self.has_missing:
      raise ValueError('dataset has missing entries')
    return self.rows

  def replace(self, rows=None, missing_mask=None, labels=dataclasses.MISSING):
    return DatasetMatrix(
        rows=self.rows if rows is None else rows,
        missing_mask=(self.missing_mask if missing_mask is None
                      else missing_mask),
        labels=self.labels if labels is dataclasses.MISSING else labels)

  @classmethod
  def from_rows(cls, rows, labels=None, normalize: bool = False):
    """Builds a dataset; NaN entries become missing cells."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim == 1:
      rows = rows.reshape(-1, 1)
    mask = np.isnan(rows)
    rows = np.where(mask, 0.0, rows)
    if normalize:
      rows = project_to_ball(rows)
    return cls(rows, mask, labels)

  def with_nan(self) -> np.ndarray:
    """Copy of the rows with NaN at missing cells."""
    return np.where(self.missing_mask, np.nan, self.rows)


def project_to_ball(rows: np.ndarray, radius: float = 1.0) -> np.ndarray:
  """Rescales rows with norm above ``radius`` back onto the sphere."""
  rows = np.asarray(rows, dtype=np.float64)
  norms = np.linalg.norm(np.nan_to_num(rows), axis=1, keepdims=True)
  scale = np.where(norms > radius, radius / np.maximum(norms, 1e-300), 1.0)
  return rows * scale


def read_csv(path, normalize: bool = False) -> DatasetMatrix:
  """Reads a headed CSV; empty cells are missing, a ``label`` last column is kept."""
  with open(path, newline='') as f:
    reader = csv.reader(f)
    header = next(reader)
    records = [r for r in reader if r]
  has_label = bool(header) and header[-1].strip().lower() == 'label'
  width = len(header) - (1 if has_label else 0)
  values = np.full((len(records), width), np.nan)
  labels = np.zeros(len(records)) if has_label else None
  for i, rec in enumerate(records):
    if len(rec) != len(header):
      raise DimensionError(f'line {i + 2}: expected {len(header)} fields')
    for j in range(width):
      cell = rec[j].strip()
      if cell:
        values[i, j] = float(cell)
    if has_label:
      labels[i] = float(rec[-1])
  return DatasetMatrix.from_rows(values, labels=labels, normalize=normalize)


def write_csv(data: DatasetMatrix, path, header: Optional[Sequence[str]] = None):
  if header is None:
    header = [f'x{j}' for j in range(data.d)]
  with open(path, 'w', newline='') as f:
    w = csv.writer(f)
    w.writerow(list(header) + (['label'] if data.labels is not None else []))
    for i in range(data.n):
      cells = ['' if data.missing_mask[i, j] else repr(float(data.rows[i, j]))
               for j in range(data.d)]
      if data.labels is not None:
        cells.append(repr(float(data.labels[i])))
      w.writerow(cells)


def _check_same_shape(a: DatasetMatrix, b: DatasetMatrix):
  if a.rows.shape != b.rows.shape:
    raise DimensionError(f'shape mismatch: {a.rows.shape} vs {b.rows.shape}')


def d12_distance(a: DatasetMatrix, b: DatasetMatrix) -> float:
  """Sum of row-wise Euclidean distances."""
  _check_same_shape(a, b)
  if a.has_missing or b.has_missing:
    raise ValueError('d12_distance is undefined for masked datasets')
  return float(np.linalg.norm(a.rows - b.rows, axis=1).sum())


def hamming_distance(a: DatasetMatrix, b: DatasetMatrix) -> int:
  """Number of rows that differ in a value or a mask bit."""
  _check_same_shape(a, b)
  diff = (a.rows != b.rows) | (a.missing_mask != b.missing_mask)
  return int(diff.any(axis=1).sum())


@dataclasses.dataclass(frozen=True)
class AlphaDomain:
  """The order range lo < alpha <= hi, with a label naming the constraint."""

  lo: float = 1.0
  hi: float = math.inf
  label: str = 'alpha > 1'

  def contains(self, alpha: float) -> bool:
    return alpha > self.lo and alpha <= self.hi

  __contains__ = contains

  def check(self, alpha: float):
    if not self.contains(alpha):
      raise DomainError(
          f'alpha={alpha:g} violates {self.label} (valid: ({self.lo:g}, {self.hi:g}])')


@dataclasses.dataclass(frozen=True)
class RdpCurve:
  """A closed-form RDP curve alpha -> eps(alpha).

  ``at_infinity`` is the alpha -> inf limit; it is ``inf`` when the curve
  is unbounded.
  """

  fn: Callable[[float], float]
  domains: tuple = (AlphaDomain(),)
  at_infinity: float = math.inf
  name: str = ''

  def check(self, alpha: float):
    for dom in self.domains:
      dom.check(alpha)

  def in_domain(self, alpha: float) -> bool:
    return all(dom.contains(alpha) for dom in self.domains)

  def __call__(self, alpha: float) -> float:
    self.check(alpha)
    if math.isinf(alpha):
      return self.at_infinity
    return float(self.fn(alpha))


def _default_srdp_domains(tau: float) -> tuple:
  return (AlphaDomain(),)


def _unbounded_limit(tau: float) -> float:
  return 0.0 if tau == 0 else math.inf


@dataclasses.dataclass(frozen=True)
class SrdpCurve:
  """A closed-form smooth-RDP curve (alpha, tau) -> eps(alpha, tau).

  ``domains`` maps tau to a tuple of AlphaDomain constraints, so that the
  valid order range may shrink with tau. The value at tau = 0 is exactly 0.
  """

  fn: Callable[[float, float], float]
  domains: Callable[[float], tuple] = _default_srdp_domains
  at_infinity: Callable[[float], float] = _unbounded_limit
  name: str = ''

  def check(self, alpha: float, tau: float):
    if tau < 0:
      raise DomainError(f'tau must be non-negative, got {tau}')
    for dom in self.domains(tau):
      dom.check(alpha)

  def in_domain(self, alpha: float, tau: float) -> bool:
    return tau >= 0 and all(dom.contains(alpha) for dom in self.domains(tau))

  def __call__(self, alpha: float, tau: float) -> float:
    self.check(alpha, tau)
    if tau == 0:
      return 0.0
    if math.isinf(alpha):
      return float(self.at_infinity(tau))
    return float(self.fn(alpha, tau))


def rdp_sum(*curves: RdpCurve) -> RdpCurve:
  """Sequential composition: the orderwise sum of RDP curves."""
  doms = tuple(d for c in curves for d in c.domains)
  return RdpCurve(
      fn=lambda a: sum(c.fn(a) for c in curves),
      domains=doms,
      at_infinity=sum(c.at_infinity for c in curves),
      name='+'.join(c.name for c in curves))


def srdp_sum(*curves: SrdpCurve) -> SrdpCurve:
  """Sequential composition: the pointwise sum of SRDP curves."""
  return SrdpCurve(
      fn=lambda a, t: sum(c.fn(a, t) for c in curves),
      domains=lambda t: tuple(d for c in curves for d in c.domains(t)),
      at_infinity=lambda t: sum(c.at_infinity(t) for c in curves),
      name='+'.join(c.name for c in curves))


def check_curve_monotonic(curve, alphas: Iterable[float],
                          taus: Optional[Iterable[float]] = None,
                          tol: float = 1e-12) -> bool:
  """True iff the curve is non-decreasing along every grid axis.

  Raises DomainError when a grid point falls outside the curve's domain.
  """
  alphas = sorted(alphas)
  if isinstance(curve, RdpCurve):
    vals = [curve(a) for a in alphas]
    return all(v1 <= v2 + tol * max(1.0, abs(v1)) for v1, v2 in zip(vals, vals[1:]))
  if taus is None:
    raise ValueError('an SRDP curve needs a tau grid')
  taus = sorted(taus)
  grid = np.array([[curve(a, t) for t in taus] for a in alphas])
  slack = tol * np.maximum(1.0, np.abs(grid))
  ok_alpha = np.all(grid[1:, :] >= grid[:-1, :] - slack[:-1, :])
  ok_tau = np.all(grid[:, 1:] >= grid[:, :-1] - slack[:, :-1])
  return bool(ok_alpha and ok_tau)


@dataclasses.dataclass(frozen=True)
class SensitivityBounds:
  """Pre-processing sensitivity: per-point displacement and changed-row count."""

  delta2: float
  delta_inf: float

  def __post_init__(self):
    if self.delta2 < 0 or self.delta_inf < 0:
      raise ValueError('sensitivities must be non-negative')

  @property
  def tau(self) -> float:
    return float(self.delta2 * self.delta_inf)


@dataclasses.dataclass(frozen=True)
class CollectionProfile:
  """Parameters describing the admissible dataset collection.

  Fields left as None are unknown; operations that need them raise
  ConfigurationError.
  """

  n: int
  p: int = 0
  eta: Optional[float] = None
  max_cluster: Optional[int] = None
  delta_min_k: Optional[float] = None
  delta_min_1: Optional[float] = None
  sigma_min: Optional[float] = None
  lambda_min: Optional[float] = None
  lambda_max: Optional[float] = None
  # (max over the collection of the upper order statistic,
  #  min over the collection of the lower order statistic), per model.
  x_order_stats: Optional[tuple] = None
  gamma: Optional[float] = None
  k_tilde: Optional[int] = None
  consecutive_diffs: bool = False
  add_remove: bool = False

  def __post_init__(self):
    if self.n < 1:
      raise ValueError('n must be positive')
    if self.p < 0 or self.p > self.n:
      raise ValueError('need 0 <= p <= n')
    for f in dataclasses.fields(self):
      v = getattr(self, f.name)
      if isinstance(v, (int, float)) and not isinstance(v, bool) and v < 0:
        raise ValueError(f'{f.name} must be non-negative')
    if self.gamma is not None and self.gamma < 1:
      raise ValueError('gamma = n/k must be >= 1')

  def require(self, *names: str):
    missing = [nm for nm in names if getattr(self, nm) is None]
    if missing:
      raise ConfigurationError(f'profile is missing {", ".join(missing)}')
    return tuple(getattr(self, nm) for nm in names)

  def to_dict(self) -> dict:
    return dataclasses.asdict(self)

  @classmethod
  def from_dict(cls, d: dict) -> 'CollectionProfile':
    d = dict(d)
    if d.get('x_order_stats') is not None:
      d['x_order_stats'] = tuple(d['x_order_stats'])
    return cls(**d)


@dataclasses.dataclass(frozen=True)
class PrivacyBudget:
  """An RDP statement at one order and its (eps, delta)-DP conversion."""

  alpha: float
  eps_hat: float
  eps_dp: Optional[float] = None
  delta_dp: Optional[float] = None
  provenance: dict = dataclasses.field(default_factory=dict)

  def __post_init__(self):
    converted = self.provenance.get('conversion', 'rdp') == 'rdp'
    if (converted and self.eps_dp is not None and self.delta_dp is not None
        and math.isfinite(self.alpha)):
      expect = self.eps_hat + math.log(1 / self.delta_dp) / (self.alpha - 1)
      if not math.isclose(self.eps_dp, expect, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError('eps_dp is inconsistent with the RDP conversion')

  def to_dict(self) -> dict:
    return dataclasses.asdict(self)
