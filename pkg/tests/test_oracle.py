import math
import warnings

import numpy as np
import pytest
from scipy import integrate, stats

from preproc_dp.core import DatasetMatrix, UnsupportedError
from preproc_dp.mechanisms import MechanismSpec, rdp_curve
from preproc_dp.oracle import (DivergenceEstimate, EstimatorWarning, brute_force_budget_audit,
                               random_neighbor_pairs, renyi_gaussian, renyi_laplace, renyi_mc)
from preproc_dp.preprocessing import PreprocSpec


def test_renyi_gaussian_examples():
  assert renyi_gaussian([0.3, 0.1], [0.3, 0.1], 1.0, 3) == 0.0
  assert renyi_gaussian([1.0], [0.0], 1.0, 2) == 1.0
  assert renyi_gaussian([0.6, 0.8], [0, 0], 2.0, 4) == pytest.approx(0.5)


def test_renyi_gaussian_vs_mc():
  rng = np.random.default_rng(0)
  mu = rng.uniform(-1, 1, 2)
  # Project onto the mean-difference direction: the divergence is one-dimensional.
  shift = float(np.linalg.norm(mu))
  est = renyi_mc(lambda r, m: r.normal(shift, 1, m), lambda r, m: r.normal(0, 1, m), 2,
                 rng_seed=1)
  assert abs(est.value - renyi_gaussian(mu, [0, 0], 1.0, 2)) <= 3 * est.ci_width


def laplace_quad(shift, scale, alpha):
  lp = stats.laplace(shift, scale).logpdf
  lq = stats.laplace(0, scale).logpdf
  f = lambda x: alpha * lp(x) + (1 - alpha) * lq(x)
  top = max(f(x) for x in np.linspace(-5, 5 + shift, 2001))
  val, _ = integrate.quad(lambda x: math.exp(f(x) - top), -60, 60, points=[0, shift], limit=200)
  return (math.log(val) + top) / (alpha - 1)


@pytest.mark.parametrize('shift,scale,alpha', [(1, 1, 2), (0.5, 2, 5), (1, 1, 64), (3, 1, 1.5)])
def test_renyi_laplace_vs_quadrature(shift, scale, alpha):
  assert renyi_laplace(shift, scale, alpha) == pytest.approx(laplace_quad(shift, scale, alpha),
                                                             rel=1e-7)


def test_renyi_laplace_limits():
  assert renyi_laplace(0, 1, 5) == 0
  assert renyi_laplace(1, 1, math.inf) == 1
  assert renyi_laplace(1, 1, 64) <= 1


def test_mc_identical_samplers():
  s = lambda r, m: r.normal(0, 1, m)
  est = renyi_mc(s, s, 3, rng_seed=2)
  assert est.value <= 3 * est.ci_width + 1e-3
  assert est.method == 'histogram_mc' and est.samples == 100_000


def test_mc_laplace_pure_dp_bound():
  est = renyi_mc(lambda r, m: r.laplace(1, 1, m), lambda r, m: r.laplace(0, 1, m), 64,
                 rng_seed=3)
  assert est.value <= 1 + est.ci_width


def test_mc_warns_when_support_disjoint():
  with pytest.warns(EstimatorWarning):
    est = renyi_mc(lambda r, m: r.uniform(0, 2, m), lambda r, m: r.uniform(0, 1, m), 2,
                   rng_seed=0, n_boot=20)
  assert est.ci_width > 0


def test_mc_sample_floor():
  with pytest.raises(ValueError):
    renyi_mc(lambda r, m: r.normal(size=m), lambda r, m: r.normal(size=m), 2, n_samples=100)


def test_estimate_invariants():
  with pytest.raises(ValueError):
    DivergenceEstimate(-1.0, 'x', 1, 0.0)


def test_audit_identity_is_plain_divergence():
  rng = np.random.default_rng(0)
  pairs = random_neighbor_pairs(rng, 20, 2, 100)
  mech = MechanismSpec('gaussian', eps=1, global_sensitivity=2 / 20)
  v = brute_force_budget_audit(mech, PreprocSpec('identity'), pairs, 8)
  direct = max(renyi_gaussian(a.rows[:, 0].mean(), b.rows[:, 0].mean(), 0.1, 8) for a, b in pairs)
  assert v == direct <= rdp_curve(mech)(8)


def test_audit_quantize_without_clusters_equals_identity():
  rng = np.random.default_rng(1)
  pairs = random_neighbor_pairs(rng, 10, 2, 50)
  mech = MechanismSpec('laplace', eps=1, global_sensitivity=0.2)
  a = brute_force_budget_audit(mech, PreprocSpec('identity'), pairs, 4)
  # eta far below the minimum pairwise distance: every cluster is a singleton.
  q = brute_force_budget_audit(mech, PreprocSpec('quantize', eta=1e-9), pairs, 4)
  assert a == q


def test_audit_rejects_other_mechanisms():
  with pytest.raises(UnsupportedError):
    brute_force_budget_audit(MechanismSpec('dp_gd', eps=1, n=5), PreprocSpec('identity'), [], 2)


def test_neighbor_pairs_shape():
  rng = np.random.default_rng(2)
  for a, b in random_neighbor_pairs(rng, 6, 3, 20, p_missing=2):
    diff = np.flatnonzero((a.rows != b.rows).any(axis=1))
    assert len(diff) == 1
    assert not a.missing_mask[diff[0]].any()
    assert a.missing_mask.sum() == 2
    assert np.linalg.norm(a.rows, axis=1).max() <= 1
