import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import formulas as F
from preproc_dp.core import CollectionProfile, ConfigurationError, DatasetMatrix, DomainError
from preproc_dp.mechanisms import (MechanismKind, MechanismSpec, ValidityError, gd_sigma,
                                   rdp_curve, run_dp_gd, run_exponential, run_gaussian,
                                   run_laplace, sgd_iter_sigma, srdp_curve, subsample_amplify)
from preproc_dp.oracle import renyi_gaussian


def mean_fn(data):
  return data.rows.mean(axis=0)


def small_data(seed=0, n=3, d=2):
  rng = np.random.default_rng(seed)
  x = rng.uniform(-0.5, 0.5, (n, d))
  return DatasetMatrix(x, labels=np.where(rng.random(n) < 0.5, -1.0, 1.0))


# Frozen closed-form values.

def test_rdp_reference_values():
  assert rdp_curve(MechanismSpec('gaussian', eps=1))(2) == 1.0
  lap = rdp_curve(MechanismSpec('laplace', eps=0.5))
  assert lap(2) == lap(100) == lap(math.inf) == 0.5
  assert rdp_curve(MechanismSpec('dp_gd', eps=1, n=50))(3) == 6.0


def test_srdp_gaussian_reference_value():
  assert srdp_curve(MechanismSpec('gaussian', eps=1))(2, 1) == 1.0


def test_srdp_sgd_iter_frozen_oracle():
  spec = MechanismSpec('dp_sgd_iter', eps=1, lr=100, n=100)
  prof = CollectionProfile(n=100, k_tilde=1, consecutive_diffs=True)
  # Frozen from tests/oracles/formulas.py::sgd_iter_srdp(2, 1, 100, 1).
  assert srdp_curve(spec, prof)(2, 1) == pytest.approx(1.0021606868913213, rel=1e-12)


def test_srdp_needs_profile_fields():
  with pytest.raises(ConfigurationError, match='gamma'):
    srdp_curve(MechanismSpec('dp_sgd_samp', eps=1, n=10, T=4), CollectionProfile(n=10))
  with pytest.raises(ConfigurationError):
    srdp_curve(MechanismSpec('dp_sgd_iter', eps=1, n=10, lr=1),
               CollectionProfile(n=10, k_tilde=1))


def test_sigma_enforced():
  s = MechanismSpec('dp_gd', eps=2, T=16, n=10)
  assert s.sigma == pytest.approx(gd_sigma(1, 16, 2, 10)) == pytest.approx(0.2)
  with pytest.raises(ValueError):
    MechanismSpec('dp_gd', eps=2, T=16, n=10, sigma=0.5)
  assert MechanismSpec('dp_sgd_iter', eps=1, lr=0.5, n=64).sigma == pytest.approx(
      sgd_iter_sigma(1, 0.5, 1, 64))
  MechanismSpec('dp_sgd_samp', eps=1, T=4, n=10, sigma=5.0)
  with pytest.raises(ValueError):
    MechanismSpec('dp_sgd_samp', eps=1, T=4, n=10, sigma=0.01)


def test_spec_json_roundtrip():
  s = MechanismSpec('dp_sgd_samp', eps=0.5, T=9, n=30, batch=5)
  assert MechanismSpec.from_json(s.to_json()) == s


def test_sgd_samp_domain():
  n, eps, T = 100, 1.0, 10 ** 6
  curve = rdp_curve(MechanismSpec('dp_sgd_samp', eps=eps, T=T, n=n))
  amax = min(math.sqrt(T) / eps, T / (eps * n) ** 2 * math.log(n * n * eps / math.sqrt(T)))
  assert curve(1 + 0.99 * (amax - 1)) > 0
  with pytest.raises(DomainError):
    curve(amax * 1.01)


def test_sgd_iter_domain_names_constraint():
  spec = MechanismSpec('dp_sgd_iter', eps=2, lr=1, n=100)
  prof = CollectionProfile(n=100, k_tilde=1, consecutive_diffs=True)
  with pytest.raises(DomainError, match='sigma'):
    srdp_curve(spec, prof)(2, 1)


@given(st.floats(1.01, 200), st.floats(0.05, 5), st.floats(0.1, 3), st.floats(0.1, 3))
def test_gaussian_curves_agree_at_unit_ratio(alpha, eps, L, df):
  spec = MechanismSpec('gaussian', eps=eps, L=L, global_sensitivity=df)
  assert srdp_curve(spec)(alpha, df / L) == pytest.approx(rdp_curve(spec)(alpha), rel=1e-12)


@given(st.sampled_from(['gaussian', 'laplace', 'exponential', 'dp_gd']),
       st.floats(1.01, 64), st.floats(0.05, 4))
def test_srdp_zero_at_tau_zero(kind, alpha, eps):
  assert srdp_curve(MechanismSpec(kind, eps=eps, n=50))(alpha, 0.0) == 0.0


@given(st.sampled_from(['gaussian', 'laplace', 'dp_gd']), st.floats(0.1, 3))
def test_srdp_monotone(kind, eps):
  curve = srdp_curve(MechanismSpec(kind, eps=eps, n=50))
  vals = [[curve(a, t) for t in (0, 0.1, 1, 3)] for a in (1.5, 2, 4, 16)]
  assert np.all(np.diff(vals, axis=0) >= 0) and np.all(np.diff(vals, axis=1) >= 0)


# Subsampling amplification.

def linear_curve(coef):
  return srdp_curve(MechanismSpec('laplace', eps=coef))


def test_subsample_b1_k1_doubles():
  base = linear_curve(0.1)
  amp = subsample_amplify(base, n=100, B=1, k=1)
  assert amp(3, 2.0) == pytest.approx(2 * base(3, 2.0))
  assert amp(3, 0.0) == 0.0


def test_subsample_frozen_mixture():
  amp = subsample_amplify(linear_curve(0.3), n=100, B=1, k=10)
  # Frozen from tests/oracles/formulas.py::amplified with base 0.3*tau.
  assert amp(1.5, 2.0) == pytest.approx(0.21719999999999995, rel=1e-12)
  assert amp(1.5, 2.0) == pytest.approx(F.amplified(lambda a, t: 0.3 * t, 1.5, 2.0, 100, 1, 10))


def test_subsample_errors():
  with pytest.raises(ValueError):
    subsample_amplify(linear_curve(0.1), n=100, B=10, k=10)
  with pytest.raises(ValidityError):
    subsample_amplify(linear_curve(1.0), n=100, B=1, k=1)(5, 1.0)


@given(st.integers(1, 5), st.integers(1, 9), st.floats(1.1, 4), st.floats(0, 2))
def test_subsample_at_most_double(B, k, alpha, tau):
  n = 100
  if k > (n - 1) / B:
    k = 1
  base = linear_curve(0.02)
  if base(alpha, tau) > 1 / (alpha - 1):
    return
  assert subsample_amplify(base, n, B, k)(alpha, tau) <= 2 * base(alpha, tau) + 1e-15


# Runners.

def test_gaussian_zero_noise_limit_and_determinism():
  data = small_data()
  out = run_gaussian(MechanismSpec('gaussian', eps=1e12), mean_fn, data, 3)
  assert np.allclose(out, mean_fn(data), atol=1e-10)
  spec = MechanismSpec('gaussian', eps=1)
  assert run_gaussian(spec, mean_fn, data, 9).tobytes() == \
      run_gaussian(spec, mean_fn, data, 9).tobytes()


def test_gaussian_variance():
  data = DatasetMatrix(np.zeros((1, 1)))
  spec = MechanismSpec('gaussian', eps=1)
  draws = np.array([run_gaussian(spec, lambda d: 0.0, data, s)[0] for s in range(20000)])
  assert np.var(draws) == pytest.approx(1.0, rel=0.03)


def test_gaussian_audit_scalar_mean():
  rng = np.random.default_rng(12)
  n, eps = 20, 1.0
  spec = MechanismSpec('gaussian', eps=eps, global_sensitivity=2 / n)
  bound = rdp_curve(spec)(8)
  for _ in range(100):
    x = rng.uniform(-1, 1, n)
    y = x.copy()
    y[rng.integers(n)] = rng.uniform(-1, 1)
    assert renyi_gaussian(x.mean(), y.mean(), spec.global_sensitivity / eps, 8) <= bound + 1e-12


def test_laplace_likelihood_ratio():
  eps = 1.0
  spec = MechanismSpec('laplace', eps=eps)
  rng = np.random.default_rng(0)
  # Count query on neighbors: 5 versus 6.
  a = 5 + rng.laplace(0, 1 / eps, 400000)
  b = 6 + rng.laplace(0, 1 / eps, 400000)
  edges = np.linspace(3, 8, 26)
  ca, cb = np.histogram(a, edges)[0], np.histogram(b, edges)[0]
  llr = np.abs(np.log(ca / cb))
  assert llr.max() <= rdp_curve(spec)(math.inf) + 0.05
  assert run_laplace(spec, lambda d: 5.0, DatasetMatrix(np.zeros((1, 1))), 1).shape == (1,)


def test_exponential_discrete_ratio():
  spec = MechanismSpec('exponential', eps=2.0)
  data = DatasetMatrix(np.zeros((1, 1)))
  cands = [0, 1]
  picks = [run_exponential(spec, lambda c, d: float(c), data, s, candidates=cands)
           for s in range(20000)]
  ratio = sum(picks) / (len(picks) - sum(picks))
  assert ratio == pytest.approx(math.e, rel=0.05)


def test_exponential_rejection_sampler():
  spec = MechanismSpec('exponential', eps=4.0)
  data = DatasetMatrix(np.zeros((1, 1)))
  w = [run_exponential(spec, lambda w, d: -abs(float(w[0])), data, s,
                       bounds=([-1.0], [1.0]), score_max=0.0)[0] for s in range(3000)]
  assert abs(np.mean(w)) < 0.05
  # Density proportional to exp(-2|w|) on [-1, 1].
  expect = (1 - 3 * math.exp(-2)) / (2 * (1 - math.exp(-2)))
  assert np.mean(np.abs(w)) == pytest.approx(expect, abs=0.02)
  with pytest.raises(ConfigurationError):
    run_exponential(spec, lambda w, d: 0.0, data, 0)


def test_dp_gd_zero_gradient_returns_init():
  spec = MechanismSpec('dp_gd', eps=1e12, T=10, n=3)
  w0 = np.array([0.3, -0.2])
  out = run_dp_gd(spec, lambda w, d: np.zeros_like(w), small_data(), w0, 0)
  assert np.allclose(out, w0, atol=1e-9)


def test_dp_gd_quadratic_converges():
  spec = MechanismSpec('dp_gd', eps=1e12, T=2000, n=3, lr=0.5)
  grad = lambda w, d: w - 0.4
  out, trace = run_dp_gd(spec, grad, small_data(d=1), np.array([-0.9]), 0, return_trace=True)
  assert abs(trace[-1][0] - 0.4) < 1e-3
  assert abs(out[0] - 0.4) < 1e-2


def test_dp_gd_deterministic_logistic():
  from preproc_dp.experiments import logistic_grad
  data = small_data(5, n=20, d=2)
  spec = MechanismSpec('dp_gd', eps=1, T=20, n=20)
  a = run_dp_gd(spec, logistic_grad, data, np.zeros(2), 42)
  b = run_dp_gd(spec, logistic_grad, data, np.zeros(2), 42)
  assert a.tobytes() == b.tobytes()
  assert np.linalg.norm(a) <= 1 + 1e-12


def test_dp_gd_rejects_nonfinite():
  spec = MechanismSpec('dp_gd', eps=1, T=2, n=3)
  with pytest.raises(ArithmeticError):
    run_dp_gd(spec, lambda w, d: np.full_like(w, np.nan), small_data(), np.zeros(2), 0)
