import math

import numpy as np
import pytest

from preproc_dp import experiments as ex
from preproc_dp.accountant import compose_best_c, rdp_to_dp
from preproc_dp.core import CollectionProfile, DatasetMatrix, InfeasibleError
from preproc_dp.mechanisms import MechanismSpec, rdp_curve, srdp_curve
from preproc_dp.oracle import brute_force_budget_audit, uniform_ball
from preproc_dp.preprocessing import PreprocSpec, sensitivity
from preproc_dp.ptr import eigen_gap

SMALL = dict(n=200, d=20, approx_rank=5, k=5, T=50)


def test_generator_zero_noise_rank():
  cfg = ex.ExperimentConfig(n=300, d=40, approx_rank=6, noise_scale=0.0)
  x = ex.make_classification(cfg, 0).rows
  assert np.linalg.matrix_rank(x - x.mean(axis=0), tol=1e-9) <= 6
  assert np.linalg.matrix_rank(x, tol=1e-9) <= 6 + 1


def test_generator_reproducible_and_in_ball():
  cfg = ex.ExperimentConfig(**SMALL)
  a, b = ex.make_classification(cfg, 3), ex.make_classification(cfg, 3)
  assert a.rows.tobytes() == b.rows.tobytes() and a.labels.tobytes() == b.labels.tobytes()
  assert np.linalg.norm(a.rows, axis=1).max() <= 1 + 1e-12
  assert set(np.unique(a.labels)) == {-1.0, 1.0}


def test_generator_spectrum_tail():
  cfg = ex.ExperimentConfig()
  x = ex.make_classification(cfg, 0).rows
  w = np.sort(np.linalg.eigvalsh(np.cov(x.T, bias=True)))[::-1]
  tail = w[cfg.approx_rank:].sum() / w.sum()
  assert 0 < tail < 0.2


def test_nonprivate_minimizer_stationary():
  data = ex.make_classification(ex.ExperimentConfig(**SMALL), 1)
  w = ex.nonprivate_minimizer(data)
  g = ex.logistic_grad(w, data)
  if np.linalg.norm(w) < 1 - 1e-6:
    assert np.linalg.norm(g) < 1e-5
  eps_loss = ex.logistic_loss(w, data.rows, data.labels)
  for _ in range(20):
    v = w + 0.01 * np.random.default_rng(_).standard_normal(w.shape)
    v /= max(1.0, np.linalg.norm(v))
    assert ex.logistic_loss(v, data.rows, data.labels) >= eps_loss - 1e-9


def test_plain_calibration_hits_target():
  for target in (0.5, 1, 2, 5):
    e = ex.plain_mech_eps(target, 1e-5)
    spec = MechanismSpec('dp_gd', eps=e)
    grid = min(rdp_to_dp(rdp_curve(spec)(a), a, 1e-5)[0] for a in (1.5, 2, 3, 5, 8, 11, 16, 32,
                                                                     64, 128, 256))
    assert grid <= target and grid == pytest.approx(target, rel=1e-6)


def test_preprocessed_calibration_certified():
  cfg = ex.ExperimentConfig(**SMALL)
  data = ex.make_classification(cfg, 0)
  e, budget = ex.preprocessed_mech_eps(cfg, data, 2.0)
  assert budget.eps_dp <= 2.0 + 1e-9
  assert budget.provenance['preproc'] == 'pca_rank'


def test_gaussian_sigma_for():
  s = ex.gaussian_sigma_for(1.0, 1e-5, 0.01)
  spec_eps = 0.01 / s
  best = min(a * spec_eps ** 2 / 2 + math.log(1e5) / (a - 1) for a in np.linspace(1.01, 500, 50000))
  assert best <= 1.0 + 1e-3


def test_dp_pca_basis_orthonormal():
  data = ex.make_classification(ex.ExperimentConfig(**SMALL), 0)
  b = ex.dp_pca_basis(data, 5, 1.0, 1e-5, np.random.default_rng(0))
  assert b.shape == (20, 5)
  assert np.allclose(b.T @ b, np.eye(5), atol=1e-10)


def test_large_eps_unconstrained_arms_reach_nonprivate():
  cfg = ex.ExperimentConfig(**SMALL, eps_list=(1e3,), seeds=(0, 1))
  res = ex.run_comparison(cfg).summary()
  assert res[(1e3, 'no_preprocess')][0] < 0.02
  assert res[(1e3, 'dp_pca')][0] < 0.02


@pytest.mark.xfail(strict=True, reason='the composed budget leaves arm (a) a mechanism eps '
                   'well below 1 even at a target of 1e3, so its noise does not vanish')
def test_large_eps_preprocessed_arm_reaches_nonprivate():
  cfg = ex.ExperimentConfig(**SMALL, eps_list=(1e3,), seeds=(0, 1))
  assert ex.run_comparison(cfg).summary()[(1e3, 'preprocessed')][0] < 0.02


def test_run_comparison_reproducible_and_parallel_safe():
  cfg = ex.ExperimentConfig(**SMALL, eps_list=(1.0, 2.0), seeds=(0, 1))
  a = ex.run_comparison(cfg)
  b = ex.run_comparison(ex.ExperimentConfig.from_dict({**cfg.to_dict(), 'workers': 2}))
  assert a.to_csv() == b.to_csv()
  assert a.to_csv().splitlines()[0].split(',')[:4] == ['eps', 'seed', 'arm', 'loss']
  assert len(a.rows) == 2 * 2 * 3


def test_infeasible_is_reported_per_arm(monkeypatch):
  def boom(*a, **k):
    raise InfeasibleError('nothing fits')
  monkeypatch.setattr(ex, 'preprocessed_mech_eps', boom)
  res = ex.run_comparison(ex.ExperimentConfig(**SMALL, eps_list=(1.0,), seeds=(0,)))
  assert res.infeasible()
  bad = [r for r in res.rows if r['status'] == 'infeasible']
  assert [r['arm'] for r in bad] == ['preprocessed'] and 'nothing fits' in bad[0]['detail']
  assert math.isnan(res.summary()[(1.0, 'preprocessed')][0])
  assert all(r['status'] == 'ok' for r in res.rows if r['arm'] != 'preprocessed')


def test_clipping_ordering():
  out = {}
  for clip in (0.1, 0.7, 0.99):
    cfg = ex.ExperimentConfig(n=300, d=30, approx_rank=5, k=5, eps_list=(2.0,),
                              seeds=range(4), clip=clip)
    out[clip] = ex.run_comparison(cfg).summary()[(2.0, 'preprocessed')]
  for clip in (0.7, 0.99):
    assert out[clip][0] <= out[0.1][0] + out[0.1][1]


def test_preprocessed_budget_audit_shadow():
  # Scalar first-coordinate mean released with Gaussian noise after rank-2 PCA.
  rng = np.random.default_rng(0)
  n, d, alpha = 101, 5, 11
  base = 0.05 * rng.standard_normal((n, d))
  base[:, 0] += rng.choice([-0.6, 0.6], n)
  base[:, 1] += rng.choice([-0.3, 0.3], n)
  base /= max(1.0, np.linalg.norm(base, axis=1).max())
  pairs = []
  for i in range(60):
    y = base.copy()
    y[i % n] = uniform_ball(rng, 1, d)[0]
    pairs.append((DatasetMatrix(base), DatasetMatrix(y)))
  gaps_k = [eigen_gap(m, 2) for p in pairs for m in p]
  gaps_1 = [eigen_gap(m, 1) for p in pairs for m in p]
  prof = CollectionProfile(n=n, delta_min_k=min(gaps_k), delta_min_1=min(gaps_1))
  mech = MechanismSpec('gaussian', eps=1.0, L=1 / n, global_sensitivity=2 / n)
  pre = PreprocSpec('pca_rank', k=2)
  audit = brute_force_budget_audit(mech, pre, pairs, alpha)
  bound = compose_best_c(rdp_curve(mech), srdp_curve(mech, prof), sensitivity(pre, prof), alpha)
  assert 0 < audit <= bound


def test_curves_csv_layout():
  out = ex.emit_comparison_curves()
  assert set(out) == {'quantization', 'imputation', 'pca'}
  for text in out.values():
    lines = text.strip().splitlines()
    assert lines[0] == 'x,ours,group_privacy'
    assert len(lines) > 3
