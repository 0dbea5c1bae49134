"""Propose-test-release on a dataset with a clear top eigen-gap."""

import warnings

import numpy as np

from preproc_dp.core import DatasetMatrix
from preproc_dp.experiments import logistic_grad
from preproc_dp.ptr import PtrConfig, eigen_gap, run_ptr

rng = np.random.default_rng(0)
n, d = 2000, 5
x = 0.02 * rng.standard_normal((n, d))
x[:, 0] = rng.choice([-0.6, 0.6], n)
x /= max(1.0, np.linalg.norm(x, axis=1).max())
data = DatasetMatrix(x, labels=np.sign(x[:, 0]))

cfg = PtrConfig(beta=0.05, eps=1.0, delta=1e-4, k=1, T=50)
print(f'gap={eigen_gap(data, 1):.3f} threshold={cfg.threshold:.2f}')
with warnings.catch_warnings():
  # delta=1e-4 is above the certified ceiling at this beta
  warnings.simplefilter('ignore')
  out = run_ptr(data, cfg, logistic_grad, rng_seed=3)
print('released' if not out.aborted else 'aborted', out.params)
