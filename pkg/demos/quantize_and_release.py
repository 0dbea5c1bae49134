"""Quantize clustered points, then release their mean with Gaussian noise."""

import numpy as np

from preproc_dp.core import DatasetMatrix
from preproc_dp.mechanisms import MechanismSpec, run_gaussian
from preproc_dp.preprocessing import PreprocSpec, max_good_cluster, transform

rng = np.random.default_rng(0)
centers = np.array([[0.6, 0.0], [-0.6, 0.0], [0.0, 0.6]])
rows = np.concatenate([c + 0.01 * rng.standard_normal((30, 2)) for c in centers])
data = DatasetMatrix(rows)

eta = 0.1
print('largest good cluster:', max_good_cluster([data], eta))

q = transform(PreprocSpec('quantize', eta=eta), data)
print('distinct rows after quantization:', len(np.unique(q.rows, axis=0)))

spec = MechanismSpec('gaussian', eps=1.0, global_sensitivity=2 / data.n)
print('noisy mean:', run_gaussian(spec, lambda d: d.rows.mean(axis=0), q, rng_seed=1))
