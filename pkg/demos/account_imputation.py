"""End-to-end budget of a Gaussian mean release after mean imputation."""

import numpy as np

from preproc_dp.accountant import ComposeConfig, account, group_privacy_optimized
from preproc_dp.core import CollectionProfile
from preproc_dp.mechanisms import MechanismSpec, rdp_curve, srdp_curve
from preproc_dp.preprocessing import PreprocSpec, sensitivity

n, p, delta = 1000, 50, 1e-5
mech = MechanismSpec('gaussian', eps=1.0)
pre = PreprocSpec('impute', model='mean')
profile = CollectionProfile(n=n, p=p)

sens = sensitivity(pre, profile)
budget = account(rdp_curve(mech), srdp_curve(mech, profile), pre, profile,
                 ComposeConfig(target_delta=delta))
group = group_privacy_optimized(rdp_curve(mech), int(sens.delta_inf) + 1, delta)[0]

print(f'delta2={sens.delta2:.4g} delta_inf={sens.delta_inf} tau={sens.tau:.4g}')
print(f'smooth accounting: eps={budget.eps_dp:.3f} at alpha={budget.alpha:g}')
print(f'group privacy over {int(sens.delta_inf) + 1} rows: eps={group:.3f}')
print('ratio', np.round(group / budget.eps_dp, 1))
