"""Privacy accounting for data-dependent pre-processing followed by DP mechanisms."""

from preproc_dp.core import (AlphaDomain, CollectionProfile, DatasetMatrix,
                             PrivacyBudget, RdpCurve, SensitivityBounds, SrdpCurve,
                             check_curve_monotonic, d12_distance, hamming_distance)

__version__ = '0.1.0'
