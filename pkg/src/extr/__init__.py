"""Extended Total Repair: optimal-transport repair of group-biased tabular data.

Modules: :mod:`extr.data` (datasets, generators, folds), :mod:`extr.ot`
(transport plan and total repair), :mod:`extr.mmc` (minimum mean cycle),
:mod:`extr.interp` (out-of-sample extension), :mod:`extr.fairness` (metrics
and evaluation harness) and :mod:`extr.cli`.
"""

__version__ = "0.1.0"
