"""Kernel dispatch: compiled Cython core when built, numpy fallback otherwise.

Set ``BPRE_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if not os.environ.get("BPRE_PURE_PYTHON"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py

FAMILY_CODES = {
    "independent-geometric": _kernels_py.GEOMETRIC,
    "independent-poisson": _kernels_py.POISSON,
    "scalar-scaled": _kernels_py.POISSON,
    "bernoulli-pair": _kernels_py.BERNOULLI_PAIR,
}


def quenched_survival_batch(family, shapes, atom_idx, log_scale, horizons, impl=None):
    """Survival probabilities q_n, shape (replicas, len(horizons), p).

    ``atom_idx`` and ``log_scale`` are (replicas, steps) arrays describing the
    environment f_0, f_1, ... of each replica; each horizon must not exceed steps.
    """
    impl = impl or _impl
    code = FAMILY_CODES[family] if isinstance(family, str) else int(family)
    horizons = np.ascontiguousarray(horizons, dtype=np.int64)
    atom_idx = np.ascontiguousarray(atom_idx, dtype=np.int64)
    log_scale = np.ascontiguousarray(log_scale, dtype=np.float64)
    if horizons.size and horizons.max() > atom_idx.shape[1]:
        raise ValueError("horizon exceeds recorded environment length")
    return impl.quenched_survival_batch(
        code, np.ascontiguousarray(shapes, dtype=np.float64), atom_idx, log_scale, horizons
    )


def passage_times(increments, a, impl=None):
    impl = impl or _impl
    return impl.passage_times(np.ascontiguousarray(increments, dtype=np.float64), float(a))
