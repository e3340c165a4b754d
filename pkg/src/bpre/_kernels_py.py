"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np

GEOMETRIC, POISSON, BERNOULLI_PAIR = 0, 1, 2


def one_minus_pgf(family, means, t):
    """1 - f(1 - t) row-wise, batched: means (R, p, p), t (R, p)."""
    if family == GEOMETRIC:
        acc = np.log1p(means * t[:, None, :]).sum(axis=2)
        return -np.expm1(-acc)
    if family == POISSON:
        acc = (means * t[:, None, :]).sum(axis=2)
        return -np.expm1(-acc)
    with np.errstate(divide="ignore"):  # t = 1 gives log 0 = -inf, which expm1 maps correctly
        acc = np.log1p(-t).sum(axis=1)
    return means[:, :, 0] * (-np.expm1(acc))[:, None]


def quenched_survival_batch(family, shapes, atom_idx, log_scale, horizons):
    R = atom_idx.shape[0]
    p = shapes.shape[1]
    out = np.empty((R, len(horizons), p))
    scale = np.exp(log_scale)
    for h, n in enumerate(horizons):
        t = np.ones((R, p))
        for k in range(int(n) - 1, -1, -1):
            means = shapes[atom_idx[:, k]] * scale[:, k, None, None]
            t = one_minus_pgf(family, means, t)
        out[:, h, :] = t
    return out


def passage_times(increments, a):
    s = a + np.cumsum(increments, axis=1)
    hit = s <= 0.0
    any_hit = hit.any(axis=1)
    tau = np.where(any_hit, hit.argmax(axis=1) + 1, -1)
    return tau.astype(np.int64)
