"""Independent oracles shared by the unit and acceptance tests."""

import numpy as np

from scorecusum.scorenet import ScoreModel


def random_model(rng, d, h, sigma=0.7, standardize=False):
    loc = rng.normal(size=d) if standardize else None
    scale = rng.uniform(0.5, 2.0, size=d) if standardize else None
    return ScoreModel(
        rng.normal(size=(h, d)),
        rng.normal(size=h),
        rng.normal(size=(d, h)),
        rng.normal(size=d),
        sigma,
        loc=loc,
        scale=scale,
    )


def fd_param_grad(loss_fn, model, eps=1e-6):
    """Central differences of loss_fn(model) over every parameter entry."""
    out = []
    params = [p.copy() for p in model.params]
    for i, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[i][idx] += eps
            minus[i][idx] -= eps
            g[idx] = (loss_fn(model.with_params(*plus)) - loss_fn(model.with_params(*minus))) / (2 * eps)
        out.append(g)
    return out


def max_rel_error(analytic, numeric):
    a = np.concatenate([np.ravel(x) for x in analytic])
    n = np.concatenate([np.ravel(x) for x in numeric])
    return float(np.max(np.abs(a - n) / np.maximum(1.0, np.abs(n))))


def fd_jacobian_trace(score_fn, x, eps=1e-5):
    x = np.asarray(x, dtype=float)
    tr = 0.0
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = eps
        tr += (score_fn(x + e)[i] - score_fn(x - e)[i]) / (2 * eps)
    return tr


def cusum_max_form(deltas):
    """S_t = max_{0<=k<t} sum_{i=k+1}^{t} delta_i, by brute force."""
    out = []
    for t in range(1, len(deltas) + 1):
        out.append(max(sum(deltas[k:t]) for k in range(t)))
    return out


def lnis(seq):
    """Length of the longest non-increasing subsequence."""
    best = []
    for i, v in enumerate(seq):
        best.append(1 + max([best[j] for j in range(i) if seq[j] >= v], default=0))
    return max(best, default=0)
