"""Slow, deliberately literal re-implementations used as test oracles.

Nothing here imports from factsurv; each function follows the textbook
formula with plain loops.
"""

import math


def km_naive(durations, events, t):
    """Product-limit S(t) by direct enumeration of distinct event times."""
    s = 1.0
    for u in sorted(set(d for d, e in zip(durations, events) if e == 1)):
        if u > t:
            break
        n_at_risk = sum(1 for d in durations if d >= u)
        d_u = sum(1 for d, e in zip(durations, events) if d == u and e == 1)
        s *= 1.0 - d_u / n_at_risk
    return s


def logrank_naive(da, ea, db, eb):
    """Two-sample log-rank chi-square via per-time hypergeometric moments."""
    times = sorted(set([d for d, e in zip(da, ea) if e] + [d for d, e in zip(db, eb) if e]))
    o_minus_e = 0.0
    var = 0.0
    for u in times:
        n1 = sum(1 for d in da if d >= u)
        n2 = sum(1 for d in db if d >= u)
        d1 = sum(1 for d, e in zip(da, ea) if d == u and e)
        d2 = sum(1 for d, e in zip(db, eb) if d == u and e)
        n, dd = n1 + n2, d1 + d2
        o_minus_e += d1 - dd * n1 / n
        if n > 1:
            var += dd * (n1 / n) * (n2 / n) * (n - dd) / (n - 1)
    return o_minus_e ** 2 / var


def cindex_naive(risks, durations, events, horizon=None):
    num = 0.0
    den = 0
    n = len(risks)
    for i in range(n):
        if events[i] != 1 or (horizon is not None and durations[i] > horizon):
            continue
        for j in range(n):
            if durations[i] < durations[j]:
                den += 1
                if risks[i] > risks[j]:
                    num += 1.0
                elif risks[i] == risks[j]:
                    num += 0.5
    return num / den


def brier_naive(surv_at_t, durations, events, t):
    """Graf IPCW Brier score with G estimated by a naive censoring KM."""
    flipped = [1 - e for e in events]

    def g(u):
        return km_naive(durations, flipped, u)

    def g_left(u):
        # G(u-): product over censoring times strictly below u
        s = 1.0
        for c in sorted(set(d for d, e in zip(durations, flipped) if e == 1)):
            if c >= u:
                break
            n_at_risk = sum(1 for d in durations if d >= c)
            d_c = sum(1 for d, e in zip(durations, flipped) if d == c and e == 1)
            s *= 1.0 - d_c / n_at_risk
        return s

    total = 0.0
    for s_i, d, e in zip(surv_at_t, durations, events):
        if d <= t and e == 1:
            total += (0.0 - s_i) ** 2 / g_left(d)
        elif d > t:
            total += (1.0 - s_i) ** 2 / g(t)
    return total / len(durations)


def cox_nll_loops(risks, durations, events):
    """Breslow negative log partial likelihood with an explicit risk-set scan."""
    loss = 0.0
    for i in range(len(risks)):
        if events[i] != 1:
            continue
        denom = sum(math.exp(risks[j]) for j in range(len(risks)) if durations[j] >= durations[i])
        loss -= risks[i] - math.log(denom)
    return loss


def fact_param_count(p, d, n, layers, n_drivers, ffn_mult=4):
    """Hand count of FACT weights, one block at a time."""
    inputs = p + 2
    projection = inputs * d + d
    attention = 4 * (d * d + d)          # q, k, v, output projections with biases
    norms = 2 * (2 * d)                  # two layer norms, gain and bias each
    ffn = (d * ffn_mult * d + ffn_mult * d) + (ffn_mult * d * d + d)
    head = (d + n) * 1 + 1
    return projection + layers * (attention + norms + ffn) + head + n_drivers * n


def ph_data(rng, n=2000, beta=1.0, censor_frac=0.3):
    """Exponential PH durations with exponential censoring tuned to ``censor_frac``."""
    import numpy as np

    x = rng.normal(size=n)
    rate = np.exp(beta * x)
    # P(censored) = E[c / (c + rate)]; solve for c on a large reference sample
    ref = np.exp(beta * np.random.default_rng(0).normal(size=200_000))
    lo, hi = 1e-6, 1e3
    for _ in range(80):
        c = math.sqrt(lo * hi)
        if np.mean(c / (c + ref)) < censor_frac:
            lo = c
        else:
            hi = c
    t = rng.exponential(1.0 / rate)
    cens = rng.exponential(1.0 / c, size=n)
    return x[:, None], np.minimum(t, cens), (t <= cens).astype(np.int64)
