"""Recurrent-event Cox negative log partial likelihood.

Risk sets are ``{j : T_j >= T_i}`` over whatever batch is passed in; during
neural training that is a minibatch, not the full data set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import InvalidArgument


@dataclass
class RiskSetBatch:
    risks: ad.Tensor
    durations: np.ndarray
    events: np.ndarray
    order: np.ndarray = field(init=False)

    def __post_init__(self):
        self.risks = ad.as_tensor(self.risks)
        self.durations = np.asarray(self.durations, dtype=np.float64).reshape(-1)
        self.events = np.asarray(self.events, dtype=np.int64).reshape(-1)
        n = self.durations.size
        if n == 0:
            raise InvalidArgument("empty batch")
        if self.risks.shape != (n,) or self.events.size != n:
            raise InvalidArgument(
                f"risks {self.risks.shape}, durations ({n},), events ({self.events.size},) must align")
        self.order = np.argsort(-self.durations, kind="stable")


def tie_group_ends(sorted_desc: np.ndarray) -> np.ndarray:
    """For each position of a descending sort, the last index sharing its value."""
    n = sorted_desc.size
    last = np.empty(n, dtype=np.int64)
    # a tie group ends wherever the next sorted value differs
    boundary = np.append(sorted_desc[1:] != sorted_desc[:-1], True)
    ends = np.flatnonzero(boundary)
    group = np.searchsorted(ends, np.arange(n))
    last[:] = ends[group]
    return last


def cox_nll(batch: RiskSetBatch) -> ad.Tensor:
    """Negative log partial likelihood (Breslow ties) as a graph node."""
    events_sorted = batch.events[batch.order]
    if not events_sorted.any():
        return ad.Tensor(0.0) if not batch.risks.requires_grad else ad.tsum(batch.risks) * 0.0
    r = batch.risks[batch.order]
    log_cum = ad.logcumsumexp(r)
    ends = tie_group_ends(batch.durations[batch.order])
    idx = np.flatnonzero(events_sorted)
    return -(ad.tsum(r[idx] - log_cum[ends[idx]]))


def cox_nll_naive(batch: RiskSetBatch) -> float:
    """Direct double loop over events and their risk sets."""
    r = batch.risks.data
    t = batch.durations
    total = 0.0
    for i in range(t.size):
        if batch.events[i] != 1:
            continue
        members = [r[j] for j in range(t.size) if t[j] >= t[i]]
        m = max(members)
        log_den = m + math.log(sum(math.exp(x - m) for x in members))
        total -= r[i] - log_den
    return total
