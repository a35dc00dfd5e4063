"""Occupancy of the DAFT-domain channel image and pilot-count statistics.

With ``c1 = -P / (2N)`` a path at delay ``l`` and Doppler ``q`` lands on the
DAFT shift ``k = q + P*l``.  ``X_k`` counts active paths sharing shift
``k``; the largest ``X_k`` is the least number of pilots that can resolve
the channel.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .channel import DelayDopplerProfile, SparsityModel
from .errors import ConfigurationError

__all__ = [
    "OccupancyVector",
    "daft_shift_index",
    "compute_occupancy",
    "occupancy_counts",
    "shift_support",
    "rho",
    "exact_xk_pmf",
    "exact_xk_ccdf",
    "bound_trials",
    "binomial_bound_ccdf",
    "chernoff_tail",
    "min_pilots",
    "afdm_overhead",
    "select_chirp_slope",
    "ccdf_table",
    "write_ccdf_csv",
]


def daft_shift_index(l: int, q: int, P: int, L: int | None = None, Q: int | None = None) -> int:
    """DAFT-domain shift of path ``(l, q)``: ``q + P*l``."""
    if l < 0 or (L is not None and l >= L):
        raise ConfigurationError(f"delay index {l} outside [0, {'L-1' if L is None else L - 1}]")
    if Q is not None and not -Q <= q <= Q:
        raise ConfigurationError(f"Doppler index {q} outside [{-Q}, {Q}]")
    if P < 1:
        raise ConfigurationError(f"P must be >= 1, got {P}")
    return q + P * l


def shift_support(L: int, Q: int, P: int) -> np.ndarray:
    """All shifts ``k`` in ``[-Q, P(L-1)+Q]``."""
    return np.arange(-Q, P * (L - 1) + Q + 1)


@dataclass(frozen=True)
class OccupancyVector:
    """``counts[i]`` is ``X_k`` for ``k = k_min + i``."""

    counts: np.ndarray
    k_min: int

    @property
    def k(self) -> np.ndarray:
        return self.k_min + np.arange(self.counts.size)

    def at(self, k: int) -> int:
        i = k - self.k_min
        if 0 <= i < self.counts.size:
            return int(self.counts[i])
        return 0

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def occupancy_counts(indicators: np.ndarray, P: int) -> np.ndarray:
    """Batched ``X_k`` over the trailing ``(L, 2Q+1)`` axes.

    Output has trailing length ``P(L-1) + 2Q + 1``, index ``i`` <-> ``k = i - Q``.
    """
    ind = np.asarray(indicators)
    L, D = ind.shape[-2:]
    out = np.zeros((*ind.shape[:-2], P * (L - 1) + D), dtype=np.int64)
    for l in range(L):
        out[..., P * l:P * l + D] += ind[..., l, :]
    return out


def compute_occupancy(profile: DelayDopplerProfile, P: int) -> OccupancyVector:
    return OccupancyVector(occupancy_counts(profile.indicators, P), -profile.Q)


def min_pilots(profile: DelayDopplerProfile, P: int) -> int:
    """Largest number of active paths sharing one DAFT shift."""
    if profile.n_active == 0:
        return 0
    return int(occupancy_counts(profile.indicators, P).max())


def rho(k: int, L: int, Q: int, P: int) -> int:
    """Number of delays ``l`` whose Doppler range can reach shift ``k``."""
    # -Q <= k - P*l <= Q  <=>  (k-Q)/P <= l <= (k+Q)/P
    lo = max(0, -((Q - k) // P))
    hi = min(L - 1, (k + Q) // P)
    return max(0, hi - lo + 1)


def exact_xk_pmf(k: int, model: SparsityModel, P: int) -> np.ndarray:
    """``P[X_k = m]`` for ``m = 0..rho_k``; binomial in ``rho_k`` trials."""
    n = rho(k, model.L, model.Q, P)
    return stats.binom.pmf(np.arange(n + 1), n, model.cell_probability)


def exact_xk_ccdf(k: int, M: int, model: SparsityModel, P: int) -> float:
    """``P[X_k > M]``."""
    n = rho(k, model.L, model.Q, P)
    if M >= n:
        return 0.0
    return float(stats.binom.sf(M, n, model.cell_probability))


def bound_trials(Q: int, P: int) -> int:
    return 2 * math.ceil(Q / P) + 1


def binomial_bound_ccdf(M: int, model: SparsityModel, P: int) -> float:
    """Uniform-in-``k`` upper bound on ``P[X_k > M]``."""
    return float(stats.binom.sf(M, bound_trials(model.Q, P), model.cell_probability))


def chernoff_tail(M: int, model: SparsityModel, P: int) -> float:
    """Chernoff bound on ``P[X > M]`` for ``X ~ B(2 ceil(Q/P) + 1, p_d p_D)``.

    Returns 1 when ``M`` does not exceed the binomial mean.
    """
    n = bound_trials(model.Q, P)
    p = model.cell_probability
    if M <= n * p:
        return 1.0
    a = M + 1
    if a > n:
        return 0.0
    x = a / n
    if x >= 1.0:
        return p**n
    kl = x * math.log(x / p) + (1 - x) * math.log((1 - x) / (1 - p))
    return min(1.0, math.exp(-n * kl))


def afdm_overhead(M: int, params, model: SparsityModel) -> int:
    """Samples consumed by ``M`` DAFT-domain pilots and their windows."""
    return M * ((model.L - 1) * params.P + 2 * model.Q + 1)


def select_chirp_slope(model: SparsityModel, c: float = 1.0, P_max: int | None = None) -> int:
    """Smallest ``P >= 1`` whose pilot window covers ``c`` times the expected unknown count.

    The window ``(L-1)P + 2Q + 1`` then has the same order as the mean
    number of active delay-Doppler cells.  ``P_max`` caps the search.
    """
    budget = c * model.expected_active_cells()
    if model.L == 1:
        return 1
    P = max(1, math.ceil((budget - 2 * model.Q - 1) / (model.L - 1)))
    if P_max is not None:
        P = min(P, P_max)
    return P


def ccdf_table(
    model: SparsityModel,
    P: int,
    M_values,
    empirical: np.ndarray | None = None,
) -> list[dict]:
    """Rows ``{k, M, exact, bound, empirical}`` over the full shift support.

    ``empirical`` is an optional batch of ``X_k`` samples with shape
    ``(draws, support)`` as returned by :func:`occupancy_counts`.
    """
    rows = []
    ks = shift_support(model.L, model.Q, P)
    for i, k in enumerate(ks):
        for M in M_values:
            emp = float(np.mean(empirical[:, i] > M)) if empirical is not None else float("nan")
            rows.append(
                {
                    "k": int(k),
                    "M": int(M),
                    "exact": exact_xk_ccdf(int(k), int(M), model, P),
                    "bound": binomial_bound_ccdf(int(M), model, P),
                    "empirical": emp,
                }
            )
    return rows


def write_ccdf_csv(rows: list[dict], fh=None) -> str:
    buf = io.StringIO() if fh is None else fh
    writer = csv.DictWriter(buf, fieldnames=["k", "M", "exact", "bound", "empirical"], lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({key: (repr(v) if isinstance(v, float) else v) for key, v in r.items()})
    return buf.getvalue() if fh is None else ""
