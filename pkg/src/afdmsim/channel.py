"""Doubly sparse linear time-varying (DS-LTV) channel model.

A channel is a set of on-grid delay-Doppler paths ``(l, q)`` with
``l in [0, L-1]`` and ``q in [-Q, Q]``.  The binary activation grid is drawn
from one of three sparsity types and the active gains are i.i.d. circular
Gaussian with a variance that normalizes the expected channel energy to one.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "SparsityType",
    "SparsityModel",
    "DelayDopplerProfile",
    "ChannelRealization",
    "sample_profile",
    "sample_profiles",
    "sample_gains",
    "apply_channel",
    "time_varying_convolution",
    "validate_independence",
    "ValidationReport",
    "PairCheck",
]

# Type-3 configurations whose cluster size misses p_D by more than this are rejected.
R_TOLERANCE = 0.10


class SparsityType(str, enum.Enum):
    TYPE1 = "type1"
    TYPE2 = "type2"
    TYPE3 = "type3"


@dataclass(frozen=True)
class SparsityModel:
    """Statistical description of a DS-LTV channel.

    Type 3 supports two cluster placements.  ``"cyclic"`` (default) draws the
    cluster centre uniformly over all ``2Q+1`` Doppler bins and wraps the
    cluster around the Doppler axis, which gives every cell the same
    activation probability ``p_d * R / (2Q+1)``.  ``"interval"`` keeps the
    cluster inside ``[-Q, Q]`` with the centre drawn from
    ``[-Q + floor((R-1)/2), Q - floor(R/2)]`` and ``R`` solving
    ``R / (2Q - R) = p_D``; edge Doppler bins are then activated less often.
    """

    kind: SparsityType
    L: int
    Q: int
    p_d: float
    p_D: float
    R: int | None = None
    cluster: str = "cyclic"

    def __post_init__(self):
        object.__setattr__(self, "kind", SparsityType(self.kind))
        if self.L < 1 or int(self.L) != self.L:
            raise ConfigurationError(f"L must be a positive integer, got {self.L}")
        if self.Q < 0 or int(self.Q) != self.Q:
            raise ConfigurationError(f"Q must be a non-negative integer, got {self.Q}")
        for name in ("p_d", "p_D"):
            p = getattr(self, name)
            if not 0 < p < 1:
                raise ConfigurationError(f"{name} must lie in (0, 1), got {p}")
        if self.kind is not SparsityType.TYPE3:
            return
        if self.cluster not in ("cyclic", "interval"):
            raise ConfigurationError(f"cluster must be 'cyclic' or 'interval', got {self.cluster!r}")
        R = self._solve_R() if self.R is None else int(self.R)
        if self.cluster == "cyclic":
            if not 1 <= R <= 2 * self.Q:
                raise ConfigurationError(f"cyclic type-3 needs 1 <= R <= 2Q, got R={R}")
            achieved = R / (2 * self.Q + 1)
        else:
            if not 1 <= R < self.Q:
                raise ConfigurationError(f"interval type-3 needs 1 <= R < Q, got R={R}, Q={self.Q}")
            achieved = R / (2 * self.Q - R)
        if abs(achieved - self.p_D) > R_TOLERANCE * self.p_D:
            raise ConfigurationError(
                f"no cluster size R matches p_D={self.p_D} for Q={self.Q} "
                f"(closest R={R} gives {achieved:.4f})"
            )
        object.__setattr__(self, "R", R)

    def _solve_R(self) -> int:
        if self.cluster == "cyclic":
            return max(1, round(self.p_D * (2 * self.Q + 1)))
        return max(1, round(2 * self.Q * self.p_D / (1 + self.p_D)))

    @property
    def num_doppler(self) -> int:
        return 2 * self.Q + 1

    @property
    def p_D_effective(self) -> float:
        """Per-cell Doppler activation probability the model is meant to realize."""
        if self.kind is not SparsityType.TYPE3:
            return self.p_D
        if self.cluster == "cyclic":
            return self.R / self.num_doppler
        return self.R / (2 * self.Q - self.R)

    @property
    def cell_probability(self) -> float:
        return self.p_d * self.p_D_effective

    def doppler_marginals(self) -> np.ndarray:
        """Exact activation probability of each Doppler bin given an active delay."""
        if self.kind is not SparsityType.TYPE3:
            return np.full(self.num_doppler, self.p_D)
        if self.cluster == "cyclic":
            return np.full(self.num_doppler, self.R / self.num_doppler)
        lo, hi = self._xi_range()
        q = np.arange(-self.Q, self.Q + 1)
        counts = np.zeros(self.num_doppler)
        for xi in range(lo, hi + 1):
            d = 2 * (q - xi)
            counts += (d > -self.R) & (d <= self.R)
        return counts / (hi - lo + 1)

    def expected_active_cells(self) -> float:
        return self.p_d * self.L * float(self.doppler_marginals().sum())

    @property
    def sigma_alpha_sq(self) -> float:
        """Per-active-tap gain variance giving unit average channel energy."""
        return 1.0 / self.expected_active_cells()

    def _xi_range(self) -> tuple[int, int]:
        R = self.R
        return -self.Q + (R - 1) // 2, self.Q - R // 2

    def to_dict(self) -> dict[str, Any]:
        d = {"kind": self.kind.value, "L": self.L, "Q": self.Q, "p_d": self.p_d, "p_D": self.p_D}
        if self.kind is SparsityType.TYPE3:
            d.update(R=self.R, cluster=self.cluster)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SparsityModel":
        return cls(**d)


@dataclass(frozen=True)
class DelayDopplerProfile:
    """Binary activation grid ``I[l, q + Q]`` of shape ``(L, 2Q+1)``."""

    indicators: np.ndarray

    def __post_init__(self):
        ind = np.asarray(self.indicators, dtype=bool)
        if ind.ndim != 2 or ind.shape[1] % 2 != 1:
            raise ConfigurationError(f"indicator grid must be (L, 2Q+1), got shape {ind.shape}")
        ind.setflags(write=False)
        object.__setattr__(self, "indicators", ind)

    @property
    def L(self) -> int:
        return self.indicators.shape[0]

    @property
    def Q(self) -> int:
        return (self.indicators.shape[1] - 1) // 2

    @property
    def n_active(self) -> int:
        return int(self.indicators.sum())

    def active(self) -> tuple[np.ndarray, np.ndarray]:
        """Delay and Doppler indices of active cells in row-major ``(l, q)`` order."""
        l, j = np.nonzero(self.indicators)
        return l, j - self.Q

    def to_dict(self) -> dict[str, Any]:
        l, q = self.active()
        return {"L": self.L, "Q": self.Q, "active": [[int(a), int(b)] for a, b in zip(l, q)]}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DelayDopplerProfile":
        L, Q = int(d["L"]), int(d["Q"])
        grid = np.zeros((L, 2 * Q + 1), dtype=bool)
        for l, q in d["active"]:
            if not (0 <= l < L and -Q <= q <= Q):
                raise ConfigurationError(f"active cell ({l}, {q}) outside the {L}x{2 * Q + 1} grid")
            grid[l, q + Q] = True
        return cls(grid)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "DelayDopplerProfile":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ChannelRealization:
    """Active delay-Doppler paths of one channel draw.

    Paths are stored in the row-major ``(l, q)`` order of the generating
    profile, which is also the column order of the measurement matrix.
    """

    delays: np.ndarray
    dopplers: np.ndarray
    gains: np.ndarray
    sigma_alpha_sq: float
    L: int
    Q: int

    def __post_init__(self):
        object.__setattr__(self, "delays", np.asarray(self.delays, dtype=np.int64))
        object.__setattr__(self, "dopplers", np.asarray(self.dopplers, dtype=np.int64))
        object.__setattr__(self, "gains", np.asarray(self.gains, dtype=complex))
        if not (len(self.delays) == len(self.dopplers) == len(self.gains)):
            raise ConfigurationError("delays, dopplers and gains must have equal length")

    @property
    def paths(self) -> list[tuple[int, int, complex]]:
        return [(int(l), int(q), complex(a)) for l, q, a in zip(self.delays, self.dopplers, self.gains)]

    @property
    def profile(self) -> DelayDopplerProfile:
        grid = np.zeros((self.L, 2 * self.Q + 1), dtype=bool)
        grid[self.delays, self.dopplers + self.Q] = True
        return DelayDopplerProfile(grid)

    def gain_grid(self) -> np.ndarray:
        grid = np.zeros((self.L, 2 * self.Q + 1), dtype=complex)
        grid[self.delays, self.dopplers + self.Q] = self.gains
        return grid

    def taps(self, n: np.ndarray, N: int) -> np.ndarray:
        """Instantaneous taps ``h[l, i] = sum_q alpha[l, q] exp(i 2 pi n_i q / N)``.

        Returns an ``(L, len(n))`` array; rows of inactive delays are zero.
        """
        n = np.asarray(n, dtype=np.int64)
        h = np.zeros((self.L, n.size), dtype=complex)
        for l, q, a in zip(self.delays, self.dopplers, self.gains):
            h[l] += a * np.exp(2j * np.pi * ((q * n) % N) / N)
        return h

    def to_dict(self) -> dict[str, Any]:
        return {
            "L": self.L,
            "Q": self.Q,
            "sigma_alpha_sq": self.sigma_alpha_sq,
            "paths": [
                {"l": int(l), "q": int(q), "re": float(a.real), "im": float(a.imag)}
                for l, q, a in zip(self.delays, self.dopplers, self.gains)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ChannelRealization":
        paths = d["paths"]
        return cls(
            delays=[p["l"] for p in paths],
            dopplers=[p["q"] for p in paths],
            gains=[complex(p["re"], p["im"]) for p in paths],
            sigma_alpha_sq=float(d["sigma_alpha_sq"]),
            L=int(d["L"]),
            Q=int(d["Q"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ChannelRealization":
        return cls.from_dict(json.loads(text))


def sample_profiles(model: SparsityModel, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw ``size`` activation grids at once, shape ``(size, L, 2Q+1)``."""
    L, D = model.L, model.num_doppler
    rows = rng.random((size, L)) < model.p_d
    if model.kind is SparsityType.TYPE1:
        cols = rng.random((size, D)) < model.p_D
        return rows[:, :, None] & cols[:, None, :]
    if model.kind is SparsityType.TYPE2:
        cells = rng.random((size, L, D)) < model.p_D
        return rows[:, :, None] & cells
    R, Q = model.R, model.Q
    q = np.arange(-Q, Q + 1)
    if model.cluster == "cyclic":
        xi = rng.integers(-Q, Q + 1, size=(size, L))
        offset = (q[None, None, :] - xi[:, :, None] + Q) % D - Q
    else:
        lo, hi = model._xi_range()
        xi = rng.integers(lo, hi + 1, size=(size, L))
        offset = q[None, None, :] - xi[:, :, None]
    # -R/2 < offset <= R/2, in integers
    cluster = (2 * offset > -R) & (2 * offset <= R)
    return rows[:, :, None] & cluster


def sample_profile(model: SparsityModel, rng: np.random.Generator) -> DelayDopplerProfile:
    return DelayDopplerProfile(sample_profiles(model, rng, 1)[0])


def sample_gains(
    profile: DelayDopplerProfile, model: SparsityModel, rng: np.random.Generator
) -> ChannelRealization:
    """Attach Bernoulli-Gaussian gains to the active cells of ``profile``."""
    if profile.L != model.L or profile.Q != model.Q:
        raise ConfigurationError(
            f"profile grid {profile.L}x{2 * profile.Q + 1} does not match model "
            f"{model.L}x{model.num_doppler}"
        )
    l, q = profile.active()
    var = model.sigma_alpha_sq
    z = rng.standard_normal((l.size, 2))
    gains = np.sqrt(var / 2) * (z[:, 0] + 1j * z[:, 1])
    return ChannelRealization(l, q, gains, var, model.L, model.Q)


def time_varying_convolution(
    samples: np.ndarray, ch: ChannelRealization, N: int, n_start: int = 0
) -> np.ndarray:
    """Noise-free output ``r_n = sum_l s_{n-l} h_{l,n}`` with zero history.

    ``samples[i]`` is the input at time index ``n_start + i``; the Doppler
    phase of every tap is evaluated at that same index.
    """
    s = np.asarray(samples, dtype=complex)
    n = np.arange(n_start, n_start + s.size)
    h = ch.taps(n, N)
    r = np.zeros_like(s)
    for l in np.unique(ch.delays):
        r[l:] += s[: s.size - l] * h[l, l:]
    return r


def complex_noise(rng: np.random.Generator, variance: float, shape) -> np.ndarray:
    z = rng.standard_normal((*np.atleast_1d(shape), 2))
    return np.sqrt(variance / 2) * (z[..., 0] + 1j * z[..., 1])


def apply_channel(
    tx: np.ndarray,
    ch: ChannelRealization,
    params,
    sigma_w_sq: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Pass a prefixed frame through the channel and add white Gaussian noise.

    Time index 0 is the first post-prefix sample; prefix samples carry
    negative indices and feed the convolution memory.
    """
    tx = np.asarray(tx, dtype=complex)
    if ch.L - 1 > params.L_cpp:
        raise ConfigurationError(
            f"prefix too short: L_cpp={params.L_cpp} but the channel spans L={ch.L} taps"
        )
    if tx.shape[-1] != params.N + params.L_cpp:
        raise ConfigurationError(
            f"prefixed frame has length {tx.shape[-1]}, expected {params.N + params.L_cpp}"
        )
    r = time_varying_convolution(tx, ch, params.N, n_start=-params.L_cpp)
    if sigma_w_sq > 0:
        if rng is None:
            raise ConfigurationError("a random generator is required when sigma_w_sq > 0")
        r = r + complex_noise(rng, sigma_w_sq, r.shape)
    return r


@dataclass
class PairCheck:
    cell1: tuple[int, int]
    cell2: tuple[int, int]
    joint: float
    expected: float
    z: float
    passed: bool


@dataclass
class ValidationReport:
    """Empirical check of the marginal and cross-cell independence laws."""

    model: SparsityModel
    num_draws: int
    expected_marginal: float
    marginals: np.ndarray
    marginal_z: np.ndarray
    marginal_passed: bool
    pairs: list[PairCheck] = field(default_factory=list)
    same_row_pairs: list[PairCheck] = field(default_factory=list)
    sigmas: float = 4.0

    @property
    def independence_passed(self) -> bool:
        return all(p.passed for p in self.pairs)

    @property
    def passed(self) -> bool:
        return self.marginal_passed and self.independence_passed

    @property
    def max_marginal_deviation(self) -> float:
        return float(np.max(np.abs(self.marginals - self.expected_marginal)))

    def summary(self) -> str:
        worst = float(np.max(np.abs(self.marginal_z)))
        worst_pair = max((abs(p.z) for p in self.pairs), default=0.0)
        return (
            f"{self.model.kind.value}: marginal {'ok' if self.marginal_passed else 'FAIL'} "
            f"(max |z|={worst:.2f}), independence {'ok' if self.independence_passed else 'FAIL'} "
            f"({len(self.pairs)} pairs, max |z|={worst_pair:.2f})"
        )


def _within(p_hat: float, p: float, n: int, sigmas: float) -> tuple[float, bool]:
    sd = math.sqrt(max(p * (1 - p), 0.0) / n)
    z = (p_hat - p) / sd if sd > 0 else (0.0 if p_hat == p else math.inf)
    # one-count continuity slack for very small probabilities
    return z, abs(p_hat - p) <= sigmas * sd + 1.0 / n


def validate_independence(
    model: SparsityModel,
    num_draws: int = 100_000,
    rng: np.random.Generator | None = None,
    num_pairs: int = 50,
    sigmas: float = 4.0,
    batch: int = 20_000,
) -> ValidationReport:
    """Monte Carlo check that ``model`` satisfies the marginal/independence assumption.

    Cell pairs with distinct delays and distinct Dopplers must have joint
    activation ``(p_d p_D)^2``; same-row pairs are reported but not judged.
    """
    if num_draws < 10_000:
        raise ConfigurationError(f"num_draws must be >= 10^4, got {num_draws}")
    rng = np.random.default_rng() if rng is None else rng
    L, D = model.L, model.num_doppler
    pair_rng = np.random.default_rng(rng.integers(2**63))
    pairs = []
    while len(pairs) < num_pairs and L > 1 and D > 1:
        l1, l2 = pair_rng.choice(L, 2, replace=False)
        j1, j2 = pair_rng.choice(D, 2, replace=False)
        pairs.append((int(l1), int(j1), int(l2), int(j2)))
    same_row = []
    for _ in range(min(10, num_pairs) if D > 1 else 0):
        l1 = int(pair_rng.integers(L))
        j1, j2 = pair_rng.choice(D, 2, replace=False)
        same_row.append((l1, int(j1), l1, int(j2)))

    counts = np.zeros((L, D))
    joint = np.zeros(len(pairs))
    joint_row = np.zeros(len(same_row))
    done = 0
    while done < num_draws:
        size = min(batch, num_draws - done)
        grids = sample_profiles(model, rng, size)
        counts += grids.sum(axis=0)
        for i, (l1, j1, l2, j2) in enumerate(pairs):
            joint[i] += np.count_nonzero(grids[:, l1, j1] & grids[:, l2, j2])
        for i, (l1, j1, l2, j2) in enumerate(same_row):
            joint_row[i] += np.count_nonzero(grids[:, l1, j1] & grids[:, l2, j2])
        done += size

    p = model.cell_probability
    marginals = counts / num_draws
    z = np.zeros_like(marginals)
    ok = True
    for idx in np.ndindex(marginals.shape):
        z[idx], passed = _within(marginals[idx], p, num_draws, sigmas)
        ok &= passed

    def checks(cells, hits):
        out = []
        for (l1, j1, l2, j2), h in zip(cells, hits):
            zz, passed = _within(h / num_draws, p * p, num_draws, sigmas)
            out.append(PairCheck((l1, j1 - model.Q), (l2, j2 - model.Q), h / num_draws, p * p, zz, passed))
        return out

    return ValidationReport(
        model=model,
        num_draws=num_draws,
        expected_marginal=p,
        marginals=marginals,
        marginal_z=z,
        marginal_passed=bool(ok),
        pairs=checks(pairs, joint),
        same_row_pairs=checks(same_row, joint_row),
        sigmas=sigmas,
    )
