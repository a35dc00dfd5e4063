"""DAFT-domain pilot placement and MMSE estimation of the active channel gains.

Each pilot at DAFT position ``p`` produces, through path ``(l, q)``, a single
sample at ``p + q + P*l``.  The window ``[p - Q, p + Q + P(L-1)]`` therefore
collects every contribution of that pilot, and zero guards of ``W - 1`` bins
on either side keep data symbols out of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analysis import afdm_overhead, min_pilots
from .channel import (
    ChannelRealization,
    DelayDopplerProfile,
    SparsityModel,
    apply_channel,
    complex_noise,
    sample_gains,
    sample_profile,
)
from .daft import AfdmParams, add_prefix, daft, idaft, remove_prefix
from .errors import ConfigurationError, InfeasibleTargetError

__all__ = [
    "PilotScheme",
    "MeasurementMatrix",
    "EstimationResult",
    "place_pilots",
    "max_pilots",
    "build_measurement_matrix",
    "mmse_estimate",
    "expected_mse",
    "reconstruct_taps",
    "calibrate_pilot_count",
    "AfdmTrialConfig",
    "TrialRecord",
    "run_afdm_trial",
    "qpsk",
    "incoherent_slots",
]


@dataclass(frozen=True)
class PilotScheme:
    """Pilot positions and the received DAFT bins used for estimation.

    ``observation_set`` lists pilot windows one after the other, each in
    increasing shift order, so that ``len(observation_set) == M * window``.
    """

    N: int
    window: int
    pilot_indices: np.ndarray
    pilot_values: np.ndarray
    guard_zero_indices: np.ndarray
    data_indices: np.ndarray
    observation_set: np.ndarray

    @property
    def M(self) -> int:
        return int(self.pilot_indices.size)

    def pilot_frame(self) -> np.ndarray:
        x = np.zeros(self.N, dtype=complex)
        x[self.pilot_indices] = self.pilot_values
        return x


@dataclass(frozen=True)
class MeasurementMatrix:
    """``entries[:, c]`` is the response to unit gain on active cell ``c``."""

    entries: np.ndarray
    delays: np.ndarray
    dopplers: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


@dataclass
class EstimationResult:
    alpha_hat: np.ndarray
    error_covariance: np.ndarray
    rank_deficient: bool = False
    used_pinv: bool = False
    mse: float | None = None

    @property
    def expected_mse(self) -> float:
        return float(np.real(np.trace(self.error_covariance)))


def max_pilots(params: AfdmParams, model: SparsityModel) -> int:
    """Pilots that fit with pairwise disjoint guard zones of ``2W - 1`` bins."""
    return params.N // (2 * params.window_length(model.L, model.Q) - 1)


def incoherent_slots(num_slots: int, slot_positions: np.ndarray, M: int, N: int, span: int) -> np.ndarray:
    """Greedily choose ``M`` slots whose delay-phase signatures stay distinguishable.

    Paths that collide on one DAFT bin differ only through the factor
    ``exp(-i 2 pi p l / N)`` across pilot positions ``p``; their delays are
    at most ``span - 1`` apart.  Slots are added one at a time, minimizing
    ``max_d |sum_m exp(-i 2 pi p_m d / N)|`` over ``d = 1..span-1``.  The
    selection for ``M`` is a prefix of the selection for ``M + 1``.
    """
    if span <= 1 or M <= 1:
        chosen = np.round(np.arange(M) * num_slots / max(M, 1)).astype(int)
        return np.sort(chosen)
    d = np.arange(1, span)
    phasors = np.exp(-2j * np.pi * np.outer(slot_positions, d) / N)
    acc = phasors[0].copy()
    chosen = [0]
    free = np.ones(num_slots, dtype=bool)
    free[0] = False
    for _ in range(M - 1):
        cand = np.flatnonzero(free)
        cost = np.max(np.abs(acc[None, :] + phasors[cand]), axis=1)
        best = cand[int(np.argmin(cost))]
        chosen.append(int(best))
        acc += phasors[best]
        free[best] = False
    return np.array(chosen)


def place_pilots(
    params: AfdmParams,
    model: SparsityModel,
    M: int,
    *,
    spacing: str = "incoherent",
    pilot_energy: float | str = "zone",
    rng: np.random.Generator | None = None,
) -> PilotScheme:
    """Place ``M`` DAFT-domain pilots with isolating zero guards.

    Args:
        spacing: ``"incoherent"`` picks positions on a grid of
            ``N // (2W - 1)`` slots with :func:`incoherent_slots`; ``"even"``
            uses ``floor(i N / M)``.
        pilot_energy: ``"zone"`` gives each pilot the energy of the
            ``2W - 1`` bins its guard zone takes from data, so the frame
            energy stays ``N``; ``"window"`` uses ``W``; ``"unit"`` gives unit
            modulus; a number sets ``|x_p|^2`` directly.
        rng: if given, pilot phases are drawn uniformly; otherwise all pilots
            are real and positive.
    """
    N, L, Q, P = params.N, model.L, model.Q, params.P
    W = params.window_length(L, Q)
    zone = 2 * W - 1
    G = N // zone
    if M < 1 or M > G:
        raise ConfigurationError(
            f"cannot fit M={M} pilots with window {W} in N={N}; maximum feasible M is {G}"
        )
    if spacing == "even":
        pos = (np.arange(M) * N) // M
        gaps = np.diff(np.concatenate([pos, [pos[0] + N]]))
        if M > 1 and gaps.min() < zone:
            raise ConfigurationError(f"even spacing N/M={N / M:.1f} is below the guard zone {zone}")
    elif spacing == "incoherent":
        slots = (np.arange(G) * N) // G
        span = (2 * Q) // P + 1
        pos = np.sort(slots[incoherent_slots(G, slots, M, N, span)])
    else:
        raise ConfigurationError(f"unknown pilot spacing {spacing!r}")

    if pilot_energy == "zone":
        amp = math.sqrt(zone)
    elif pilot_energy == "window":
        amp = math.sqrt(W)
    elif pilot_energy == "unit":
        amp = 1.0
    else:
        amp = math.sqrt(float(pilot_energy))
    if rng is None:
        values = np.full(M, amp, dtype=complex)
    else:
        values = amp * np.exp(2j * np.pi * rng.random(M))

    offsets = np.arange(-Q, Q + P * (L - 1) + 1)
    observation = ((pos[:, None] + offsets[None, :]) % N).ravel()

    near = np.zeros(N, dtype=bool)
    for p in pos:
        near[(p + np.arange(-(W - 1), W)) % N] = True
    is_pilot = np.zeros(N, dtype=bool)
    is_pilot[pos] = True
    guards = np.flatnonzero(near & ~is_pilot)
    data = np.flatnonzero(~near)
    return PilotScheme(N, W, pos, values, guards, data, observation)


def _path_responses(frame: np.ndarray, delays, dopplers, params: AfdmParams) -> np.ndarray:
    """DAFT-domain response of every path to a DAFT frame, shape ``(n_paths, N)``."""
    N = params.N
    s = idaft(frame, params)
    n = np.arange(N)
    delays = np.asarray(delays)
    dopplers = np.asarray(dopplers)
    shifted = s[(n[None, :] - delays[:, None]) % N]
    doppler = np.exp(2j * np.pi * ((dopplers[:, None] * n[None, :]) % N) / N)
    return daft(shifted * doppler, params)


def build_measurement_matrix(
    scheme: PilotScheme, profile: DelayDopplerProfile, params: AfdmParams
) -> MeasurementMatrix:
    """Stack the windowed DAFT responses of all active paths to the pilot frame.

    Each column is obtained by inverse-DAFT of the pilot frame, a cyclic delay
    by ``l``, modulation by ``exp(i 2 pi q n / N)`` and a forward DAFT.
    """
    l, q = profile.active()
    if l.size == 0:
        raise ConfigurationError("measurement matrix needs at least one active path")
    resp = _path_responses(scheme.pilot_frame(), l, q, params)
    return MeasurementMatrix(resp[:, scheme.observation_set].T.copy(), l, q)


def _as_array(Mp) -> np.ndarray:
    return Mp.entries if isinstance(Mp, MeasurementMatrix) else np.asarray(Mp)


def mmse_estimate(
    y_p: np.ndarray,
    Mp,
    sigma_alpha_sq: float,
    sigma_w_sq: float,
    alpha_true: np.ndarray | None = None,
) -> EstimationResult:
    """Linear MMSE estimate of i.i.d. ``CN(0, sigma_alpha_sq)`` gains."""
    A = _as_array(Mp)
    y = np.asarray(y_p, dtype=complex)
    if A.shape[0] != y.size:
        raise ConfigurationError(f"observation length {y.size} does not match matrix rows {A.shape[0]}")
    n = A.shape[1]
    gram = A.conj().T @ A
    rank = np.linalg.matrix_rank(gram) if n else 0
    deficient = rank < n
    if sigma_w_sq > 0:
        K = sigma_alpha_sq * gram + sigma_w_sq * np.eye(n)
        alpha_hat = sigma_alpha_sq * np.linalg.solve(K, A.conj().T @ y)
        cov = sigma_alpha_sq * sigma_w_sq * np.linalg.inv(K)
        used_pinv = False
    elif not deficient:
        alpha_hat = np.linalg.solve(gram, A.conj().T @ y)
        cov = np.zeros((n, n), dtype=complex)
        used_pinv = False
    else:
        pinv = np.linalg.pinv(A)
        alpha_hat = pinv @ y
        cov = sigma_alpha_sq * (np.eye(n) - pinv @ A)
        used_pinv = True
    mse = None if alpha_true is None else float(np.sum(np.abs(alpha_hat - alpha_true) ** 2))
    return EstimationResult(alpha_hat, cov, bool(deficient), used_pinv, mse)


def expected_mse(Mp, sigma_alpha_sq: float, sigma_w_sq: float) -> float:
    """``E ||alpha_hat - alpha||^2`` given the measurement matrix (trace of the posterior covariance)."""
    A = _as_array(Mp)
    n = A.shape[1]
    gram = A.conj().T @ A
    if sigma_w_sq > 0:
        K = sigma_alpha_sq * gram + sigma_w_sq * np.eye(n)
        return float(sigma_alpha_sq * sigma_w_sq * np.real(np.trace(np.linalg.inv(K))))
    return float(sigma_alpha_sq * (n - np.linalg.matrix_rank(gram)))


def reconstruct_taps(alpha_hat: np.ndarray, profile: DelayDopplerProfile, N: int) -> np.ndarray:
    """Tap trajectories ``h_hat[l, n]``; inactive cells contribute zero."""
    L, Q = profile.L, profile.Q
    if 2 * Q + 1 > N:
        raise ConfigurationError(f"Doppler grid 2Q+1={2 * Q + 1} exceeds N={N}")
    l, q = profile.active()
    spectrum = np.zeros((L, N), dtype=complex)
    spectrum[l, q % N] = alpha_hat
    return N * np.fft.ifft(spectrum, axis=1)


def snr_to_noise(snr_db: float) -> float:
    return 10.0 ** (-snr_db / 10.0)


def qpsk(rng: np.random.Generator, n: int) -> np.ndarray:
    bits = rng.integers(0, 2, size=(n, 2))
    return ((1 - 2 * bits[:, 0]) + 1j * (1 - 2 * bits[:, 1])) / np.sqrt(2)


def calibrate_pilot_count(
    target_mse: float,
    snr_db: float,
    model: SparsityModel,
    params: AfdmParams,
    profile: DelayDopplerProfile,
    trials: int | None = None,
    rng: np.random.Generator | None = None,
    *,
    spacing: str = "incoherent",
    pilot_energy: float | str = "zone",
    M_max: int | None = None,
) -> int:
    """Smallest pilot count, starting at ``max_k X_k``, meeting ``target_mse`` on ``profile``.

    With ``trials=None`` the criterion is the exact conditional expected MSE
    (averaged over gains and noise for this delay-Doppler profile).
    Otherwise it is the mean squared error over ``trials`` Monte Carlo draws
    of gains and noise taken from ``rng``.
    """
    if profile.n_active == 0:
        return 0
    sigma_w_sq = snr_to_noise(snr_db)
    start = max(1, min_pilots(profile, params.P))
    top = max_pilots(params, model) if M_max is None else min(M_max, max_pilots(params, model))
    if start > top:
        raise InfeasibleTargetError(
            f"M_min={start} exceeds the {top} pilots that fit in the frame", float("inf"), top
        )
    if trials is not None:
        if rng is None:
            raise ConfigurationError("Monte Carlo calibration needs a random generator")
        seed = int(rng.integers(2**63))
    best = (math.inf, start)
    full = None
    if spacing == "incoherent":
        # guard zones keep every observation window blind to all but its own
        # pilot, so one response to a fully loaded frame serves every M
        G = max_pilots(params, model)
        full_scheme = place_pilots(params, model, G, spacing=spacing, pilot_energy=pilot_energy)
        full = build_measurement_matrix(full_scheme, profile, params).entries
        W = full_scheme.observation_set.size // G
        slot_of = {int(p): i for i, p in enumerate(full_scheme.pilot_indices)}
    for M in range(start, top + 1):
        scheme = place_pilots(params, model, M, spacing=spacing, pilot_energy=pilot_energy)
        if full is None:
            Mp = build_measurement_matrix(scheme, profile, params)
        else:
            rows = np.concatenate([slot_of[int(p)] * W + np.arange(W) for p in scheme.pilot_indices])
            Mp = full[rows]
        if trials is None:
            mse = expected_mse(Mp, model.sigma_alpha_sq, sigma_w_sq)
        else:
            # same draws for every M so the search is monotone in practice
            mc = np.random.default_rng(seed)
            errs = []
            for _ in range(trials):
                ch = sample_gains(profile, model, mc)
                A = _as_array(Mp)
                y = A @ ch.gains + complex_noise(mc, sigma_w_sq, A.shape[0])
                errs.append(mmse_estimate(y, Mp, model.sigma_alpha_sq, sigma_w_sq, ch.gains).mse)
            mse = float(np.mean(errs))
        if mse < best[0]:
            best = (mse, M)
        if mse <= target_mse:
            return M
    raise InfeasibleTargetError(
        f"target MSE {target_mse:g} not reached at SNR {snr_db} dB; best {best[0]:.3g} with M={best[1]}",
        best[0],
        best[1],
    )


@dataclass
class AfdmTrialConfig:
    """Settings for one AFDM estimation trial.

    ``M=None`` calibrates the pilot count per realization against
    ``target_mse`` at ``target_snr_db``.
    """

    model: SparsityModel
    params: AfdmParams
    snr_db: list[float] = field(default_factory=lambda: [20.0])
    M: int | None = None
    target_mse: float = 1e-3
    target_snr_db: float = 20.0
    with_data: bool = True
    spacing: str = "incoherent"
    pilot_energy: float | str = "zone"


@dataclass
class TrialRecord:
    waveform: str
    snr_db: float
    M: int
    M_min: int
    n_active: int
    overhead_samples: float
    mse: float
    expected_mse: float = float("nan")
    tap_mse: float = float("nan")


def run_afdm_trial(
    config: AfdmTrialConfig,
    rng: np.random.Generator,
    channel: ChannelRealization | None = None,
) -> list[TrialRecord]:
    """Simulate pilot transmission over one channel draw and estimate its gains.

    The frame goes through the full chain IDAFT, prefix, time-varying channel,
    noise, prefix removal and DAFT.  One record is returned per SNR point;
    the channel, pilot count and data symbols are shared across points.
    """
    model, params = config.model, config.params
    if channel is None:
        profile = sample_profile(model, rng)
        channel = sample_gains(profile, model, rng)
    else:
        profile = channel.profile
    M_min = min_pilots(profile, params.P)
    n_active = profile.n_active
    if config.M is not None:
        M = config.M
    else:
        M = calibrate_pilot_count(
            config.target_mse,
            config.target_snr_db,
            model,
            params,
            profile,
            spacing=config.spacing,
            pilot_energy=config.pilot_energy,
        )
    overhead = afdm_overhead(M, params, model)
    if n_active == 0 or M == 0:
        return [
            TrialRecord("afdm", float(s), M, M_min, n_active, overhead, 0.0, 0.0, 0.0) for s in config.snr_db
        ]

    scheme = place_pilots(params, model, M, spacing=config.spacing, pilot_energy=config.pilot_energy)
    x = scheme.pilot_frame()
    if config.with_data:
        x[scheme.data_indices] = qpsk(rng, scheme.data_indices.size)
    tx = add_prefix(idaft(x, params), params)
    clean = apply_channel(tx, channel, params, 0.0)
    Mp = build_measurement_matrix(scheme, profile, params)

    records = []
    for snr in config.snr_db:
        sigma_w_sq = snr_to_noise(snr)
        rx = clean + complex_noise(rng, sigma_w_sq, clean.shape)
        y = daft(remove_prefix(rx, params), params)[scheme.observation_set]
        est = mmse_estimate(y, Mp, model.sigma_alpha_sq, sigma_w_sq, channel.gains)
        h = reconstruct_taps(channel.gains, profile, params.N)
        h_hat = reconstruct_taps(est.alpha_hat, profile, params.N)
        tap_mse = float(np.sum(np.abs(h - h_hat) ** 2) / params.N)
        records.append(
            TrialRecord("afdm", float(snr), M, M_min, n_active, overhead, est.mse, est.expected_mse, tap_mse)
        )
    return records
