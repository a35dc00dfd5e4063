"""Pilot overhead of SCM, OFDM and OTFS, and an OFDM estimation pipeline.

Overheads follow the minimal pilot patterns of each waveform: SCM pilots with
``2(L-1)`` guard samples per active Doppler bin, OFDM pilot symbols carrying
``4 Q0`` guard subcarriers per pilot, and one OTFS pilot guarded over the
whole delay-Doppler spread.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import (
    ChannelRealization,
    DelayDopplerProfile,
    SparsityModel,
    complex_noise,
    sample_gains,
    sample_profile,
    time_varying_convolution,
)
from .errors import ConfigurationError
from .estimator import TrialRecord, incoherent_slots, qpsk, snr_to_noise

__all__ = [
    "Waveform",
    "BaselineOverheadReport",
    "scm_overhead",
    "ofdm_overhead",
    "otfs_overhead",
    "afdm_overhead_report",
    "realized_doppler_count",
    "realized_delay_count",
    "OfdmTrialConfig",
    "OfdmLayout",
    "ofdm_layout",
    "run_ofdm_trial",
    "calibrate_ofdm_pilots",
    "equal_overhead_symbols",
]


class Waveform(str, enum.Enum):
    SCM = "scm"
    OFDM = "ofdm"
    OTFS = "otfs"
    AFDM = "afdm"


@dataclass(frozen=True)
class BaselineOverheadReport:
    waveform: Waveform
    expected_pilot_count: float
    total_overhead_samples: float
    parameters: dict = field(default_factory=dict)


def realized_doppler_count(profile: DelayDopplerProfile) -> int:
    """Doppler bins active on at least one delay."""
    return int(np.count_nonzero(profile.indicators.any(axis=0)))


def realized_delay_count(profile: DelayDopplerProfile) -> int:
    return int(np.count_nonzero(profile.indicators.any(axis=1)))


def scm_overhead(model: SparsityModel, profile: DelayDopplerProfile | None = None) -> BaselineOverheadReport:
    """Time-domain pilots, one per active Doppler bin, each with ``2(L-1)`` guards.

    Without a profile the expectation ``p_D (2Q+1)`` is used; with one, the
    realized number of active Doppler bins.
    """
    if profile is None:
        count = model.p_D * model.num_doppler
    else:
        count = realized_doppler_count(profile)
    return BaselineOverheadReport(Waveform.SCM, count, 2 * count * (model.L - 1))


def ofdm_overhead(
    model: SparsityModel, Q0: int = 1, profile: DelayDopplerProfile | None = None
) -> BaselineOverheadReport:
    """Pilot OFDM symbols, each paying ``L-1`` CP samples plus its pilot subcarriers.

    A pilot symbol holds one pilot per active delay with ``4 Q0`` guards each;
    when those exceed ``L`` subcarriers the whole (length-``L``) symbol is pilots.
    """
    if int(Q0) != Q0 or Q0 < 1:
        raise ConfigurationError(f"Q0 must be an integer >= 1, got {Q0}")
    if profile is None:
        n_symbols = model.p_D * model.num_doppler
        n_sub = model.p_d * model.L
    else:
        n_symbols = realized_doppler_count(profile)
        n_sub = realized_delay_count(profile)
    per_symbol = (model.L - 1) + min(model.L, n_sub * (4 * Q0 + 1))
    return BaselineOverheadReport(
        Waveform.OFDM,
        n_symbols,
        n_symbols * per_symbol,
        {"Q0": Q0, "pilot_subcarriers": n_sub},
    )


def otfs_overhead(model: SparsityModel, N_otfs: int, M_otfs: int, N: int | None = None) -> BaselineOverheadReport:
    """Embedded OTFS pilot guarded over ``(4Q+1) x (2L-1)`` Zak-domain bins."""
    if N is not None and N_otfs * M_otfs != N:
        raise ConfigurationError(f"N_otfs * M_otfs = {N_otfs * M_otfs} must equal N = {N}")
    total = min(4 * model.Q + 1, N_otfs) * min(2 * model.L - 1, M_otfs)
    return BaselineOverheadReport(Waveform.OTFS, 1, total, {"N_otfs": N_otfs, "M_otfs": M_otfs})


def afdm_overhead_report(M: float, params, model: SparsityModel) -> BaselineOverheadReport:
    W = params.window_length(model.L, model.Q)
    return BaselineOverheadReport(Waveform.AFDM, M, M * W, {"P": params.P})


@dataclass
class OfdmTrialConfig:
    """Settings for the two-stage OFDM estimator.

    ``n_pilot_symbols``/``n_pilot_subcarriers`` default to the realized
    number of active Doppler bins/delays of the channel draw.
    """

    model: SparsityModel
    N: int
    snr_db: list[float] = field(default_factory=lambda: [20.0])
    Q0: int = 1
    n_pilot_symbols: int | None = None
    n_pilot_subcarriers: int | None = None
    with_data: bool = True


@dataclass(frozen=True)
class OfdmLayout:
    num_symbols: int
    symbol_length: int
    fft_size: int
    cp: int
    pilot_symbols: np.ndarray
    pilot_subcarriers: np.ndarray
    guard_subcarriers: np.ndarray
    pilot_amplitude: float

    def symbol_start(self, s: int) -> int:
        return s * self.symbol_length

    def fft_window(self, s: int) -> np.ndarray:
        start = self.symbol_start(s) + self.cp
        return np.arange(start, start + self.fft_size)


def ofdm_layout(model: SparsityModel, N: int, n_symbols: int, n_sub: int, Q0: int = 1) -> OfdmLayout:
    """Split an ``N``-sample frame into ``2Q+1`` CP-OFDM symbols and place pilots."""
    S = model.num_doppler
    symbol_length = N // S
    cp = model.L - 1
    K = symbol_length - cp
    if K < model.L:
        raise ConfigurationError(
            f"frame of N={N} cannot hold {S} OFDM symbols with CP {cp} and at least {model.L} subcarriers"
        )
    if not 1 <= n_symbols <= S:
        raise ConfigurationError(f"pilot symbol count must lie in [1, {S}], got {n_symbols}")
    centers = np.arange(S) * symbol_length + cp + K // 2
    sym = np.sort(incoherent_slots(S, centers, n_symbols, N, S))

    block = 4 * Q0 + 1
    slots = K // block
    if n_sub * block > K or n_sub > slots:
        pilots = np.arange(K)
        guards = np.array([], dtype=int)
        amp = 1.0
    else:
        slot_pos = np.arange(slots) * block
        chosen = incoherent_slots(slots, slot_pos, max(n_sub, 1), K, model.L)
        pilots = np.sort(slot_pos[chosen] + 2 * Q0)
        near = np.zeros(K, dtype=bool)
        for f in pilots:
            near[(f + np.arange(-2 * Q0, 2 * Q0 + 1)) % K] = True
        near[pilots] = False
        guards = np.flatnonzero(near)
        amp = math.sqrt(block)
    return OfdmLayout(S, symbol_length, K, cp, sym, pilots, guards, amp)


def _doppler_averages(layout: OfdmLayout, symbols: np.ndarray, dopplers: np.ndarray, N: int) -> np.ndarray:
    """Mean of ``exp(i 2 pi q n / N)`` over each symbol's FFT window, shape ``(symbols, dopplers)``."""
    out = np.empty((symbols.size, dopplers.size), dtype=complex)
    for i, s in enumerate(symbols):
        n = layout.fft_window(int(s))
        out[i] = np.exp(2j * np.pi * np.outer(n, dopplers) / N).mean(axis=0)
    return out


def _expected_leakage(
    layout: OfdmLayout, grid: np.ndarray, q_act: np.ndarray, sigma_alpha_sq: float, N: int
) -> np.ndarray:
    """Mean inter-carrier interference power on each pilot subcarrier of each pilot symbol.

    A path with Doppler ``q`` couples subcarrier ``f - m`` into ``f`` with
    weight ``|D_q(m)|^2``, ``D_q(m) = (1/K) sum_n exp(i 2 pi n (q/N - m/K))``.
    """
    K = layout.fft_size
    qs, mult = np.unique(q_act, return_counts=True)
    n = np.arange(K)
    kernel = np.abs(np.fft.fft(np.exp(2j * np.pi * np.outer(qs, n) / N), axis=1) / K) ** 2
    kernel[:, 0] = 0.0
    weight = sigma_alpha_sq * (mult[:, None] * kernel).sum(axis=0)
    out = np.empty((layout.pilot_symbols.size, layout.pilot_subcarriers.size))
    for i, s in enumerate(layout.pilot_symbols):
        power = np.abs(grid[s]) ** 2
        spread = np.real(np.fft.ifft(np.fft.fft(power) * np.fft.fft(weight)))
        out[i] = np.maximum(spread[layout.pilot_subcarriers], 0.0)
    return out


def run_ofdm_trial(
    config: OfdmTrialConfig,
    rng: np.random.Generator,
    channel: ChannelRealization | None = None,
) -> list[TrialRecord]:
    """Two-stage OFDM channel estimation over one channel draw.

    Stage one estimates, in every pilot symbol, the window-averaged taps of
    the active delays by MMSE from the pilot subcarriers.  Stage two fits,
    per active delay, the gains of its active Doppler bins to those averages
    across pilot symbols.  Inter-carrier interference from the Doppler spread
    inside a symbol is treated as extra noise of known mean power; it still
    leaves an error floor at high SNR.
    """
    model, N = config.model, config.N
    if channel is None:
        profile = sample_profile(model, rng)
        channel = sample_gains(profile, model, rng)
    else:
        profile = channel.profile
    n_sym = config.n_pilot_symbols or max(1, realized_doppler_count(profile))
    n_sub = config.n_pilot_subcarriers or max(1, realized_delay_count(profile))
    layout = ofdm_layout(model, N, n_sym, n_sub, config.Q0)
    overhead = n_sym * ((model.L - 1) + min(model.L, n_sub * (4 * config.Q0 + 1)))
    M_min = realized_doppler_count(profile)
    n_active = profile.n_active
    if n_active == 0:
        return [TrialRecord("ofdm", float(s), n_sym, M_min, 0, overhead, 0.0) for s in config.snr_db]

    K, S = layout.fft_size, layout.num_symbols
    grid = np.zeros((S, K), dtype=complex)
    if config.with_data:
        grid[:] = qpsk(rng, S * K).reshape(S, K)
    is_pilot_sym = np.zeros(S, dtype=bool)
    is_pilot_sym[layout.pilot_symbols] = True
    grid[np.ix_(is_pilot_sym, layout.guard_subcarriers)] = 0
    grid[np.ix_(is_pilot_sym, layout.pilot_subcarriers)] = layout.pilot_amplitude

    body = np.fft.ifft(grid, axis=1, norm="ortho")
    symbols = np.concatenate([body[:, K - layout.cp:], body], axis=1)
    tx = np.zeros(N, dtype=complex)
    tx[: S * layout.symbol_length] = symbols.ravel()
    clean = time_varying_convolution(tx, channel, N)

    l_act, q_act = profile.active()
    delays = np.unique(l_act)
    f = layout.pilot_subcarriers
    steering = np.exp(-2j * np.pi * np.outer(f, delays) / K) * layout.pilot_amplitude
    g_all = _doppler_averages(layout, layout.pilot_symbols, np.arange(-model.Q, model.Q + 1), N)
    sa2 = model.sigma_alpha_sq
    leakage = _expected_leakage(layout, grid, q_act, sa2, N)

    records = []
    for snr in config.snr_db:
        sigma_w_sq = snr_to_noise(snr)
        rx = clean + complex_noise(rng, sigma_w_sq, N) if sigma_w_sq > 0 else clean
        # stage one: window-averaged taps per pilot symbol
        hbar = np.zeros((layout.pilot_symbols.size, delays.size), dtype=complex)
        hvar = np.zeros_like(hbar, dtype=float)
        for i, s in enumerate(layout.pilot_symbols):
            Y = np.fft.fft(rx[layout.fft_window(int(s))], norm="ortho")[f]
            g = g_all[i, q_act + model.Q]
            prior = np.array([sa2 * np.sum(np.abs(g[l_act == l]) ** 2) for l in delays])
            noise = sigma_w_sq + leakage[i]
            A = steering / np.sqrt(noise)[:, None]
            C = np.linalg.inv(np.diag(1.0 / prior) + A.conj().T @ A)
            hbar[i] = C @ A.conj().T @ (Y / np.sqrt(noise))
            hvar[i] = np.real(np.diag(C))
        # stage two: Doppler gains per delay
        alpha_hat = np.zeros(n_active, dtype=complex)
        for j, l in enumerate(delays):
            cols = np.flatnonzero(l_act == l)
            G = g_all[:, q_act[cols] + model.Q]
            z = hbar[:, j]
            d = np.maximum(hvar[:, j], 1e-12 * sa2)
            Ginv = G.conj().T / d
            C = np.linalg.inv(Ginv @ G + np.eye(cols.size) / sa2)
            alpha_hat[cols] = C @ Ginv @ z
        mse = float(np.sum(np.abs(alpha_hat - channel.gains) ** 2))
        records.append(TrialRecord("ofdm", float(snr), n_sym, M_min, n_active, overhead, mse))
    return records


# pilot margins above the minimal OFDM pattern tried during calibration
_OFDM_MARGINS = (0, 1, 2, 3, 4, 6, 8, 12, 16, 24, 32)


def calibrate_ofdm_pilots(
    channel: ChannelRealization,
    model: SparsityModel,
    N: int,
    target_mse: float,
    snr_db: float,
    seed: int,
    Q0: int = 1,
    draws: int = 2,
) -> tuple[int, int, bool]:
    """Pilot symbols and subcarriers a common margin above the minimal pattern.

    Returns ``(n_symbols, n_subcarriers, reached)``; when no margin reaches
    ``target_mse`` the largest pattern tried is returned with ``reached=False``.
    """
    profile = channel.profile
    S = model.num_doppler
    K = N // S - (model.L - 1)
    slots = K // (4 * Q0 + 1)
    base_sym = max(1, realized_doppler_count(profile))
    base_sub = max(1, realized_delay_count(profile))
    last = None
    for m in _OFDM_MARGINS:
        cand = (min(S, base_sym + m), min(slots, base_sub + m))
        if cand == last:
            break
        last = cand
        cfg = OfdmTrialConfig(model, N, [snr_db] * draws, Q0, cand[0], cand[1])
        recs = run_ofdm_trial(cfg, np.random.default_rng(seed), channel=channel)
        if np.mean([r.mse for r in recs]) <= target_mse:
            return cand[0], cand[1], True
    return last[0], last[1], False


def equal_overhead_symbols(overhead: float, model: SparsityModel, n_sub: int, Q0: int = 1) -> int:
    """Pilot-symbol count whose OFDM overhead does not exceed ``overhead``."""
    per_symbol = (model.L - 1) + min(model.L, n_sub * (4 * Q0 + 1))
    return int(min(model.num_doppler, max(1, overhead // per_symbol)))
