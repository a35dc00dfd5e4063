"""Discrete affine Fourier transform (DAFT) pair and chirp-periodic prefix.

The forward transform is implemented as ``Lambda_c2 @ F @ Lambda_c1`` with
``F`` the unitary DFT, i.e. a chirp multiply, an FFT and a second chirp
multiply.  All functions operate on the last axis so that batches of frames
can be transformed at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "AfdmParams",
    "idaft",
    "daft",
    "add_prefix",
    "remove_prefix",
    "chirp",
]


@dataclass(frozen=True)
class AfdmParams:
    """AFDM waveform configuration.

    Attributes:
        N: Frame length in samples (positive, even).
        P: Chirp slope integer, ``c1 = -P / (2N)``.
        c2: Second chirp parameter.
        L_cpp: Prefix length in samples.
    """

    N: int
    P: int = 1
    c2: float = 0.0
    L_cpp: int = 0

    def __post_init__(self):
        if int(self.N) != self.N or self.N <= 0 or self.N % 2:
            raise ConfigurationError(f"N must be a positive even integer, got {self.N}")
        if int(self.P) != self.P or self.P < 1:
            raise ConfigurationError(f"P must be an integer >= 1, got {self.P}")
        if int(self.L_cpp) != self.L_cpp or self.L_cpp < 0:
            raise ConfigurationError(f"L_cpp must be a non-negative integer, got {self.L_cpp}")
        if self.L_cpp >= self.N:
            raise ConfigurationError(f"L_cpp={self.L_cpp} must be smaller than N={self.N}")

    @property
    def c1(self) -> float:
        return -self.P / (2 * self.N)

    def window_length(self, L: int, Q: int) -> int:
        """Number of DAFT bins spanned by the image of one pilot."""
        return (L - 1) * self.P + 2 * Q + 1


def chirp(N: int, c: float, *, P: int | None = None) -> np.ndarray:
    """Return ``exp(-i 2 pi c n^2)`` for ``n = 0..N-1``.

    When ``P`` is given, ``c`` is taken to be ``-P / (2N)`` and the phase is
    reduced modulo ``2N`` in integer arithmetic, which keeps the chirp exact
    for large ``N``.
    """
    n = np.arange(N, dtype=np.int64)
    if P is not None:
        residue = (P * (n * n)) % (2 * N)
        return np.exp(1j * np.pi * residue / N)
    return np.exp(-2j * np.pi * c * (n.astype(float) ** 2))


def _chirps(params: AfdmParams) -> tuple[np.ndarray, np.ndarray]:
    lam_c1 = chirp(params.N, params.c1, P=params.P)
    if params.c2 == 0:
        lam_c2 = np.ones(params.N, dtype=complex)
    else:
        lam_c2 = chirp(params.N, params.c2)
    return lam_c1, lam_c2


def _check_length(x: np.ndarray, expected: int, what: str) -> None:
    if x.shape[-1] != expected:
        raise ConfigurationError(f"{what} has length {x.shape[-1]}, expected {expected}")


def idaft(coeffs: np.ndarray, params: AfdmParams) -> np.ndarray:
    """Map DAFT-domain symbols to time-domain samples (AFDM modulation)."""
    x = np.asarray(coeffs, dtype=complex)
    _check_length(x, params.N, "DAFT frame")
    lam_c1, lam_c2 = _chirps(params)
    return np.conj(lam_c1) * np.fft.ifft(np.conj(lam_c2) * x, axis=-1, norm="ortho")


def daft(frame: np.ndarray, params: AfdmParams) -> np.ndarray:
    """Map prefix-free time-domain samples to the DAFT domain."""
    r = np.asarray(frame, dtype=complex)
    _check_length(r, params.N, "time frame")
    lam_c1, lam_c2 = _chirps(params)
    return lam_c2 * np.fft.fft(lam_c1 * r, axis=-1, norm="ortho")


def add_prefix(frame: np.ndarray, params) -> np.ndarray:
    """Prepend the chirp-periodic prefix of ``params.L_cpp`` samples.

    ``params`` only needs ``N``, ``c1`` and ``L_cpp``.  For ``2 c1 N`` integer
    and ``N`` even the prefix is a plain cyclic prefix.
    """
    s = np.asarray(frame, dtype=complex)
    N, L_cpp = params.N, params.L_cpp
    _check_length(s, N, "time frame")
    if L_cpp == 0:
        return s.copy()
    tail = s[..., N - L_cpp:]
    two_c1_n = 2 * params.c1 * N
    if N % 2 == 0 and np.isclose(two_c1_n, round(two_c1_n), rtol=0, atol=1e-12):
        return np.concatenate([tail, s], axis=-1)
    n = np.arange(-L_cpp, 0)
    phase = np.exp(-2j * np.pi * params.c1 * (N**2 + 2 * N * n))
    return np.concatenate([tail * phase, s], axis=-1)


def remove_prefix(frame: np.ndarray, params) -> np.ndarray:
    """Drop the first ``L_cpp`` samples of a prefixed frame."""
    r = np.asarray(frame)
    if r.shape[-1] < params.N + params.L_cpp:
        raise ConfigurationError(
            f"prefixed frame has length {r.shape[-1]}, need at least {params.N + params.L_cpp}"
        )
    return r[..., params.L_cpp:params.L_cpp + params.N]
