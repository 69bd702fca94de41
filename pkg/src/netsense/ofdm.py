"""OFDM downlink simulation for the sensing phase.

Conventions
-----------
* ``W`` is the unitary DFT, so ``chi = sqrt(p) * W^H s`` equals
  ``sqrt(p * N) * ifft(s)``.
* Channel arrays have shape ``(M, M, L)`` indexed ``[u, m, t]``: transmitter
  ``u``, receiver ``m``, delay ``t`` samples (0-based: ``t = 0`` is zero
  delay, and 1-based tap numbering would call it ``t + 1``).
* Dictionary column ``u * L + t`` belongs to transmitter ``u`` and delay ``t``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator

from .geometry import PathSet

__all__ = [
    "C0",
    "OfdmConfig",
    "PathTooLongError",
    "generate_symbols",
    "build_channels",
    "modulate",
    "simulate_reception",
    "remove_cp_dft",
    "build_dictionary",
    "dictionary_operator",
    "frequency_model",
]

C0 = 299_792_458.0


@dataclass
class OfdmConfig:
    n_subcarriers: int = 1024
    cp_len: int = 512
    subcarrier_spacing: float = 390_625.0
    n_taps: int = 512
    power: float = 1.0
    # weakest Type I echo (|gain| 0.5) sits 20 dB above the noise after
    # correlating against its dictionary column: p*N*0.25/noise_var = 100
    noise_var: float = 2.56
    c0: float = C0

    def validate(self) -> None:
        if not 1 <= self.n_taps <= self.cp_len <= self.n_subcarriers:
            raise ValueError(
                f"need 1 <= L <= Q <= N, got L={self.n_taps}, Q={self.cp_len}, N={self.n_subcarriers}"
            )
        if self.power <= 0:
            raise ValueError(f"power must be positive, got {self.power}")
        if self.noise_var < 0:
            raise ValueError(f"noise_var must be >= 0, got {self.noise_var}")

    @property
    def bandwidth(self) -> float:
        return self.n_subcarriers * self.subcarrier_spacing

    @property
    def range_bin(self) -> float:
        """Path length covered by one sample delay, ``c0 / (N * df)``."""
        return self.c0 / self.bandwidth

    @property
    def max_path_length(self) -> float:
        return self.n_taps * self.range_bin


class PathTooLongError(ValueError):
    pass


def generate_symbols(cfg: OfdmConfig, n_bs: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-modulus QPSK pilots, shape ``(n_bs, N)``."""
    bits = rng.integers(0, 2, size=(n_bs, cfg.n_subcarriers, 2))
    return ((2 * bits[..., 0] - 1) + 1j * (2 * bits[..., 1] - 1)) / math.sqrt(2.0)


def build_channels(paths: PathSet, cfg: OfdmConfig, n_bs: int) -> np.ndarray:
    """Quantize every path onto its delay tap and sum colliding gains.

    A path of length ``d`` lands on delay ``floor(d / range_bin)``.
    """
    h = np.zeros((n_bs, n_bs, cfg.n_taps), dtype=complex)
    for path in paths:
        t = int(math.floor(path.path_length / cfg.range_bin))
        if t >= cfg.n_taps or t < 0:
            raise PathTooLongError(
                f"{path.kind.name} path {path.tx_bs}->{path.rx_bs} of length {path.path_length:.3f} m "
                f"needs delay tap {t}, beyond the {cfg.n_taps}-tap channel "
                f"(max {cfg.max_path_length:.3f} m)"
            )
        h[path.tx_bs, path.rx_bs, t] += path.gain
    return h


def modulate(symbols: np.ndarray, cfg: OfdmConfig) -> np.ndarray:
    """IDFT each symbol vector (last axis) and prepend the cyclic prefix."""
    N, Q = cfg.n_subcarriers, cfg.cp_len
    chi = math.sqrt(cfg.power * N) * np.fft.ifft(symbols, axis=-1)
    return np.concatenate([chi[..., N - Q:], chi], axis=-1) if Q else chi


def simulate_reception(
    channels: np.ndarray,
    tx: np.ndarray,
    cfg: OfdmConfig,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Superimpose all delayed echoes at every BS over the useful window.

    ``tx`` holds the CP-prefixed signals, shape ``(M, N + Q)``. Returns
    ``(M, N)``. Noise is added only when ``rng`` is given and
    ``cfg.noise_var > 0``.
    """
    N, Q = cfg.n_subcarriers, cfg.cp_len
    M = channels.shape[0]
    tx = np.asarray(tx)
    if tx.shape != (M, N + Q):
        raise ValueError(f"expected tx of shape {(M, N + Q)}, got {tx.shape}")
    y = np.zeros((M, N), dtype=complex)
    for u, m, t in zip(*np.nonzero(channels)):
        if t > Q:
            raise ValueError(f"delay {t} exceeds cyclic prefix {Q}")
        y[m] += channels[u, m, t] * tx[u, Q - t:Q - t + N]
    if rng is not None and cfg.noise_var > 0:
        scale = math.sqrt(cfg.noise_var / 2.0)
        y += scale * (rng.standard_normal((M, N)) + 1j * rng.standard_normal((M, N)))
    return y


def remove_cp_dft(received: np.ndarray, cfg: OfdmConfig) -> np.ndarray:
    """Unitary DFT of the useful window; strips the CP if still attached."""
    N, Q = cfg.n_subcarriers, cfg.cp_len
    received = np.asarray(received)
    n = received.shape[-1]
    if n == N + Q and Q:
        received = received[..., Q:]
    elif n != N:
        raise ValueError(f"received length {n} is neither N={N} nor N+Q={N + Q}")
    return np.fft.fft(received, axis=-1) / math.sqrt(N)


def build_dictionary(symbols: np.ndarray, cfg: OfdmConfig) -> np.ndarray:
    """Dense ``N x (M*L)`` matrix ``[diag(s_1) G, ..., diag(s_M) G]``."""
    N, L = cfg.n_subcarriers, cfg.n_taps
    symbols = np.atleast_2d(symbols)
    n = np.arange(N)[:, None]
    t = np.arange(L)[None, :]
    G = np.exp(-2j * np.pi * n * t / N)
    return np.hstack([s[:, None] * G for s in symbols])


def dictionary_operator(symbols: np.ndarray, cfg: OfdmConfig, scale: float = 1.0) -> LinearOperator:
    """FFT-backed ``scale * build_dictionary(symbols, cfg)``.

    ``G h`` is the length-``N`` FFT of the zero-padded taps, and ``G^H v`` is
    the first ``L`` samples of ``N * ifft(v)``.
    """
    N, L = cfg.n_subcarriers, cfg.n_taps
    symbols = np.atleast_2d(np.asarray(symbols, dtype=complex))
    M = symbols.shape[0]
    conj_s = symbols.conj()

    def matvec(h):
        h = np.reshape(h, (M, L))
        spec = np.fft.fft(h, n=N, axis=-1)
        return scale * np.sum(symbols * spec, axis=0)

    def rmatvec(v):
        v = np.reshape(v, N)
        back = N * np.fft.ifft(conj_s * v, axis=-1)[:, :L]
        return np.conj(scale) * back.ravel()

    def matmat(X):
        return np.column_stack([matvec(col) for col in X.T])

    def rmatmat(X):
        return np.column_stack([rmatvec(col) for col in X.T])

    return LinearOperator((N, M * L), matvec=matvec, rmatvec=rmatvec, matmat=matmat, rmatmat=rmatmat, dtype=complex)


def frequency_model(channels: np.ndarray, symbols: np.ndarray, cfg: OfdmConfig) -> np.ndarray:
    """Noiseless ``sqrt(p) * G~ h_m`` for every receiver, shape ``(M, N)``."""
    op = dictionary_operator(symbols, cfg, math.sqrt(cfg.power))
    M = channels.shape[0]
    return np.stack([op.matvec(channels[:, m, :].ravel()) for m in range(M)])
