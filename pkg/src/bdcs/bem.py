"""Complex-exponential basis expansion model (CE-BEM).

Conventions used throughout the package:

* ``W`` is the unitary DFT, ``W[m, n] = N**-0.5 * exp(-2j*pi*m*n/N)``.
* A per-antenna coefficient slice is an ``L x D`` array ``theta`` with
  ``theta[l, d]`` the coefficient of basis column ``d`` on tap ``l``.
* The stacked coefficient matrix ``Lambda`` is ``(N_B*L) x D``; rows
  ``nb*L : (nb+1)*L`` belong to antenna ``nb``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from bdcs.errors import DimensionError, ParameterError


def dft_matrix(n: int) -> np.ndarray:
    """Unitary N x N DFT matrix."""
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


@dataclass(frozen=True)
class BemBasis:
    n_subcarriers: int
    order: int
    matrix: np.ndarray = field(repr=False)

    @property
    def center(self) -> int:
        """Index of the all-ones column, ``(D-1)/2``."""
        return (self.order - 1) // 2

    def column(self, d: int) -> np.ndarray:
        return self.matrix[:, d]


@dataclass
class BemCoefficientMatrix:
    n_antennas: int
    channel_length: int
    order: int
    data: np.ndarray
    support: tuple[int, ...] = ()

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        expected = (self.n_antennas * self.channel_length, self.order)
        if self.data.shape != expected:
            raise DimensionError(f"coefficient matrix has shape {self.data.shape}, expected {expected}")
        self.support = tuple(sorted(int(l) for l in self.support))

    def antenna_slice(self, nb: int) -> np.ndarray:
        """``L x D`` coefficients of antenna ``nb`` (0-based)."""
        L = self.channel_length
        return self.data[nb * L:(nb + 1) * L, :]

    def as_array(self) -> np.ndarray:
        """Coefficients reshaped to ``N_B x L x D``."""
        return self.data.reshape(self.n_antennas, self.channel_length, self.order)

    @classmethod
    def from_array(cls, theta: np.ndarray, support=()) -> "BemCoefficientMatrix":
        nb, L, D = theta.shape
        return cls(nb, L, D, np.asarray(theta).reshape(nb * L, D), support)


def build_cebem_basis(n_subcarriers: int, order: int) -> BemBasis:
    """N x D CE-BEM basis with ``v_d[n] = exp(2j*pi*n*(d - (D-1)/2)/N)``."""
    if order < 1 or order % 2 == 0:
        raise ParameterError(f"BEM order must be a positive odd integer, got {order}")
    if order > n_subcarriers:
        raise ParameterError(f"BEM order {order} exceeds number of subcarriers {n_subcarriers}")
    n = np.arange(n_subcarriers)[:, None]
    freqs = np.arange(order)[None, :] - (order - 1) // 2
    matrix = np.exp(2j * np.pi * n * freqs / n_subcarriers)
    return BemBasis(n_subcarriers, order, matrix)


def fit_bem_coefficients(tap_series: np.ndarray, basis: BemBasis) -> np.ndarray:
    """Least-squares BEM coefficients of one tap's time series.

    The CE-BEM columns are orthogonal with squared norm N, so the normal
    equations reduce to ``V^H h / N``.
    """
    tap_series = np.asarray(tap_series)
    if tap_series.shape[0] != basis.n_subcarriers:
        raise DimensionError(
            f"tap series has length {tap_series.shape[0]}, basis expects {basis.n_subcarriers}"
        )
    return basis.matrix.conj().T @ tap_series / basis.n_subcarriers


def taps_from_coefficients(theta: np.ndarray, basis: BemBasis) -> np.ndarray:
    """Time-varying taps ``h[n, l] = sum_d v_d[n] theta[l, d]`` (N x L)."""
    theta = np.asarray(theta)
    if theta.shape[-1] != basis.order:
        raise DimensionError(f"coefficients have {theta.shape[-1]} orders, basis has {basis.order}")
    return basis.matrix @ theta.T


def time_channel_from_taps(taps: np.ndarray) -> np.ndarray:
    """Time-domain channel matrix ``H_t[p, q] = h[p, (p - q) mod N]``."""
    taps = np.asarray(taps)
    N, L = taps.shape
    if L > N:
        raise DimensionError(f"channel length {L} exceeds N={N}")
    p = np.arange(N)[:, None]
    lag = (p - np.arange(N)[None, :]) % N
    padded = np.zeros((N, N), dtype=complex)
    padded[:, :L] = taps
    return padded[p, lag]


def circulant_from_dft(first_column: np.ndarray, n: int) -> np.ndarray:
    """``W^H diag(sqrt(N) W_L c) W``, the circulant matrix with first column ``c``.

    With the unitary DFT the diagonal needs the ``sqrt(N)`` factor.
    """
    c = np.asarray(first_column)
    if c.shape[0] > n:
        raise DimensionError(f"first column length {c.shape[0]} exceeds N={n}")
    W = dft_matrix(n)
    eig = np.sqrt(n) * (W[:, :c.shape[0]] @ c)
    return W.conj().T @ (eig[:, None] * W)


def bem_to_time_channel(theta: np.ndarray, basis: BemBasis) -> np.ndarray:
    """Time-domain channel matrix of one antenna from its ``L x D`` coefficients.

    Evaluated as ``sum_d diag(v_d) C_d`` with ``C_d`` the circulant built on
    tap vector ``theta[:, d]``; no modeling error term.
    """
    theta = np.asarray(theta)
    N = basis.n_subcarriers
    if theta.ndim != 2 or theta.shape[1] != basis.order:
        raise DimensionError(f"expected L x {basis.order} coefficients, got {theta.shape}")
    if theta.shape[0] > N:
        raise DimensionError(f"channel length {theta.shape[0]} exceeds N={N}")
    H = np.zeros((N, N), dtype=complex)
    for d in range(basis.order):
        H += basis.matrix[:, d][:, None] * circulant_from_dft(theta[:, d], N)
    return H


def time_to_freq_channel(h_time: np.ndarray) -> np.ndarray:
    """``H_f = W H_t W^H``."""
    h_time = np.asarray(h_time)
    if h_time.ndim != 2 or h_time.shape[0] != h_time.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {h_time.shape}")
    W = dft_matrix(h_time.shape[0])
    return W @ h_time @ W.conj().T


def freq_to_time_channel(h_freq: np.ndarray) -> np.ndarray:
    """Inverse of :func:`time_to_freq_channel`."""
    h_freq = np.asarray(h_freq)
    if h_freq.ndim != 2 or h_freq.shape[0] != h_freq.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {h_freq.shape}")
    W = dft_matrix(h_freq.shape[0])
    return W.conj().T @ h_freq @ W


def bem_freq_channel(theta: np.ndarray, basis: BemBasis) -> np.ndarray:
    """Frequency-domain channel ``sum_d V_d Theta_d`` built directly.

    ``V_d = W diag(v_d) W^H`` is a circular shift of the subcarrier axis and
    ``Theta_d = diag(sqrt(N) W [theta_d; 0])`` holds the per-subcarrier
    response of order ``d``.
    """
    theta = np.asarray(theta)
    N = basis.n_subcarriers
    if theta.ndim != 2 or theta.shape[1] != basis.order:
        raise DimensionError(f"expected L x {basis.order} coefficients, got {theta.shape}")
    L = theta.shape[0]
    if L > N:
        raise DimensionError(f"channel length {L} exceeds N={N}")
    W = dft_matrix(N)
    H = np.zeros((N, N), dtype=complex)
    for d in range(basis.order):
        V_d = W @ (basis.matrix[:, d][:, None] * W.conj().T)
        response = np.sqrt(N) * (W[:, :L] @ theta[:, d])
        H += V_d * response[None, :]
    return H
