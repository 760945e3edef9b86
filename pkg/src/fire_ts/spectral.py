"""Discrete Fourier analysis for real series.

Transforms act on the last axis and accept arbitrary leading (batch) axes.
Power-of-two lengths use an iterative radix-2 decimation-in-time FFT; other
lengths use a direct O(N^2) evaluation through a cached DFT matrix.

The one-sided layout keeps bins ``0..N//2``; the remaining bins follow from
conjugate symmetry.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import CTensor, Tensor, record

__all__ = [
    "Spectrum",
    "fft",
    "ifft",
    "naive_dft",
    "rfft_array",
    "irfft_array",
    "dft_forward",
    "dft_inverse",
    "canonical_weights",
    "reconstruct_trig",
    "euler_parts",
    "rfft",
    "irfft",
]


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@lru_cache(maxsize=None)
def _bitrev(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=None)
def _twiddles(size: int) -> np.ndarray:
    half = size // 2
    return np.exp(-2j * np.pi * np.arange(half) / size)


@lru_cache(maxsize=None)
def _dft_matrix(n: int) -> np.ndarray:
    k = np.arange(n)
    # reduce k*n mod N before scaling so large products keep full precision
    return np.exp(-2j * np.pi * (np.outer(k, k) % n) / n)


def _fft_radix2(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    lead = x.shape[:-1]
    y = x[..., _bitrev(n)]
    size = 2
    while size <= n:
        half = size // 2
        y = y.reshape(*lead, n // size, size)
        even = y[..., :half]
        odd = y[..., half:] * _twiddles(size)
        y = np.concatenate((even + odd, even - odd), axis=-1)
        size *= 2
    return y.reshape(*lead, n)


def fft(x) -> np.ndarray:
    """Full complex DFT along the last axis (sign convention ``e^{-j...}``)."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n == 0:
        raise ValueError("fft of an empty sequence")
    if _is_pow2(n):
        return _fft_radix2(x)
    return x @ _dft_matrix(n).T


def ifft(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.complex128)
    return np.conj(fft(np.conj(X))) / X.shape[-1]


def naive_dft(x) -> np.ndarray:
    """Direct double-loop evaluation of the DFT sum; slow, for reference use."""
    x = np.asarray(x, dtype=np.complex128)
    n = len(x)
    out = np.zeros(n, dtype=np.complex128)
    for k in range(n):
        acc = 0j
        for t in range(n):
            acc += x[t] * np.exp(-2j * np.pi * k * t / n)
        out[k] = acc
    return out


def rfft_array(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    return fft(x)[..., : n // 2 + 1]


def _hermitian_full(X: np.ndarray, n: int) -> np.ndarray:
    """Expand one-sided bins to a full conjugate-symmetric spectrum."""
    X = X.copy()
    X[..., 0] = X[..., 0].real
    if n % 2 == 0:
        X[..., n // 2] = X[..., n // 2].real
    tail = np.conj(X[..., 1 : (n + 1) // 2][..., ::-1])
    return np.concatenate((X, tail), axis=-1)


def irfft_array(X, n: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.complex128)
    if X.shape[-1] != n // 2 + 1:
        raise ValueError(f"{X.shape[-1]} one-sided bins do not match n_time={n}")
    return ifft(_hermitian_full(X, n)).real


# ---------------------------------------------------------------------------
# single-series API

@dataclass(frozen=True)
class Spectrum:
    bins: CTensor
    n_time: int

    def __post_init__(self):
        if self.bins.shape[-1] != self.n_time // 2 + 1:
            raise ValueError(
                f"spectrum has {self.bins.shape[-1]} bins, expected "
                f"{self.n_time // 2 + 1} for n_time={self.n_time}"
            )

    def full(self) -> np.ndarray:
        """Two-sided spectrum of length ``n_time``."""
        return _hermitian_full(self.bins.data, self.n_time)

    @property
    def amplitude(self) -> np.ndarray:
        return np.abs(self.bins.data)

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.bins.data)


def dft_forward(x) -> Spectrum:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("dft_forward expects a non-empty 1-D real vector")
    return Spectrum(CTensor(rfft_array(x)), len(x))


def dft_inverse(s: Spectrum) -> np.ndarray:
    return irfft_array(s.bins.data, s.n_time)


def canonical_weights(n: int) -> np.ndarray:
    """Synthesis weights for k = 1..N-1 turning the cosine sum into an exact inverse.

    Bins above N/2 are folded onto their mirror image, so they get weight 0.
    """
    beta = np.zeros(max(n - 1, 0))
    for k in range(1, n):
        if 2 * k < n:
            beta[k - 1] = 2.0 / n
        elif 2 * k == n:
            beta[k - 1] = 1.0 / n
    return beta


def reconstruct_trig(a0, amplitudes, phases, weights, n: int) -> np.ndarray:
    """x[n] = a0 + sum_k beta_k A[k] cos(2 pi k n / N - phi[k]), k = 1..N-1.

    Phases here follow the cosine-minus-phase convention, i.e. the negative of
    ``atan2(b, a)`` for a bin ``a + jb``.
    """
    amplitudes = np.asarray(amplitudes, dtype=np.float64)
    phases = np.asarray(phases, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if not (len(amplitudes) == len(phases) == len(weights) == n - 1):
        raise ValueError(
            f"expected {n - 1} amplitudes/phases/weights, got "
            f"{len(amplitudes)}/{len(phases)}/{len(weights)}"
        )
    t = np.arange(n)
    k = np.arange(1, n)
    arg = 2 * np.pi * np.outer(t, k) / n - phases
    return a0 + np.cos(arg) @ (weights * amplitudes)


def trig_form(s: Spectrum) -> tuple[float, np.ndarray, np.ndarray]:
    """(a0, A[1..N-1], phi[1..N-1]) of a spectrum for :func:`reconstruct_trig`."""
    full = s.full()
    n = s.n_time
    a0 = full[0].real / n
    return a0, np.abs(full[1:]), -np.angle(full[1:])


def euler_parts(x) -> tuple[np.ndarray, np.ndarray]:
    """Cosine and negated-sine correlations for k = 0..N-1."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    arg = 2 * np.pi * (np.outer(np.arange(n), np.arange(n)) % n) / n
    return np.cos(arg) @ x, -(np.sin(arg) @ x)


# ---------------------------------------------------------------------------
# differentiable transforms

def rfft(x: Tensor) -> CTensor:
    """One-sided DFT along the last axis, recorded for backprop."""
    n = x.shape[-1]
    out = CTensor(rfft_array(x.data))

    def backward(g):
        # adjoint: grad_x[t] = Re sum_k g[k] e^{+j 2 pi k t / n}
        pad = np.zeros(g.shape[:-1] + (n,), dtype=np.complex128)
        pad[..., : g.shape[-1]] = np.conj(g)
        return (np.conj(fft(pad)).real,)

    return record(out, (x,), backward)


def irfft(X: CTensor, n: int) -> Tensor:
    """Inverse of :func:`rfft` to length ``n``; imaginary parts of the DC and
    Nyquist bins are ignored, as in any real inverse transform."""
    out = Tensor(irfft_array(X.data, n))
    nb = n // 2 + 1
    c = np.full(nb, 2.0 / n)
    c[0] = 1.0 / n
    if n % 2 == 0:
        c[-1] = 1.0 / n

    def backward(g):
        gx = rfft_array(g) * c
        gx[..., 0] = gx[..., 0].real
        if n % 2 == 0:
            gx[..., -1] = gx[..., -1].real
        return (gx,)

    return record(out, (X,), backward)
