"""Fourier analysis of periodic steady-state signals.

Coefficients follow the real convention ``a_k = (2/D) int_0^D v cos(k w t)``,
``b_k = (2/D) int_0^D v sin(k w t)`` with ``w = 2 pi / D``, evaluated by the
trapezoidal rule on a uniform grid with the endpoint identified with the
start (spectrally accurate for smooth periodic signals).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientSamples

__all__ = [
    "FourierSpectrum",
    "coefficients",
    "parseval_residual",
    "nulling_check",
    "l2_bound",
]


@dataclass(frozen=True)
class FourierSpectrum:
    """Truncated real Fourier coefficients of a D-periodic signal.

    ``a`` holds ``a_0 .. a_kmax``; ``b`` is aligned the same way with the
    unused ``b_0`` pinned to zero.
    """

    period: float
    a: np.ndarray
    b: np.ndarray

    @property
    def k_max(self) -> int:
        return self.a.size - 1

    def pair_magnitude(self, k: int) -> float:
        """|a_k| for k = 0, else max(|a_k|, |b_k|)."""
        if k == 0:
            return float(abs(self.a[0]))
        return float(max(abs(self.a[k]), abs(self.b[k])))


def coefficients(samples, period: float, k_max: int) -> FourierSpectrum:
    """Fourier coefficients from one period of uniform samples.

    Parameters
    ----------
    samples : array_like
        Values ``v(t_j)`` at ``t_j = j * period / N`` for ``j = 0..N-1``;
        the sample at ``t = period`` is excluded (it duplicates ``t = 0``).
    period : float
        Signal period D.
    k_max : int
        Highest harmonic index to compute; requires ``N >= 4 k_max + 4``.
    """
    v = np.asarray(samples, dtype=float).ravel()
    N = v.size
    if N < 4 * k_max + 4:
        raise InsufficientSamples(
            f"{N} samples cannot resolve k_max={k_max}; need at least {4 * k_max + 4}"
        )
    # trapezoid over [0, D] with v(D) := v(0) collapses to the plain mean
    j = np.arange(N)
    a = np.empty(k_max + 1)
    b = np.zeros(k_max + 1)
    a[0] = 2.0 * v.mean()
    for k in range(1, k_max + 1):
        phase = 2.0 * np.pi * k * j / N
        a[k] = 2.0 * np.mean(v * np.cos(phase))
        b[k] = 2.0 * np.mean(v * np.sin(phase))
    return FourierSpectrum(float(period), a, b)


def parseval_residual(samples, spectrum: FourierSpectrum) -> float:
    """|int v^2 - (D/2)(a_0^2/2 + sum a_k^2 + b_k^2)| on the sample grid."""
    v = np.asarray(samples, dtype=float).ravel()
    D = spectrum.period
    lhs = D * float(np.mean(v**2))
    rhs = 0.5 * D * (0.5 * spectrum.a[0] ** 2 + float(np.sum(spectrum.a[1:] ** 2 + spectrum.b[1:] ** 2)))
    return abs(lhs - rhs)


def nulling_check(spectrum: FourierSpectrum, ell: int, tol: float):
    """Whether the first ``ell + 1`` coefficient pairs vanish within ``tol``.

    Returns ``(ok, worst)`` with ``worst`` the largest offending magnitude
    among ``a_0`` and ``a_k, b_k`` for ``k = 1..ell``.
    """
    if spectrum.k_max < ell:
        raise InsufficientSamples(
            f"spectrum resolves k_max={spectrum.k_max}, nulling check needs {ell}"
        )
    worst = max(spectrum.pair_magnitude(k) for k in range(ell + 1))
    return worst <= tol, worst


def l2_bound(v_dot_max: float, period: float, ell: int) -> float:
    """Mean-square bound for a signal with vanishing first ``ell+1`` harmonics.

    If ``|dv/dt| <= v_dot_max`` and ``a_0 = a_k = b_k = 0`` for ``k <= ell``,
    then ``(1/D) int_0^D v^2 <= v_dot_max^2 / ((2 pi / D)^2 (ell + 1)^2)``.
    """
    if v_dot_max < 0:
        raise ValueError("v_dot_max must be nonnegative")
    w1 = 2.0 * np.pi / period
    return float(v_dot_max**2 / (w1**2 * (ell + 1) ** 2))
