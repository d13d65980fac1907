"""Internal models embedded in the regulator.

Two constructions cover the two problem classes: a bank of an integrator
plus ``ell`` harmonic oscillators at multiples of the fundamental frequency
(approximate regulation of nonlinear plants), and the companion form of the
generator's minimal polynomial (exact regulation of linear plants).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import InvalidParams

__all__ = ["InternalModel", "build_harmonic", "build_companion"]


@dataclass(frozen=True)
class InternalModel:
    """Error-driven subsystem ``deta/dt = Phi eta + G e``."""

    Phi: np.ndarray
    G: np.ndarray
    kind: str  # "harmonic" or "companion"
    p: int
    params: dict

    def __post_init__(self):
        Phi = np.asarray(self.Phi, dtype=float)
        G = np.asarray(self.G, dtype=float)
        Phi.setflags(write=False)
        G.setflags(write=False)
        object.__setattr__(self, "Phi", Phi)
        object.__setattr__(self, "G", G)

    @property
    def n_eta(self) -> int:
        return self.Phi.shape[0]


def build_harmonic(
    p: int,
    ell: int,
    period: float,
    gamma: float = 1.0,
    N=(0.0, 1.0),
) -> InternalModel:
    """Integrator plus ``ell`` oscillators per error channel.

    Each of the ``p`` channels gets the block ``blockdiag(0, phi_1, ...,
    phi_ell)`` with ``phi_k = [[0, w_k], [-w_k, 0]]``, ``w_k = k 2 pi /
    period``, and the input column ``col(gamma, N, ..., N)``.  The state
    dimension is ``p (2 ell + 1)``.

    Parameters
    ----------
    p : int
        Number of error channels.
    ell : int
        Number of harmonics; ``ell = 0`` leaves pure integrators.
    period : float
        Fundamental period of the exogenous signals.
    gamma : float
        Integrator input weight, nonzero.
    N : array_like
        Oscillator input vector in R^2, nonzero.
    """
    N = np.asarray(N, dtype=float).ravel()
    if period <= 0:
        raise InvalidParams("period must be positive")
    if ell < 0:
        raise InvalidParams("ell must be nonnegative")
    if gamma == 0.0:
        raise InvalidParams("gamma must be nonzero")
    if N.shape != (2,) or not np.any(N):
        raise InvalidParams("N must be a nonzero 2-vector")
    if p < 1:
        raise InvalidParams("p must be a positive integer")
    nb = 2 * ell + 1
    phi = np.zeros((nb, nb))
    Gamma = np.zeros((nb, 1))
    Gamma[0, 0] = gamma
    for k in range(1, ell + 1):
        w = k * 2.0 * np.pi / period
        i = 2 * k - 1
        phi[i, i + 1] = w
        phi[i + 1, i] = -w
        Gamma[i : i + 2, 0] = N
    Phi = sla.block_diag(*([phi] * p))
    G = sla.block_diag(*([Gamma] * p))
    return InternalModel(
        Phi, G, "harmonic", p,
        {"ell": ell, "period": period, "gamma": gamma, "N": tuple(N)},
    )


def build_companion(p: int, coeffs) -> InternalModel:
    """Companion form of the monic polynomial ``s_0 + s_1 x + ... + x^d``.

    ``coeffs`` holds ``(s_0, ..., s_{d-1})``.  The block structure repeats
    each scalar coefficient as a ``p x p`` multiple of the identity, giving a
    ``p d`` dimensional model driven through its last block row.
    """
    s = np.asarray(coeffs, dtype=float).ravel()
    if s.size < 1:
        raise InvalidParams("minimal polynomial must have degree at least 1")
    if p < 1:
        raise InvalidParams("p must be a positive integer")
    d = s.size
    Phi = np.zeros((p * d, p * d))
    for i in range(d - 1):
        Phi[i * p : (i + 1) * p, (i + 1) * p : (i + 2) * p] = np.eye(p)
    for j in range(d):
        Phi[(d - 1) * p : d * p, j * p : (j + 1) * p] = -s[j] * np.eye(p)
    G = np.zeros((p * d, p))
    G[(d - 1) * p :, :] = np.eye(p)
    return InternalModel(Phi, G, "companion", p, {"coeffs": tuple(s)})
