"""Shared test fixtures: benchmark systems and randomized exosystem factory."""

import numpy as np
import scipy.linalg as sla

from ddreg.exo import ComplexMode, Exosystem, RealMode, SpectralSpec
from ddreg.plant import BasisLibrary, PlantModel

TWO_PI = 2.0 * np.pi


def series_expm(M, t=1.0):
    """Matrix exponential by scaled Taylor series; independent oracle."""
    A = np.asarray(M, dtype=float) * t
    s = max(0, int(np.ceil(np.log2(max(np.linalg.norm(A, np.inf), 1e-30)))) + 1)
    A = A / 2**s
    E = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, 40):
        term = term @ A / k
        E = E + term
        if np.abs(term).max() < 1e-20:
            break
    for _ in range(s):
        E = E @ E
    return E


def robot_arm_plant():
    """One-link robot arm: Z(x) = [x; cos x1], parameters from the benchmark."""
    Kc, F2, J2, Nc, F1, J1, mass, g, d = 0.4, 0.15, 0.2, 2.0, 0.1, 0.15, 0.4, 9.8, 0.1
    basis = BasisLibrary(4, [("cos", 0)])
    A = np.array([
        [0.0, 1.0, 0.0, 0.0, 0.0],
        [-Kc / J2, -F2 / J2, Kc / (J2 * Nc), 0.0, -mass * g * d / J2],
        [0.0, 0.0, 0.0, 1.0, 0.0],
        [-Kc / (J1 * Nc), 0.0, Kc / (J1 * Nc**2), -F1 / J1, 0.0],
    ])
    B = np.array([[0.0], [0.0], [0.0], [1.0 / J1]])
    P = np.array([
        [0.2, 0.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 1.0],
        [0.5, 1.5, 3.0 * np.sqrt(3.0) / 2.0, 0.0, 0.0],
    ])
    C_e = np.array([[1.0, 0.0, 0.0, 0.0, 0.0]])
    Q_e = np.array([[0.0, 0.0, -1.0, 0.0, 0.0]])
    return PlantModel(basis, A, B, P, C_e, Q_e)


def robot_arm_exo():
    S = np.zeros((5, 5))
    S[1, 2], S[2, 1] = 1.0, -1.0
    S[3, 4], S[4, 3] = 2.0, -2.0
    spec = SpectralSpec(
        (RealMode(0.0, (1,)),),
        (ComplexMode(0.0, 1.0, (1,)), ComplexMode(0.0, 2.0, (1,))),
    )
    return Exosystem(S, np.array([1.0, 0.0, 1.0, 0.0, 1.0]), TWO_PI, spec)


def rolling_mill_plant(E=1.0, F=2.0, b=3.0):
    basis = BasisLibrary(2, [])
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0], [b]])
    P = np.zeros((2, 4))
    C_e = np.array([[E / (E + F), 0.0]])
    Q_e = np.array([[-1.0, 1.0 / (E + F), E / (E + F), 0.0]])
    return PlantModel(basis, A, B, P, C_e, Q_e)


def rolling_mill_exo(sigma=1.0, h_r=0.5, FH=2.0):
    S = np.zeros((4, 4))
    S[2, 3], S[3, 2] = sigma, -sigma
    spec = SpectralSpec((RealMode(0.0, (1, 1)),), (ComplexMode(0.0, sigma, (1,)),))
    return Exosystem(S, np.array([h_r, FH, 0.0, 1.0]), TWO_PI / sigma, spec)


def random_exosystem(rng, max_block=3, max_degree=None):
    """Random generator with known Jordan structure and tame conditioning.

    Returns (Exosystem, full SpectralSpec).  Eigenvalues are well separated
    and the similarity is an orthogonal matrix with mild diagonal scaling,
    so rank decisions in the factorization stay reliable.  ``max_degree``
    caps the minimal-polynomial degree by redrawing; crowding a dozen
    near-damped envelopes onto one window makes the signal matrix
    numerically rank-deficient no matter how exact the construction.
    """
    if max_degree is not None:
        from ddreg.exo import minimal_poly_degree

        while True:
            exo, spec = random_exosystem(rng, max_block=max_block)
            if minimal_poly_degree(spec) <= max_degree:
                return exo, spec
    real_modes, complex_modes, jblocks = [], [], []
    lams = []
    n_real = int(rng.integers(0, 3))
    for _ in range(n_real):
        while True:
            lam = float(rng.uniform(-0.5, 0.5))
            if all(abs(lam - v) > 0.3 for v in lams):
                break
        lams.append(lam)
        sizes = tuple(sorted(rng.integers(1, max_block + 1, int(rng.integers(1, 3))).tolist(),
                             reverse=True))
        real_modes.append(RealMode(lam, sizes))
        for k in sizes:
            jblocks.append(lam * np.eye(k) + np.diag(np.ones(k - 1), 1))
    psis = []
    for _ in range(int(rng.integers(0 if n_real else 1, 3))):
        while True:
            mu = float(rng.uniform(-0.3, 0.3))
            psi = float(rng.uniform(0.5, 3.0))
            if all(abs(psi - v) > 0.3 for v in psis):
                break
        psis.append(psi)
        sizes = tuple(sorted(rng.integers(1, max_block + 1, int(rng.integers(1, 3))).tolist(),
                             reverse=True))
        complex_modes.append(ComplexMode(mu, psi, sizes))
        C = np.array([[mu, psi], [-psi, mu]])
        for k in sizes:
            jblocks.append(np.kron(np.eye(k), C) + np.kron(np.diag(np.ones(k - 1), 1), np.eye(2)))
    J = sla.block_diag(*jblocks)
    nw = J.shape[0]
    Q, _ = np.linalg.qr(rng.standard_normal((nw, nw)))
    T = Q * np.exp(rng.uniform(-0.5, 0.5, nw))
    S = T @ J @ np.linalg.inv(T)
    spec = SpectralSpec(tuple(real_modes), tuple(complex_modes))
    w0 = rng.standard_normal(nw)
    return Exosystem(S, w0, None, spec), spec
