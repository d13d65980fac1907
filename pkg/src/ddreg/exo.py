"""Exosystem models and the known signal matrices they generate.

The exogenous generator ``dw/dt = S w`` drives every reference and
disturbance in the problem.  Its solutions are fixed linear combinations of
the elementary signals ``t^j e^{lam t} / j!`` (real eigenvalues) and
``t^j e^{mu t} cos(psi t) / j!``, ``t^j e^{mu t} sin(psi t) / j!``
(complex pairs).  Sampling those signals on the experiment grid yields a
known matrix ``M`` such that the unknown sample matrix ``W0`` factors as
``W0 = T L M`` with ``T`` a real Jordan basis of ``S`` and ``L`` a block
Toeplitz matrix built from the initial condition.  Synthesis only ever uses
the reduced form of ``M`` (one block per distinct eigenvalue); ``T`` and
``L`` exist here for verification.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np
import scipy.linalg as sla

from .errors import SpectralMismatch

__all__ = [
    "RealMode",
    "ComplexMode",
    "SpectralSpec",
    "Exosystem",
    "SignalMatrix",
    "simulate_w",
    "sample_w",
    "build_M",
    "build_L",
    "jordan_factorization",
    "minimal_poly_degree",
    "minimal_poly_coeffs",
]

# Default relative tolerance for all rank / clustering decisions in this module.
RANK_RTOL = 1e-8


@dataclass(frozen=True)
class RealMode:
    """A distinct real eigenvalue with its Jordan block sizes.

    ``blocks`` lists every Jordan block order for this eigenvalue in
    descending order; a plain synthesis-side description that only knows the
    largest block uses a single entry.
    """

    lam: float
    blocks: tuple[int, ...] = (1,)

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(int(k) for k in self.blocks))
        if not self.blocks or any(k < 1 for k in self.blocks):
            raise ValueError("block sizes must be positive integers")
        if list(self.blocks) != sorted(self.blocks, reverse=True):
            raise ValueError("block sizes must be listed in descending order")

    @property
    def max_block(self) -> int:
        return self.blocks[0]


@dataclass(frozen=True)
class ComplexMode:
    """A distinct complex-conjugate pair ``mu +/- i psi`` with ``psi > 0``."""

    mu: float
    psi: float
    blocks: tuple[int, ...] = (1,)

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(int(k) for k in self.blocks))
        if self.psi <= 0:
            raise ValueError("psi must be positive (the conjugate is implicit)")
        if not self.blocks or any(k < 1 for k in self.blocks):
            raise ValueError("block sizes must be positive integers")
        if list(self.blocks) != sorted(self.blocks, reverse=True):
            raise ValueError("block sizes must be listed in descending order")

    @property
    def max_block(self) -> int:
        return self.blocks[0]


@dataclass(frozen=True)
class SpectralSpec:
    """Distinct eigenvalues of the generator and their Jordan block sizes."""

    real_modes: tuple[RealMode, ...] = ()
    complex_modes: tuple[ComplexMode, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "real_modes", tuple(self.real_modes))
        object.__setattr__(self, "complex_modes", tuple(self.complex_modes))
        lams = [m.lam for m in self.real_modes]
        if len(lams) != len(set(lams)):
            raise ValueError("real eigenvalues must be pairwise distinct")
        pairs = [(m.mu, m.psi) for m in self.complex_modes]
        if len(pairs) != len(set(pairs)):
            raise ValueError("complex pairs must be pairwise distinct")
        if not self.real_modes and not self.complex_modes:
            raise ValueError("spectral spec must contain at least one mode")

    @property
    def total_dim(self) -> int:
        """State dimension implied by the full block lists."""
        return sum(sum(m.blocks) for m in self.real_modes) + 2 * sum(
            sum(m.blocks) for m in self.complex_modes
        )

    @staticmethod
    def from_matrix(S: np.ndarray, rtol: float = RANK_RTOL) -> "SpectralSpec":
        """Derive the full spectral structure of ``S`` by eigenvalue clustering.

        Eigenvalues closer than ``rtol * max(1, ||S||)`` are merged; block
        sizes per cluster come from the nullspace staircase of ``S - lam I``.
        """
        S = np.asarray(S, dtype=float)
        n = S.shape[0]
        eigs = np.linalg.eigvals(S)
        tol = rtol * max(1.0, np.linalg.norm(S, 2))
        clusters: list[complex] = []
        for ev in eigs:
            for i, c in enumerate(clusters):
                if abs(ev - c) <= 100 * tol or abs(ev - np.conj(c)) <= 100 * tol:
                    break
            else:
                clusters.append(ev)
        real_modes, complex_modes = [], []
        for c in clusters:
            if abs(c.imag) <= 100 * tol:
                lam = float(c.real)
                blocks = _staircase_blocks(S, lam, rtol)
                real_modes.append(RealMode(lam, tuple(blocks)))
            else:
                mu, psi = float(c.real), float(abs(c.imag))
                blocks = _staircase_blocks(S, mu + 1j * psi, rtol)
                complex_modes.append(ComplexMode(mu, psi, tuple(blocks)))
        spec = SpectralSpec(
            tuple(sorted(real_modes, key=lambda m: m.lam)),
            tuple(sorted(complex_modes, key=lambda m: (m.psi, m.mu))),
        )
        if spec.total_dim != n:
            raise SpectralMismatch(
                f"clustered structure spans dimension {spec.total_dim}, expected {n}"
            )
        return spec


def minimal_poly_degree(spec: SpectralSpec) -> int:
    """Degree of the minimal polynomial: largest block per distinct eigenvalue."""
    return sum(m.max_block for m in spec.real_modes) + 2 * sum(
        m.max_block for m in spec.complex_modes
    )


def minimal_poly_coeffs(spec: SpectralSpec) -> np.ndarray:
    """Monic minimal-polynomial coefficients ``(s_0, ..., s_{d-1})``.

    The polynomial is ``s_0 + s_1 x + ... + s_{d-1} x^{d-1} + x^d``.
    """
    poly = np.array([1.0])
    for m in spec.real_modes:
        for _ in range(m.max_block):
            poly = np.convolve(poly, [1.0, -m.lam])
    for m in spec.complex_modes:
        quad = np.array([1.0, -2.0 * m.mu, m.mu**2 + m.psi**2])
        for _ in range(m.max_block):
            poly = np.convolve(poly, quad)
    return poly[:0:-1].copy()  # ascending order, monic leading 1 dropped


@dataclass(frozen=True)
class Exosystem:
    """The autonomous generator ``dw/dt = S w`` with a fixed initial state.

    ``period`` is optional during data collection but required by the
    closed-loop evaluator; when set, ``expm(S * period)`` must equal the
    identity (all solutions are then periodic with that period).
    """

    S: np.ndarray
    w0: np.ndarray
    period: float | None = None
    spec: SpectralSpec = None  # type: ignore[assignment]

    def __post_init__(self):
        S = np.atleast_2d(np.asarray(self.S, dtype=float))
        w0 = np.asarray(self.w0, dtype=float).ravel()
        if S.shape[0] != S.shape[1]:
            raise ValueError("S must be square")
        if w0.shape[0] != S.shape[0]:
            raise ValueError("w0 length must match S")
        S.setflags(write=False)
        w0.setflags(write=False)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "w0", w0)
        if self.spec is None:
            object.__setattr__(self, "spec", SpectralSpec.from_matrix(S))
        if self.period is not None:
            if self.period <= 0:
                raise ValueError("period must be positive")
            res = np.abs(sla.expm(S * self.period) - np.eye(S.shape[0])).max()
            if res > 1e-6 * max(1.0, np.abs(w0).max()):
                raise ValueError(
                    f"expm(S*period) differs from identity by {res:.2e}; "
                    "solutions are not periodic with the declared period"
                )

    @property
    def dim(self) -> int:
        return self.S.shape[0]


def simulate_w(exo: Exosystem, t: float) -> np.ndarray:
    """Exosystem state at time ``t``, via the matrix exponential."""
    return sla.expm(exo.S * float(t)) @ exo.w0


def sample_w(exo: Exosystem, times: np.ndarray) -> np.ndarray:
    """Stack ``w(t)`` columnwise over ``times`` (the test-side ``W0``)."""
    return np.column_stack([simulate_w(exo, t) for t in np.asarray(times).ravel()])


@dataclass(frozen=True)
class SignalMatrix:
    """Samples of the elementary exosystem signals on a time grid.

    Row ``i`` is one basis signal evaluated at every instant in ``times``;
    ``labels`` records which signal each row holds.
    """

    values: np.ndarray
    times: np.ndarray
    labels: tuple[str, ...]

    @property
    def rows(self) -> int:
        return self.values.shape[0]


def _mode_rows(mode, k: int, ts: np.ndarray):
    """Rows of one k-th order block, top-down factorial weighting."""
    rows, labels = [], []
    for j in range(k - 1, -1, -1):
        w = ts**j / factorial(j)
        if isinstance(mode, RealMode):
            rows.append(w * np.exp(mode.lam * ts))
            labels.append(f"t^{j}exp({mode.lam:g}t)")
        else:
            env = w * np.exp(mode.mu * ts)
            rows.append(env * np.cos(mode.psi * ts))
            labels.append(f"t^{j}exp({mode.mu:g}t)cos({mode.psi:g}t)")
            rows.append(env * np.sin(mode.psi * ts))
            labels.append(f"t^{j}exp({mode.mu:g}t)sin({mode.psi:g}t)")
    return rows, labels


def build_M(spec: SpectralSpec, times, reduced: bool = True) -> SignalMatrix:
    """Signal matrix over ``times``; reduced keeps one block per eigenvalue.

    Parameters
    ----------
    spec : SpectralSpec
        Eigenstructure; the unreduced form uses every listed block.
    times : array_like
        Strictly increasing sample instants.
    reduced : bool
        If True, keep only the largest block per distinct eigenvalue, giving
        ``d`` rows where ``d`` is the minimal polynomial degree.
    """
    ts = np.asarray(times, dtype=float).ravel()
    if ts.size < 1:
        raise ValueError("at least one sample instant required")
    if ts.size > 1 and not np.all(np.diff(ts) > 0):
        raise ValueError("times must be strictly increasing")
    rows, labels = [], []
    for mode in list(spec.real_modes) + list(spec.complex_modes):
        blocks = (mode.max_block,) if reduced else mode.blocks
        for k in blocks:
            r, l = _mode_rows(mode, k, ts)
            rows.extend(r)
            labels.extend(l)
    return SignalMatrix(np.vstack(rows), ts, tuple(labels))


# ---------------------------------------------------------------------------
# Real Jordan machinery (verification side only; synthesis never needs T)
# ---------------------------------------------------------------------------


def _nullspace(A: np.ndarray, atol: float) -> np.ndarray:
    """Orthonormal nullspace basis with an absolute singular-value cutoff."""
    _, s, Vt = np.linalg.svd(A)
    r = int(np.sum(s > atol))
    return Vt[r:].conj().T


def _orth(A: np.ndarray, rtol: float) -> np.ndarray:
    if A.size == 0:
        return np.zeros((A.shape[0], 0), dtype=A.dtype)
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    r = int(np.sum(s > rtol * (s[0] if s.size else 1.0)))
    return U[:, :r]


def _generalized_nullspaces(A: np.ndarray, rtol: float) -> list[np.ndarray]:
    """Staircase N_1 = null(A), N_{j+1} = preimage of span(N_j) under A.

    ``A`` must be normalized to unit 2-norm so that ``rtol`` acts as an
    absolute cutoff; thresholding relative to ``P @ A`` itself fails at the
    final level where that product is numerically zero.
    """
    nw = A.shape[0]
    spaces: list[np.ndarray] = []
    prev_dim = 0
    Nprev = np.zeros((nw, 0), dtype=complex)
    for _ in range(nw):
        P = np.eye(nw) - Nprev @ Nprev.conj().T
        Nj = _nullspace(P @ A, rtol)
        if Nj.shape[1] <= prev_dim:
            break
        spaces.append(Nj)
        prev_dim = Nj.shape[1]
        Nprev = _orth(Nj, rtol)
        if prev_dim >= nw:
            break
    return spaces


def _staircase_blocks(S: np.ndarray, lam: complex, rtol: float) -> list[int]:
    """All Jordan block sizes of ``S`` at ``lam``, descending."""
    nw = S.shape[0]
    A = (S - lam * np.eye(nw)).astype(complex)
    nrm = np.linalg.norm(A, 2)
    # S == lam I up to rounding: normalizing by the vanishing norm would
    # destroy the nullspace, so short-circuit the fully diagonal case
    if nrm <= rtol * max(1.0, abs(lam), np.linalg.norm(S, 2)):
        return [1] * nw
    spaces = _generalized_nullspaces(A / nrm, rtol)
    dims = [0] + [N.shape[1] for N in spaces]
    nge = [dims[j] - dims[j - 1] for j in range(1, len(dims))] + [0]
    blocks = []
    for j in range(len(spaces), 0, -1):
        blocks.extend([j] * (nge[j - 1] - nge[j]))
    return blocks


def _fix_sign(v: np.ndarray) -> np.ndarray:
    """Deterministic sign: largest-magnitude entry made positive-real."""
    i = int(np.argmax(np.abs(v)))
    piv = v[i]
    if piv == 0:
        return v
    return v * (np.conj(piv) / abs(piv))


def _jordan_chains(S: np.ndarray, lam: complex, rtol: float) -> list[list[np.ndarray]]:
    """Jordan chains of ``S`` at ``lam``, eigenvector first, lengths descending."""
    nw = S.shape[0]
    A = (S - lam * np.eye(nw)).astype(complex)
    nrm = np.linalg.norm(A, 2)
    if nrm <= rtol * max(1.0, abs(lam), np.linalg.norm(S, 2)):
        return [[e] for e in np.eye(nw, dtype=complex).T]
    A = A / nrm
    spaces = _generalized_nullspaces(A, rtol)
    if not spaces:
        return []
    dims = [0] + [N.shape[1] for N in spaces]
    kmax = len(spaces)
    nge = [dims[j] - dims[j - 1] for j in range(1, kmax + 1)] + [0]
    tops: list[tuple[int, np.ndarray]] = []
    for j in range(kmax, 0, -1):
        s_j = nge[j - 1] - nge[j]
        if s_j <= 0:
            continue
        carried = []
        for h, v in tops:
            if h > j:
                u = v
                for _ in range(h - j):
                    u = A @ u
                carried.append(u)
        parts = [spaces[j - 2]] if j >= 2 else []
        parts += [u[:, None] for u in carried]
        B = np.hstack(parts) if parts else np.zeros((nw, 0), dtype=complex)
        Q = _orth(B, rtol)
        W = spaces[j - 1]
        resid = W - Q @ (Q.conj().T @ W)
        _, s2, V2t = np.linalg.svd(resid, full_matrices=False)
        if s_j > int(np.sum(s2 > rtol)):
            raise SpectralMismatch(f"Jordan chain extraction failed at eigenvalue {lam}")
        for i in range(s_j):
            tops.append((j, _fix_sign(W @ V2t.conj().T[:, i])))
    chains = []
    for h, v in sorted(tops, key=lambda t: -t[0]):
        stack = [v]
        for _ in range(h - 1):
            stack.append(A @ stack[-1])
        # undo the 1/nrm scaling so (S - lam I) v_i = v_{i-1} holds exactly
        chains.append([stack[::-1][i] * nrm ** (-i) for i in range(h)])
    return chains


def _toeplitz_block_real(zeta: np.ndarray) -> np.ndarray:
    """Upper-triangular Toeplitz block: row a holds zeta_k, ..., zeta_1 shifted."""
    k = len(zeta)
    L = np.zeros((k, k))
    for a in range(k):
        for b in range(a, k):
            L[a, b] = zeta[k - 1 - (b - a)]
    return L


def _toeplitz_block_complex(zeta: np.ndarray) -> np.ndarray:
    """Block Toeplitz of 2x2 cells [[z1, z2], [z2, -z1]] from the pair states."""
    k = len(zeta) // 2
    L = np.zeros((2 * k, 2 * k))
    for a in range(k):
        for b in range(a, k):
            j = k - (b - a)
            z1, z2 = zeta[2 * j - 2], zeta[2 * j - 1]
            L[2 * a : 2 * a + 2, 2 * b : 2 * b + 2] = [[z1, z2], [z2, -z1]]
    return L


def jordan_factorization(exo: Exosystem, rtol: float = RANK_RTOL):
    """Real Jordan basis ``T`` and Toeplitz factor ``L`` with ``w(t) = T L M(t)``.

    Returns ``(T, L, full_spec)`` where ``full_spec`` carries the complete
    per-eigenvalue block lists discovered from ``S`` (the supplied spec may
    only know the largest blocks).  Raises :class:`SpectralMismatch` when the
    declared eigenstructure is inconsistent with ``S``.
    """
    S, w0, spec = exo.S, exo.w0, exo.spec
    nw = S.shape[0]
    cols: list[np.ndarray] = []
    jblocks: list[np.ndarray] = []
    real_full, complex_full = [], []
    for mode in spec.real_modes:
        chains = _jordan_chains(S, mode.lam, rtol)
        blocks = tuple(len(c) for c in chains)
        if not blocks or blocks[0] != mode.max_block:
            raise SpectralMismatch(
                f"eigenvalue {mode.lam:g}: declared largest block {mode.max_block}, "
                f"found {blocks[0] if blocks else 0}"
            )
        real_full.append(RealMode(mode.lam, blocks))
        for c in chains:
            cols.extend(np.real(v) for v in c)
            k = len(c)
            jblocks.append(mode.lam * np.eye(k) + np.diag(np.ones(k - 1), 1))
    for mode in spec.complex_modes:
        chains = _jordan_chains(S, mode.mu + 1j * mode.psi, rtol)
        blocks = tuple(len(c) for c in chains)
        if not blocks or blocks[0] != mode.max_block:
            raise SpectralMismatch(
                f"pair {mode.mu:g}+/-{mode.psi:g}i: declared largest block "
                f"{mode.max_block}, found {blocks[0] if blocks else 0}"
            )
        complex_full.append(ComplexMode(mode.mu, mode.psi, blocks))
        C = np.array([[mode.mu, mode.psi], [-mode.psi, mode.mu]])
        for c in chains:
            for v in c:
                cols.append(np.real(v))
                cols.append(np.imag(v))
            k = len(c)
            jblocks.append(
                np.kron(np.eye(k), C) + np.kron(np.diag(np.ones(k - 1), 1), np.eye(2))
            )
    if len(cols) != nw:
        raise SpectralMismatch(
            f"declared modes span dimension {len(cols)}, generator has {nw}"
        )
    T = np.array(cols).T
    J = sla.block_diag(*jblocks)
    res = np.abs(S @ T - T @ J).max()
    if res > 1e3 * rtol * max(1.0, np.abs(S).max()) * max(1.0, np.abs(T).max()):
        raise SpectralMismatch(f"Jordan residual {res:.2e} exceeds tolerance")
    zeta = np.linalg.solve(T, w0)
    Lb: list[np.ndarray] = []
    i = 0
    full_spec = SpectralSpec(tuple(real_full), tuple(complex_full))
    for mode in full_spec.real_modes:
        for k in mode.blocks:
            Lb.append(_toeplitz_block_real(zeta[i : i + k]))
            i += k
    for mode in full_spec.complex_modes:
        for k in mode.blocks:
            Lb.append(_toeplitz_block_complex(zeta[i : i + 2 * k]))
            i += 2 * k
    return T, sla.block_diag(*Lb), full_spec


def build_L(exo: Exosystem, rtol: float = RANK_RTOL) -> np.ndarray:
    """Block-diagonal Toeplitz factor ``L`` of the solution factorization."""
    _, L, _ = jordan_factorization(exo, rtol)
    return L
