"""Ground-truth plant simulation and experiment execution.

The plant drift is a linear combination of library functions
``Z(x) = col(x, Q(x))`` with ``Q`` drawn from a small catalog of nonlinear
terms, each with an exact analytic Jacobian row.  Experiments integrate the
augmented dynamics (exosystem, plant, internal model) with fixed-step RK4
under piecewise-constant random excitation and record state-derivative
samples by evaluating the vector field exactly at the sample instants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NonFiniteState
from .exo import Exosystem
from .imodel import InternalModel

__all__ = [
    "BasisLibrary",
    "PlantModel",
    "Dataset",
    "eval_Z",
    "eval_Z_jacobian",
    "run_experiment",
    "simulate_closed_loop",
    "augmented_matrices",
    "ClosedLoopField",
]

# Catalog term codes: ("cos", i), ("sin", i), ("prod", i, j), ("square", i),
# ("cube", i); indices are 0-based state coordinates.
_TERM_ARITY = {"cos": 1, "sin": 1, "prod": 2, "square": 1, "cube": 1}


@dataclass(frozen=True)
class BasisLibrary:
    """Function library ``Z(x) = col(x, Q(x))`` over an n-dimensional state."""

    n: int
    terms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(tuple(t) for t in self.terms))
        for t in self.terms:
            if t[0] not in _TERM_ARITY:
                raise ValueError(f"unknown basis term {t[0]!r}")
            idxs = t[1:]
            if len(idxs) != _TERM_ARITY[t[0]]:
                raise ValueError(f"term {t} has wrong arity")
            if any(not (0 <= i < self.n) for i in idxs):
                raise ValueError(f"term {t} indexes outside the state")

    @property
    def q(self) -> int:
        return self.n + len(self.terms)

    @property
    def n_q(self) -> int:
        return len(self.terms)

    def eval_Q(self, x: np.ndarray) -> np.ndarray:
        """Nonlinear rows of Z; ``x`` may be a vector or an (n, B) batch."""
        x = np.asarray(x, dtype=float)
        out = np.empty((len(self.terms),) + x.shape[1:], dtype=float)
        for r, t in enumerate(self.terms):
            kind = t[0]
            if kind == "cos":
                out[r] = np.cos(x[t[1]])
            elif kind == "sin":
                out[r] = np.sin(x[t[1]])
            elif kind == "prod":
                out[r] = x[t[1]] * x[t[2]]
            elif kind == "square":
                out[r] = x[t[1]] ** 2
            else:  # cube
                out[r] = x[t[1]] ** 3
        return out

    def eval_Q_dot(self, x: np.ndarray, dx: np.ndarray) -> np.ndarray:
        """Time derivative of Q along ``dx``; broadcasts over batches like eval_Q."""
        x = np.asarray(x, dtype=float)
        dx = np.asarray(dx, dtype=float)
        out = np.empty((len(self.terms),) + x.shape[1:], dtype=float)
        for r, t in enumerate(self.terms):
            kind = t[0]
            if kind == "cos":
                out[r] = -np.sin(x[t[1]]) * dx[t[1]]
            elif kind == "sin":
                out[r] = np.cos(x[t[1]]) * dx[t[1]]
            elif kind == "prod":
                out[r] = dx[t[1]] * x[t[2]] + x[t[1]] * dx[t[2]]
            elif kind == "square":
                out[r] = 2.0 * x[t[1]] * dx[t[1]]
            else:
                out[r] = 3.0 * x[t[1]] ** 2 * dx[t[1]]
        return out

    def jacobian_Q(self, x: np.ndarray) -> np.ndarray:
        """Analytic Jacobian of Q at a single state, shape (n_q, n)."""
        x = np.asarray(x, dtype=float).ravel()
        J = np.zeros((len(self.terms), self.n))
        for r, t in enumerate(self.terms):
            kind = t[0]
            if kind == "cos":
                J[r, t[1]] = -np.sin(x[t[1]])
            elif kind == "sin":
                J[r, t[1]] = np.cos(x[t[1]])
            elif kind == "prod":
                J[r, t[1]] += x[t[2]]
                J[r, t[2]] += x[t[1]]
            elif kind == "square":
                J[r, t[1]] = 2.0 * x[t[1]]
            else:
                J[r, t[1]] = 3.0 * x[t[1]] ** 2
        return J


def eval_Z(basis: BasisLibrary, x: np.ndarray) -> np.ndarray:
    """Z(x) with the identity coordinates stacked on top of Q(x)."""
    x = np.asarray(x, dtype=float)
    return np.concatenate([x, basis.eval_Q(x)], axis=0)


def eval_Z_jacobian(basis: BasisLibrary, x: np.ndarray) -> np.ndarray:
    """Jacobian of Z at ``x``: identity block over the analytic Q rows."""
    return np.vstack([np.eye(basis.n), basis.jacobian_Q(x)])


@dataclass(frozen=True)
class PlantModel:
    """True plant matrices; hidden from synthesis, used only to simulate."""

    basis: BasisLibrary
    A: np.ndarray
    B: np.ndarray
    P: np.ndarray
    C_e: np.ndarray
    Q_e: np.ndarray

    def __post_init__(self):
        for name in ("A", "B", "P", "C_e", "Q_e"):
            M = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            M.setflags(write=False)
            object.__setattr__(self, name, M)
        n, q = self.basis.n, self.basis.q
        if self.A.shape != (n, q):
            raise DimensionMismatch(f"A must be {n}x{q}, got {self.A.shape}")
        if self.B.shape[0] != n:
            raise DimensionMismatch(f"B must have {n} rows, got {self.B.shape}")
        if self.P.shape[0] != n:
            raise DimensionMismatch(f"P must have {n} rows, got {self.P.shape}")
        if self.C_e.shape[1] != q:
            raise DimensionMismatch(f"C_e must have {q} columns, got {self.C_e.shape}")
        if self.Q_e.shape != (self.C_e.shape[0], self.P.shape[1]):
            raise DimensionMismatch(
                f"Q_e must be {self.C_e.shape[0]}x{self.P.shape[1]}, got {self.Q_e.shape}"
            )

    @property
    def n(self) -> int:
        return self.basis.n

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C_e.shape[0]

    @property
    def n_w(self) -> int:
        return self.P.shape[1]

    def error_output(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        """e = C_e Z(x) + Q_e w; accepts batches in the trailing axis."""
        return self.C_e @ eval_Z(self.basis, x) + self.Q_e @ w


@dataclass
class Dataset:
    """One experiment's samples; ``w`` is ground truth kept out of synthesis."""

    times: np.ndarray
    x: np.ndarray
    u: np.ndarray
    e: np.ndarray
    dx: np.ndarray
    eta: np.ndarray
    w: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.times.size


def augmented_matrices(plant: PlantModel, im: InternalModel, mode: str = "nonlinear"):
    """Ground-truth augmented matrices (Acal, Bcal, Pcal) of the stacked system.

    ``mode="nonlinear"`` expresses the dynamics against ``col(x, eta, Q(x))``;
    ``mode="linear"`` (plants with an empty catalog) against ``col(x, eta)``.
    """
    n, q = plant.n, plant.basis.q
    neta = im.n_eta
    G, Phi = im.G, im.Phi
    if mode == "nonlinear":
        Acal = np.block(
            [
                [plant.A[:, :n], np.zeros((n, neta)), plant.A[:, n:]],
                [G @ plant.C_e[:, :n], Phi, G @ plant.C_e[:, n:]],
            ]
        )
    elif mode == "linear":
        if q != n:
            raise DimensionMismatch("linear mode requires an empty basis catalog")
        Acal = np.block([[plant.A, np.zeros((n, neta))], [G @ plant.C_e, Phi]])
    else:
        raise ValueError(f"unknown mode {mode!r}")
    Bcal = np.vstack([plant.B, np.zeros((neta, plant.m))])
    Pcal = np.vstack([plant.P, G @ plant.Q_e])
    return Acal, Bcal, Pcal


class ClosedLoopField:
    """Right-hand side of the augmented dynamics on z = col(w, x, eta).

    The drift is a constant matrix acting on ``c(z) = col(w, x, eta, Q(x))``,
    so one matrix product per RK4 stage covers exosystem, plant and internal
    model together (plus an input injection while collecting data).  With a
    gain ``K`` folded in, ``u = K Z(x, eta)`` becomes part of the same matrix.
    """

    def __init__(self, plant: PlantModel, exo: Exosystem, im: InternalModel,
                 K: np.ndarray | None = None, mode: str = "nonlinear"):
        n, q, m = plant.n, plant.basis.q, plant.m
        nw, neta = exo.dim, im.n_eta
        if plant.n_w != nw:
            raise DimensionMismatch("plant.P width must match the exosystem dimension")
        if im.p != plant.p:
            raise DimensionMismatch("internal model channel count must match p")
        self.plant, self.exo, self.im, self.mode = plant, exo, im, mode
        self.dim = nw + n + neta
        self.cdim = self.dim + plant.basis.n_q
        self.sl_w = slice(0, nw)
        self.sl_x = slice(nw, nw + n)
        self.sl_eta = slice(nw + n, self.dim)
        F = np.zeros((self.dim, self.cdim))
        F[self.sl_w, self.sl_w] = exo.S
        F[self.sl_x, self.sl_w] = plant.P
        F[self.sl_x, self.sl_x] = plant.A[:, :n]
        F[self.sl_x, self.dim :] = plant.A[:, n:]
        F[self.sl_eta, self.sl_w] = im.G @ plant.Q_e
        F[self.sl_eta, self.sl_x] = im.G @ plant.C_e[:, :n]
        F[self.sl_eta, self.sl_eta] = im.Phi
        F[self.sl_eta, self.dim :] = im.G @ plant.C_e[:, n:]
        Bz = np.zeros((self.dim, m))
        Bz[self.sl_x] = plant.B
        self.Bz = Bz
        self.K = None
        if K is not None:
            K = np.atleast_2d(np.asarray(K, dtype=float))
            kcols = (q + neta) if mode == "nonlinear" else (n + neta)
            if K.shape != (m, kcols):
                raise DimensionMismatch(f"K must be {m}x{kcols}, got {K.shape}")
            # u = K col(x, eta[, Q]); as a row block over c(z)
            Kc = np.zeros((m, self.cdim))
            Kc[:, self.sl_x] = K[:, :n]
            Kc[:, self.sl_eta] = K[:, n : n + neta]
            if mode == "nonlinear":
                Kc[:, self.dim :] = K[:, n + neta :]
            F = F + Bz @ Kc
            self.K = K
            self.Kc = Kc
        self.F = F

    def stack(self, z: np.ndarray) -> np.ndarray:
        """c(z) = col(z, Q(x)); accepts (dim,) vectors or (dim, B) batches."""
        c = np.empty((self.cdim,) + z.shape[1:], dtype=float)
        c[: self.dim] = z
        c[self.dim :] = self.plant.basis.eval_Q(z[self.sl_x])
        return c

    def rhs(self, z: np.ndarray) -> np.ndarray:
        return self.F @ self.stack(z)

    def rhs_forced(self, z: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.F @ self.stack(z) + self.Bz @ u

    def step(self, z: np.ndarray, h: float) -> np.ndarray:
        k1 = self.rhs(z)
        k2 = self.rhs(z + (0.5 * h) * k1)
        k3 = self.rhs(z + (0.5 * h) * k2)
        k4 = self.rhs(z + h * k3)
        return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def step_forced(self, z: np.ndarray, h: float, u: np.ndarray) -> np.ndarray:
        k1 = self.rhs_forced(z, u)
        k2 = self.rhs_forced(z + (0.5 * h) * k1, u)
        k3 = self.rhs_forced(z + (0.5 * h) * k2, u)
        k4 = self.rhs_forced(z + h * k3, u)
        return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def error(self, z: np.ndarray) -> np.ndarray:
        return self.plant.error_output(z[self.sl_x], z[self.sl_w])

    def control(self, z: np.ndarray) -> np.ndarray:
        if self.K is None:
            raise ValueError("field has no gain folded in")
        return self.Kc @ self.stack(z)

    def jacobian_spectral_bound(self, z_samples: np.ndarray) -> float:
        """Largest |eigenvalue| of the closed-loop Jacobian over sample states."""
        worst = 0.0
        for z in np.atleast_2d(z_samples.T):
            x = z[self.sl_x]
            dc = np.vstack([np.eye(self.dim),
                            np.pad(self.plant.basis.jacobian_Q(x),
                                   ((0, 0), (self.sl_x.start, self.dim - self.sl_x.stop)))])
            lam = np.linalg.eigvals(self.F @ dc)
            worst = max(worst, float(np.abs(lam).max()))
        return worst


def run_experiment(
    plant: PlantModel,
    exo: Exosystem,
    im: InternalModel,
    amplitude: float = 0.1,
    hold: float | None = None,
    x0: np.ndarray | None = None,
    eta0: np.ndarray | None = None,
    sample_period: float = 0.05,
    T: int = 40,
    step: float = 1e-3,
    seed: int = 0,
) -> Dataset:
    """Collect ``T`` samples from the excited augmented system.

    The input is piecewise constant, redrawn uniformly from
    ``[-amplitude, amplitude]`` every ``hold`` seconds (defaulting to the
    sampling period), while the exogenous signal acts throughout.  Samples
    are taken at ``t_i = i * sample_period``; state derivatives are exact
    vector-field evaluations, not finite differences.  The returned dataset
    also carries the simulated exosystem samples for test oracles only.

    Raises
    ------
    NonFiniteState
        If the trajectory diverges, which signals excitation or step-size
        misconfiguration.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    if hold is None:
        hold = sample_period
    spp = _steps_per(sample_period, step, "sample_period")
    sph = _steps_per(hold, step, "hold")
    rng = np.random.default_rng(seed)
    if x0 is None:
        x0 = rng.uniform(-amplitude, amplitude, plant.n)
    x0 = np.asarray(x0, dtype=float).ravel()
    eta0 = np.zeros(im.n_eta) if eta0 is None else np.asarray(eta0, dtype=float).ravel()
    fld = ClosedLoopField(plant, exo, im, K=None, mode="nonlinear" if plant.basis.n_q else "linear")
    z = np.concatenate([exo.w0, x0, eta0])
    total_steps = spp * (T - 1)
    u = rng.uniform(-amplitude, amplitude, plant.m)
    times = np.empty(T)
    xs = np.empty((plant.n, T))
    us = np.empty((plant.m, T))
    es = np.empty((plant.p, T))
    dxs = np.empty((plant.n, T))
    etas = np.empty((im.n_eta, T))
    ws = np.empty((exo.dim, T))
    rec = 0
    for k in range(total_steps + 1):
        if k > 0 and k % sph == 0:
            u = rng.uniform(-amplitude, amplitude, plant.m)
        if k % spp == 0:
            t = k * step
            if not np.all(np.isfinite(z)):
                raise NonFiniteState(f"trajectory non-finite at t={t:g}")
            times[rec] = t
            ws[:, rec] = z[fld.sl_w]
            xs[:, rec] = z[fld.sl_x]
            etas[:, rec] = z[fld.sl_eta]
            us[:, rec] = u
            es[:, rec] = fld.error(z)
            dxs[:, rec] = fld.rhs_forced(z, u)[fld.sl_x]
            rec += 1
        if k < total_steps:
            z = fld.step_forced(z, step, u)
    if not np.all(np.isfinite(z)):
        raise NonFiniteState("trajectory non-finite at the experiment end")
    meta = {
        "seed": seed,
        "step": step,
        "sample_period": sample_period,
        "hold": hold,
        "amplitude": amplitude,
        "x0": x0.tolist(),
    }
    return Dataset(times, xs, us, es, dxs, etas, ws, meta)


def simulate_closed_loop(
    plant: PlantModel,
    exo: Exosystem,
    im: InternalModel,
    K: np.ndarray,
    x0: np.ndarray,
    eta0: np.ndarray | None = None,
    w0: np.ndarray | None = None,
    horizon: float = 10.0,
    step: float = 1e-3,
    mode: str = "nonlinear",
    record_every: int = 1,
) -> dict:
    """Integrate the closed loop ``u = K Z(x, eta)`` and record the trajectory.

    Returns a dict with keys ``t, x, eta, e, u, w`` (arrays with time in the
    trailing axis).  ``mode="linear"`` interprets ``K`` against
    ``col(x, eta)`` instead of the full library stack.
    """
    exo_run = exo if w0 is None else Exosystem(exo.S, w0, exo.period, exo.spec)
    fld = ClosedLoopField(plant, exo_run, im, K=K, mode=mode)
    eta0 = np.zeros(im.n_eta) if eta0 is None else np.asarray(eta0, dtype=float).ravel()
    z = np.concatenate([exo_run.w0, np.asarray(x0, dtype=float).ravel(), eta0])
    nsteps = int(round(horizon / step))
    nrec = nsteps // record_every + 1
    traj = np.empty((fld.dim, nrec))
    ts = np.empty(nrec)
    rec = 0
    for k in range(nsteps + 1):
        if k % record_every == 0:
            if not np.all(np.isfinite(z)):
                raise NonFiniteState(f"closed loop non-finite at t={k * step:g}")
            ts[rec] = k * step
            traj[:, rec] = z
            rec += 1
        if k < nsteps:
            z = fld.step(z, step)
    traj = traj[:, :rec]
    ts = ts[:rec]
    return {
        "t": ts,
        "w": traj[fld.sl_w],
        "x": traj[fld.sl_x],
        "eta": traj[fld.sl_eta],
        "e": fld.error(traj),
        "u": fld.control(traj),
    }


def _steps_per(interval: float, step: float, name: str) -> int:
    k = interval / step
    if abs(k - round(k)) > 1e-9 * max(1.0, k):
        raise ValueError(f"{name} must be an integer multiple of the step size")
    return int(round(k))
