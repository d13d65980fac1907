"""Gain synthesis via semidefinite programming, plus certificate validation.

Two programs are formulated over the data matrices.  The nonlinear one
searches for a contraction certificate ``(P1, Y1, G2, alpha)`` subject to
state-lifting equalities, a three-block LMI that absorbs the library
nonlinearity through a supplied bound ``R_Q``, and the annihilation
constraint ``Mred [Y1 G2] = 0``; the gain is ``K = U0 [Y1 P1^{-1}, G2]``.
The linear one searches for ``(X, Y)`` with ``[X; 0] = [Z0; Mred] Y`` and a
Lyapunov LMI, giving ``K = U0 Y X^{-1}``.

Strict inequalities are implemented with explicit slacks since conic
backends handle closed cones only.  After a solve, the equality constraints
are re-projected exactly (least squares) and every residual is recomputed at
the returned point; a result is only reported feasible when those residuals
pass their thresholds, independent of the solver's own exit status.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np
import scipy.linalg as sla

from .datamat import DataMatrices
from .errors import DimensionMismatch, Infeasible, NumericalFailure, SingularSylvester
from .plant import BasisLibrary

__all__ = [
    "NonlinearSdpProblem",
    "LinearSdpProblem",
    "SynthesisResult",
    "SylvesterReport",
    "solve_nonlinear",
    "solve_linear",
    "contractivity_margin",
    "sylvester_verify",
    "audit_rq",
    "gain_operator",
]

EQ_RESIDUAL_TOL = 1e-6
LMI_EIG_TOL = 1e-7
_FALLBACK_SOLVERS = ("CLARABEL", "SCS")


@dataclass(frozen=True)
class NonlinearSdpProblem:
    """Inputs of the contraction-certificate program.

    ``R_Q`` must dominate the library Jacobian, ``(dQ/dx)^T (dQ/dx) <=
    R_Q R_Q^T`` for every state of interest (see :func:`audit_rq`).
    ``eps_pd`` is the positive-definiteness slack on ``P1``; ``alpha_min``
    the least accepted contraction slack.  ``objective`` is ``"feasibility"``
    or ``"max_alpha"``; the latter adds the bound ``P1 <= kappa I`` to keep
    the program bounded.
    """

    dm: DataMatrices
    R_Q: np.ndarray
    eps_pd: float = 1e-6
    alpha_min: float = 1e-4
    objective: str = "feasibility"
    kappa: float = 1e4
    solver: str = "CLARABEL"
    polish: bool = True

    def __post_init__(self):
        if self.dm.mode != "nonlinear":
            raise DimensionMismatch("nonlinear synthesis needs nonlinear-mode data matrices")
        R = np.asarray(self.R_Q, dtype=float)
        R = R.reshape(self.dm.n, -1)
        object.__setattr__(self, "R_Q", R)
        if self.objective not in ("feasibility", "max_alpha"):
            raise ValueError(f"unknown objective {self.objective!r}")


@dataclass(frozen=True)
class LinearSdpProblem:
    """Inputs of the exact-regulation program; ``eps`` defaults to 1e-6 ||Z1||."""

    dm: DataMatrices
    eps: float | None = None
    solver: str = "CLARABEL"
    polish: bool = True

    def __post_init__(self):
        if self.dm.mode != "linear":
            raise DimensionMismatch("linear synthesis needs linear-mode data matrices")
        if self.eps is None:
            object.__setattr__(self, "eps", 1e-6 * float(np.linalg.norm(self.dm.Z1, 2)))


@dataclass
class SynthesisResult:
    """Solver outcome: the gain, its certificate, and recomputed residuals."""

    status: str
    mode: str
    K: np.ndarray | None
    certificate: dict
    residuals: dict
    solver_status: str
    solver_name: str
    solve_time: float
    alpha: float | None = None

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


def _run_solver(prob: cp.Problem, preferred: str):
    """Solve with the preferred backend, falling back on hard solver errors."""
    order = [preferred] + [s for s in _FALLBACK_SOLVERS if s != preferred]
    last = None
    for name in order:
        if name not in cp.installed_solvers():
            continue
        try:
            prob.solve(solver=name)
            return name
        except cp.error.SolverError as ex:  # numerical breakdown; try the next one
            last = ex
    raise NumericalFailure(f"all conic backends failed: {last}")


def _project_columns(C: np.ndarray, V: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Least-squares correction of V so that C @ V = rhs exactly."""
    return V + np.linalg.pinv(C) @ (rhs - C @ V)


def solve_nonlinear(problem: NonlinearSdpProblem) -> SynthesisResult:
    """Solve the contraction-certificate program and extract the gain.

    Raises
    ------
    Infeasible
        When the backend certifies primal infeasibility.
    NumericalFailure
        When every backend breaks down, or the returned point fails the
        post-extraction residual checks.
    """
    dm = problem.dm
    T, nn = dm.T, dm.n + dm.n_eta
    qn = dm.q - dm.n
    r = problem.R_Q.shape[1]
    d = dm.d
    if T < dm.m + dm.Z0.shape[0] + d:
        warnings.warn(
            f"T={T} is below m + rows(Z0) + d = {dm.m + dm.Z0.shape[0] + d}; "
            "the program is likely infeasible",
            stacklevel=2,
        )
    RQcal = np.vstack([problem.R_Q, np.zeros((dm.n_eta, r))])

    P1 = cp.Variable((nn, nn), symmetric=True)
    Y1 = cp.Variable((T, nn))
    G2 = cp.Variable((T, qn)) if qn else None
    alpha = cp.Variable()
    cons = [P1 >> problem.eps_pd * np.eye(nn), alpha >= problem.alpha_min]
    if qn:
        cons.append(dm.Z0 @ Y1 == cp.vstack([P1, np.zeros((qn, nn))]))
        cons.append(dm.Z0 @ G2 == np.vstack([np.zeros((nn, qn)), np.eye(qn)]))
        cons.append(dm.Mred @ cp.hstack([Y1, G2]) == 0)
    else:
        cons.append(dm.Z0 @ Y1 == P1)
        cons.append(dm.Mred @ Y1 == 0)
    gram = dm.Z1 @ Y1 + (dm.Z1 @ Y1).T + alpha * np.eye(nn)
    blocks = [[gram]]
    if qn:
        blocks[0].append(dm.Z1 @ G2)
    if r:
        blocks[0].append(P1 @ RQcal)
    if qn:
        row = [(dm.Z1 @ G2).T, -np.eye(qn)]
        if r:
            row.append(np.zeros((qn, r)))
        blocks.append(row)
    if r:
        row = [(P1 @ RQcal).T]
        if qn:
            row.append(np.zeros((r, qn)))
        row.append(-np.eye(r))
        blocks.append(row)
    lmi = cp.bmat(blocks) if len(blocks) > 1 else gram
    cons.append(lmi << 0)
    if problem.objective == "max_alpha":
        cons.append(P1 << problem.kappa * np.eye(nn))
        objective = cp.Maximize(alpha)
    else:
        objective = cp.Minimize(0)
    prob = cp.Problem(objective, cons)
    t0 = time.perf_counter()
    solver_name = _run_solver(prob, problem.solver)
    elapsed = time.perf_counter() - t0
    status = prob.status
    if status in ("infeasible", "infeasible_inaccurate"):
        raise Infeasible(f"nonlinear program certified infeasible ({status})")
    if status not in ("optimal", "optimal_inaccurate"):
        raise NumericalFailure(f"solver returned status {status!r}")

    P1v = np.asarray(P1.value)
    P1v = 0.5 * (P1v + P1v.T)
    Y1v = np.asarray(Y1.value)
    G2v = np.asarray(G2.value) if qn else np.zeros((T, 0))
    if problem.polish:
        C = np.vstack([dm.Z0, dm.Mred])
        Y1v = _project_columns(C, Y1v, np.vstack([P1v, np.zeros((qn + d, nn))]))
        if qn:
            rhs = np.vstack([np.zeros((nn, qn)), np.eye(qn), np.zeros((d, qn))])
            G2v = _project_columns(C, G2v, rhs)
    Gop = np.hstack([Y1v @ np.linalg.inv(P1v), G2v])
    K = dm.U0 @ Gop

    lmi_val = _nonlinear_lmi_value(dm, P1v, Y1v, G2v, float(alpha.value), RQcal)
    residuals = {
        "eq_state_lift": float(
            np.abs(dm.Z0 @ Y1v - np.vstack([P1v, np.zeros((qn, nn))])).max()
        ),
        "eq_library_lift": float(
            np.abs(dm.Z0 @ G2v - np.vstack([np.zeros((nn, qn)), np.eye(qn)])).max()
        ) if qn else 0.0,
        "annihilation": float(np.abs(dm.Mred @ np.hstack([Y1v, G2v])).max()),
        "lmi_max_eig": float(np.linalg.eigvalsh(lmi_val).max()),
        "p1_min_eig": float(np.linalg.eigvalsh(P1v).min()),
        "gain_consistency": float(np.abs(dm.U0 @ Gop - K).max()),
    }
    result = SynthesisResult(
        status="feasible",
        mode="nonlinear",
        K=K,
        certificate={"P1": P1v, "Y1": Y1v, "G2": G2v, "alpha": float(alpha.value)},
        residuals=residuals,
        solver_status=status,
        solver_name=solver_name,
        solve_time=elapsed,
        alpha=float(alpha.value),
    )
    _validate(result)
    return result


def _nonlinear_lmi_value(dm, P1, Y1, G2, alpha, RQcal):
    nn = P1.shape[0]
    qn = G2.shape[1]
    r = RQcal.shape[1]
    gram = dm.Z1 @ Y1
    gram = gram + gram.T + alpha * np.eye(nn)
    top = [gram]
    if qn:
        top.append(dm.Z1 @ G2)
    if r:
        top.append(P1 @ RQcal)
    rows = [np.hstack(top)]
    if qn:
        row = [(dm.Z1 @ G2).T, -np.eye(qn)]
        if r:
            row.append(np.zeros((qn, r)))
        rows.append(np.hstack(row))
    if r:
        row = [(P1 @ RQcal).T]
        if qn:
            row.append(np.zeros((r, qn)))
        row.append(-np.eye(r))
        rows.append(np.hstack(row))
    return np.vstack(rows)


def solve_linear(problem: LinearSdpProblem) -> SynthesisResult:
    """Solve the exact-regulation program ``(X, Y)`` and extract the gain."""
    dm = problem.dm
    T, nn, d = dm.T, dm.n + dm.n_eta, dm.d
    if T < dm.Z0.shape[0] + d:
        warnings.warn(
            f"T={T} is below rows(Z0) + d = {dm.Z0.shape[0] + d}; "
            "the lifting equality cannot have full rank",
            stacklevel=2,
        )
    X = cp.Variable((nn, nn), symmetric=True)
    Y = cp.Variable((T, nn))
    eps = float(problem.eps)
    cons = [
        X >> eps * np.eye(nn),
        cp.vstack([X, np.zeros((d, nn))]) == cp.vstack([dm.Z0, dm.Mred]) @ Y,
        dm.Z1 @ Y + Y.T @ dm.Z1.T << -eps * np.eye(nn),
    ]
    prob = cp.Problem(cp.Minimize(0), cons)
    t0 = time.perf_counter()
    solver_name = _run_solver(prob, problem.solver)
    elapsed = time.perf_counter() - t0
    status = prob.status
    if status in ("infeasible", "infeasible_inaccurate"):
        raise Infeasible(f"linear program certified infeasible ({status})")
    if status not in ("optimal", "optimal_inaccurate"):
        raise NumericalFailure(f"solver returned status {status!r}")
    Xv = np.asarray(X.value)
    Xv = 0.5 * (Xv + Xv.T)
    Yv = np.asarray(Y.value)
    if problem.polish:
        C = np.vstack([dm.Z0, dm.Mred])
        Yv = _project_columns(C, Yv, np.vstack([Xv, np.zeros((d, nn))]))
    Gop = Yv @ np.linalg.inv(Xv)
    K = dm.U0 @ Gop
    lyap = dm.Z1 @ Yv
    residuals = {
        "eq_state_lift": float(
            np.abs(np.vstack([dm.Z0, dm.Mred]) @ Yv - np.vstack([Xv, np.zeros((d, nn))])).max()
        ),
        "annihilation": float(np.abs(dm.Mred @ Yv).max()),
        "lmi_max_eig": float(np.linalg.eigvalsh(lyap + lyap.T).max()),
        "x_min_eig": float(np.linalg.eigvalsh(Xv).min()),
        "gain_consistency": float(np.abs(dm.U0 @ Gop - K).max()),
    }
    result = SynthesisResult(
        status="feasible",
        mode="linear",
        K=K,
        certificate={"X": Xv, "Y": Yv},
        residuals=residuals,
        solver_status=status,
        solver_name=solver_name,
        solve_time=elapsed,
    )
    _validate(result)
    return result


def _validate(result: SynthesisResult):
    res = result.residuals
    eq_keys = [k for k in res if k.startswith("eq_") or k == "annihilation"]
    worst_eq = max(res[k] for k in eq_keys)
    if worst_eq > EQ_RESIDUAL_TOL:
        raise NumericalFailure(
            f"equality residual {worst_eq:.2e} exceeds {EQ_RESIDUAL_TOL:.0e} "
            f"(solver status {result.solver_status})"
        )
    if res["lmi_max_eig"] > LMI_EIG_TOL:
        raise NumericalFailure(
            f"LMI eigenvalue {res['lmi_max_eig']:.2e} exceeds {LMI_EIG_TOL:.0e} "
            f"(solver status {result.solver_status})"
        )


def gain_operator(result: SynthesisResult) -> np.ndarray:
    """The matrix G with [K; I; 0] = [U0; Z0; Mred] G at the returned point."""
    if result.mode == "nonlinear":
        c = result.certificate
        return np.hstack([c["Y1"] @ np.linalg.inv(c["P1"]), c["G2"]])
    c = result.certificate
    return c["Y"] @ np.linalg.inv(c["X"])


def _metric_sqrt(P: np.ndarray):
    w, V = np.linalg.eigh(P)
    if w.min() <= 0:
        raise NumericalFailure("certificate metric is not positive definite")
    return (V * np.sqrt(w)) @ V.T, (V / np.sqrt(w)) @ V.T


def contractivity_margin(
    result: SynthesisResult,
    dm: DataMatrices,
    basis: BasisLibrary | None = None,
    n_points: int = 1000,
    box: float = 2.0,
    seed: int = 0,
) -> float:
    """Sampled contraction margin of the closed loop in the certificate metric.

    Returns ``beta = -max_x lambda_max(H + H^T)`` with ``H = P^{-1/2} J(x)
    P^{1/2}``, where ``J(x)`` is the closed-loop Jacobian assembled from the
    data-based representation; a positive value certifies the sampled
    contraction inequality.  States are drawn uniformly from
    ``[-box, box]^n`` (the Jacobian depends on x only).
    """
    Gop = gain_operator(result)
    Zg = dm.Z1 @ Gop
    nn = dm.n + dm.n_eta
    if result.mode == "linear":
        Xs, Xsi = _metric_sqrt(result.certificate["X"])
        H = Xsi @ Zg @ Xs
        return float(-np.linalg.eigvalsh(H + H.T).max())
    if basis is None:
        raise ValueError("the basis library is required in nonlinear mode")
    Ps, Psi = _metric_sqrt(result.certificate["P1"])
    rng = np.random.default_rng(seed)
    xs = rng.uniform(-box, box, (n_points, dm.n))
    dZ = np.zeros((dm.q + dm.n_eta, nn))
    dZ[: dm.n, : dm.n] = np.eye(dm.n)
    dZ[dm.n : dm.n + dm.n_eta, dm.n :] = np.eye(dm.n_eta)
    worst = -np.inf
    for x in xs:
        dZ[dm.n + dm.n_eta :, : dm.n] = basis.jacobian_Q(x)
        H = Psi @ (Zg @ dZ) @ Ps
        worst = max(worst, float(np.linalg.eigvalsh(H + H.T).max()))
    return float(-worst)


@dataclass(frozen=True)
class SylvesterReport:
    """Steady-state subspace of the linear closed loop and its regulation residual."""

    Pi_x: np.ndarray
    Pi_eta: np.ndarray
    residual: float


def sylvester_verify(
    result: SynthesisResult,
    dm: DataMatrices,
    P_aug: np.ndarray,
    C_e: np.ndarray,
    Q_e: np.ndarray,
    S: np.ndarray,
) -> SylvesterReport:
    """Solve ``P_aug + (Z1 G) Pi = Pi S`` and report ``max |C_e Pi_x + Q_e|``.

    The solve requires the closed-loop spectrum disjoint from that of ``S``;
    overlap (a non-Hurwitz loop, since ``S`` sits on the imaginary axis)
    raises :class:`SingularSylvester`.
    """
    if result.mode != "linear":
        raise DimensionMismatch("Sylvester verification applies to the linear mode")
    Acl = dm.Z1 @ gain_operator(result)
    lam_cl = np.linalg.eigvals(Acl)
    lam_s = np.linalg.eigvals(np.asarray(S, dtype=float))
    sep = np.abs(lam_cl[:, None] - lam_s[None, :]).min()
    scale = max(1.0, np.abs(lam_cl).max(), np.abs(lam_s).max())
    if sep < 1e-9 * scale:
        raise SingularSylvester(
            f"closed-loop and exogenous spectra are {sep:.2e} apart; Sylvester solve is singular"
        )
    Pi = sla.solve_sylvester(Acl, -np.asarray(S, dtype=float), -np.asarray(P_aug, dtype=float))
    n = dm.n
    Pi_x, Pi_eta = Pi[:n], Pi[n:]
    residual = float(np.abs(np.atleast_2d(C_e) @ Pi_x + np.atleast_2d(Q_e)).max())
    return SylvesterReport(Pi_x, Pi_eta, residual)


def audit_rq(
    basis: BasisLibrary,
    R_Q: np.ndarray,
    n_points: int = 2000,
    box: float = 5.0,
    seed: int = 0,
) -> float:
    """Largest sampled violation of the Jacobian bound (<= 0 means it holds).

    Samples ``lambda_max((dQ/dx)^T dQ/dx - R_Q R_Q^T)`` over states drawn
    uniformly from ``[-box, box]^n``.
    """
    R = np.asarray(R_Q, dtype=float).reshape(basis.n, -1)
    RRt = R @ R.T
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for x in rng.uniform(-box, box, (n_points, basis.n)):
        J = basis.jacobian_Q(x)
        worst = max(worst, float(np.linalg.eigvalsh(J.T @ J - RRt).max()))
    return float(worst)
