"""Assembly of the data matrices consumed by the synthesis programs.

From one experiment we form ``U0`` (inputs), ``Z0`` (library samples of the
augmented state), ``Z1`` (state derivatives) and the reduced signal matrix
``Mred`` whose rows span every exogenous contribution to the data.  The
annihilation constraint ``Mred @ G = 0`` is what removes the unmeasured
exogenous term from the closed-loop representation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .exo import SpectralSpec, build_M, minimal_poly_degree
from .imodel import InternalModel
from .plant import BasisLibrary, Dataset

__all__ = ["DataMatrices", "RankReport", "assemble", "rank_report", "verify_annihilation"]


@dataclass(frozen=True)
class DataMatrices:
    """Sampled data in matrix form; ``mode`` fixes the Z0 row layout.

    Nonlinear mode stacks x, eta, then Q(x) samples; linear mode stacks x
    then eta.  ``Z1`` rows are always ``dx`` over ``deta = Phi eta + G e``.
    """

    U0: np.ndarray
    Z0: np.ndarray
    Z1: np.ndarray
    Mred: np.ndarray
    mode: str
    times: np.ndarray
    n: int
    n_eta: int

    @property
    def T(self) -> int:
        return self.U0.shape[1]

    @property
    def d(self) -> int:
        return self.Mred.shape[0]

    @property
    def m(self) -> int:
        return self.U0.shape[0]

    @property
    def q(self) -> int:
        """Library dimension; equals ``n`` in linear mode."""
        return self.Z0.shape[0] - self.n_eta


def assemble(
    dataset: Dataset,
    basis: BasisLibrary,
    im: InternalModel,
    spec: SpectralSpec,
    mode: str = "nonlinear",
) -> DataMatrices:
    """Build (U0, Z0, Z1, Mred) from one experiment.

    Raises
    ------
    DimensionMismatch
        If the dataset arrays are inconsistent with the basis or the
        internal model.
    """
    if mode not in ("nonlinear", "linear"):
        raise ValueError(f"unknown mode {mode!r}")
    x, u, e, dx, eta = dataset.x, dataset.u, dataset.e, dataset.dx, dataset.eta
    T = dataset.T
    for name, arr in (("x", x), ("u", u), ("e", e), ("dx", dx), ("eta", eta)):
        if arr.shape[1] != T:
            raise DimensionMismatch(f"dataset field {name} has {arr.shape[1]} columns, expected {T}")
    if x.shape[0] != basis.n:
        raise DimensionMismatch(f"dataset states have dimension {x.shape[0]}, basis expects {basis.n}")
    if eta.shape[0] != im.n_eta:
        raise DimensionMismatch(
            f"dataset eta has dimension {eta.shape[0]}, internal model expects {im.n_eta}"
        )
    if e.shape[0] != im.G.shape[1]:
        raise DimensionMismatch("error channel count does not match the internal model")
    deta = im.Phi @ eta + im.G @ e
    if mode == "nonlinear":
        Z0 = np.vstack([x, eta, basis.eval_Q(x)])
    else:
        if basis.n_q:
            raise DimensionMismatch("linear mode requires an empty basis catalog")
        Z0 = np.vstack([x, eta])
    Z1 = np.vstack([dx, deta])
    Mred = build_M(spec, dataset.times, reduced=True).values
    return DataMatrices(u.copy(), Z0, Z1, Mred, mode, dataset.times.copy(), basis.n, im.n_eta)


@dataclass(frozen=True)
class RankReport:
    """Numerical rank diagnostics of the stacked data matrix."""

    rank: int
    rows: int
    singular_values: np.ndarray
    full_row_rank: bool
    z0m_rank: int
    z0m_rows: int
    scaled: bool


def rank_report(dm: DataMatrices, rtol: float = 1e-8, scale_rows: bool = False) -> RankReport:
    """Rank of ``[U0; Z0; Mred]`` with threshold ``rtol * sigma_max``.

    ``scale_rows`` normalizes each row block to unit max-abs first, a
    diagnostic for data with mixed units; synthesis always consumes the raw
    matrices.  The rank of ``[Z0; Mred]`` is reported as well since the
    converse direction of the linear result may only need that block.
    """
    blocks = [dm.U0, dm.Z0, dm.Mred]
    if scale_rows:
        blocks = [b / max(np.abs(b).max(), 1e-300) for b in blocks]
    stacked = np.vstack(blocks)
    sv = np.linalg.svd(stacked, compute_uv=False)
    rank = int(np.sum(sv > rtol * sv[0])) if sv.size else 0
    sv2 = np.linalg.svd(np.vstack(blocks[1:]), compute_uv=False)
    z0m_rank = int(np.sum(sv2 > rtol * sv2[0])) if sv2.size else 0
    return RankReport(
        rank=rank,
        rows=stacked.shape[0],
        singular_values=sv,
        full_row_rank=rank == stacked.shape[0],
        z0m_rank=z0m_rank,
        z0m_rows=dm.Z0.shape[0] + dm.Mred.shape[0],
        scaled=scale_rows,
    )


def verify_annihilation(dm: DataMatrices, G: np.ndarray) -> float:
    """Max-abs entry of ``Mred @ G``, the post-solve noise-filtering residual."""
    G = np.asarray(G, dtype=float)
    if G.shape[0] != dm.T:
        raise DimensionMismatch(f"G must have {dm.T} rows, got {G.shape[0]}")
    return float(np.abs(dm.Mred @ G).max())


def export_csv(dm: DataMatrices, directory) -> list[str]:
    """Write U0, Z0, Z1 and Mred to ``directory``, one CSV per matrix."""
    import os

    os.makedirs(directory, exist_ok=True)
    written = []
    for name, M in (("U0", dm.U0), ("Z0", dm.Z0), ("Z1", dm.Z1), ("M", dm.Mred)):
        path = os.path.join(directory, f"{name}.csv")
        np.savetxt(path, M, fmt="%.17g", delimiter=",")
        written.append(path)
    return written
