"""Figure rendering for the CLI report path.

All figures are written to files next to the delimited output; nothing here
is interactive.  The evaluation library itself stays plot-free, so these
helpers consume only data already present in the emitted reports.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["plot_sweep", "plot_convergence", "plot_spectrum", "plot_waveform"]


def plot_sweep(rows, path):
    """Median steady-state error versus harmonic count, log scale."""
    ok = [r for r in rows if r.status == "feasible"]
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    if ok:
        ells = [r.ell for r in ok]
        ax.semilogy(ells, [max(r.limsup_e, 1e-300) for r in ok], "o-", label="limsup |e|")
        ax.semilogy(ells, [max(r.bound_value, 1e-300) for r in ok], "s--",
                    label="mean-square bound")
    bad = [r for r in rows if r.status != "feasible"]
    for r in bad:
        ax.axvline(r.ell, color="crimson", ls=":", lw=1)
    ax.set_xlabel("oscillators in the internal model")
    ax.set_ylabel("steady-state error")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_convergence(report, path, title=None):
    """Per-period error maxima for every evaluated initial condition."""
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for run in report.runs:
        periods = np.arange(1, run.period_max_e.size + 1)
        ax.semilogy(periods, np.maximum(run.period_max_e, 1e-300), lw=1,
                    label=f"seed {run.seed}")
    ax.set_xlabel("period")
    ax.set_ylabel("max |e| per period")
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_spectrum(report, path, title=None):
    """Magnitudes of the steady-state Fourier coefficients."""
    spec = report.spectrum
    ks = np.arange(spec.k_max + 1)
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    width = 0.4
    ax.bar(ks - width / 2, np.abs(spec.a), width, label="|a_k|")
    ax.bar(ks[1:] + width / 2, np.abs(spec.b[1:]), width, label="|b_k|")
    ax.axvline(report.ell_checked + 0.5, color="gray", ls="--", lw=1)
    ax.set_yscale("log")
    ax.set_xlabel("harmonic k")
    ax.set_ylabel("coefficient magnitude")
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_waveform(report, path, title=None):
    """Steady-state error waveform over one period (representative run)."""
    run = report.runs[len(report.runs) // 2]
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    if run.e_star is not None:
        for c in range(run.e_star.shape[0]):
            ax.plot(run.window_times, run.e_star[c], lw=1.2, label=f"e_{c + 1}")
    ax.set_xlabel("time within one period")
    ax.set_ylabel("steady-state error")
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
