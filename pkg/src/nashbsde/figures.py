"""Figure rendering for the CLI report paths.

Every subcommand that writes a delimited report also renders a PNG next
to it.  Rendering is deterministic: fixed dpi, Agg backend, no embedded
metadata, so repeated runs produce byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_SAVE_KW = {"dpi": 120, "metadata": {"Software": None}}


def _save(fig, path) -> None:
    fig.savefig(Path(path), **_SAVE_KW)
    plt.close(fig)


def render_paths(bundle, path, max_paths: int = 50) -> None:
    """Fan chart of the first few simulated paths (first coordinate)."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    knots = bundle.grid.knots
    shown = min(max_paths, bundle.n_paths)
    for j in range(shown):
        ax.plot(knots, bundle.states[j, :, 0], lw=0.7, alpha=0.6)
    ax.set_xlabel("t")
    ax.set_ylabel("x")
    ax.set_title(f"{bundle.scheme_tag} paths ({shown} of {bundle.n_paths})")
    fig.tight_layout()
    _save(fig, path)


def render_value_maps(sol, path, x_lo=None, x_hi=None, n_pts: int = 201) -> None:
    """Mid-horizon value and gradient maps of both players (1-d state)."""
    if sol.dim_m != 1:
        return
    lo = sol.basis.domain_lo[0] if x_lo is None else x_lo
    hi = sol.basis.domain_hi[0] if x_hi is None else x_hi
    xs = np.linspace(lo, hi, n_pts).reshape(-1, 1)
    t_mid = sol.grid.t0 + 0.5 * (sol.grid.T - sol.grid.t0)
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for player, color in ((1, "tab:blue"), (2, "tab:orange")):
        axes[0].plot(xs[:, 0], sol.eval_w(player, t_mid, xs),
                     color=color, label=f"player {player}")
        axes[1].plot(xs[:, 0], sol.eval_z(player, t_mid, xs)[:, 0],
                     color=color, label=f"player {player}")
    axes[0].set_title(f"value map at t = {t_mid:g}")
    axes[1].set_title(f"gradient map at t = {t_mid:g}")
    for ax in axes:
        ax.set_xlabel("x")
        ax.legend()
    fig.tight_layout()
    _save(fig, path)


def render_nash_report(report, path) -> None:
    """Improvement of every deviation with a 3-SE whisker and the tolerance."""
    rows = report.rows
    fig, ax = plt.subplots(figsize=(8, max(3.0, 0.28 * len(rows) + 1.5)))
    ys = np.arange(len(rows))
    imps = [r.improvement for r in rows]
    errs = [3.0 * r.improvement_se for r in rows]
    colors = ["tab:red" if r.verdict != "ok" else
              ("tab:blue" if r.player == 1 else "tab:orange") for r in rows]
    ax.barh(ys, imps, xerr=errs, color=colors, height=0.6)
    tol = max(r.tolerance for r in rows)
    ax.axvline(tol, color="k", ls="--", lw=0.8, label="tolerance")
    ax.axvline(0.0, color="k", lw=0.8)
    ax.set_yticks(ys)
    ax.set_yticklabels([f"p{r.player} {r.description}" for r in rows], fontsize=7)
    ax.invert_yaxis()
    ax.set_xlabel("cost improvement of the deviator (positive favours deviation)")
    ax.set_title("unilateral deviation sweep" + (" - PASS" if report.passed else " - FAIL"))
    ax.legend(loc="lower right")
    fig.tight_layout()
    _save(fig, path)


def render_isaacs(report, path) -> None:
    """Sorted per-sample violations of the pointwise-minimum property."""
    fig, ax = plt.subplots(figsize=(7, 4))
    if report.samples:
        v1 = np.sort([s[4] for s in report.samples])
        v2 = np.sort([s[5] for s in report.samples])
        ax.plot(v1, label="player 1", color="tab:blue")
        ax.plot(v2, label="player 2", color="tab:orange")
    ax.axhline(report.threshold, color="k", ls="--", lw=0.8, label="threshold")
    ax.set_xlabel("sample rank")
    ax.set_ylabel("minimality violation")
    ax.set_title("best-response minimality" + (" - PASS" if report.passed else " - FAIL"))
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def render_generator_decay(reports, path) -> None:
    """Sup distance to the raw composed Hamiltonian versus level."""
    fig, ax = plt.subplots(figsize=(7, 4))
    levels = [r.level for r in reports]
    for player, color in ((1, "tab:blue"), (2, "tab:orange")):
        dist = [r.decay[player][0] for r in reports]
        ax.plot(levels, dist, "o-", color=color, label=f"player {player}")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("regularization level")
    ax.set_ylabel("sup distance on the compact")
    ax.set_title("generator approximation error")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def render_density(report, density, t0: float, x0: float, path, s_plot=None) -> None:
    """Density slice against the two-sided envelopes at a few times."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    rows = report.rows
    if rows:
        times = sorted({r[0] for r in rows})
        pick = times[:: max(1, len(times) // 3)][:3]
        for s in pick:
            pts = [(float(r[1][0]), r[2], r[3], r[4]) for r in rows if r[0] == s]
            pts.sort()
            xs = [p[0] for p in pts]
            ax.plot(xs, [p[1] for p in pts], label=f"density s={s:g}")
            ax.plot(xs, [p[2] for p in pts], ls=":", color="gray")
            ax.plot(xs, [p[3] for p in pts], ls="--", color="gray")
    ax.set_xlabel("x")
    ax.set_ylabel("density")
    ax.set_title("transition density inside its Gaussian envelopes"
                 + (" - PASS" if report.passed else " - FAIL"))
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def render_solution_diagnostics(sol, path) -> None:
    """Per-knot condition numbers and fixed-point iteration counts."""
    d = sol.diagnostics
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.6))
    axes[0].plot(d["cond_numbers"], lw=0.9)
    axes[0].set_yscale("log")
    axes[0].set_xlabel("knot")
    axes[0].set_title("regression condition numbers")
    axes[1].plot(d["picard_iterations"], lw=0.9)
    axes[1].set_xlabel("knot")
    axes[1].set_title("fixed-point iterations per knot")
    fig.tight_layout()
    _save(fig, path)
