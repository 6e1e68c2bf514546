"""Diagnostic figures for run reports.

The Agg backend is selected before pyplot loads so the runner can write
image files on a headless machine. Every figure is drawn from the
JSON-ready results tree, never from live estimator objects, so rendering
cannot perturb anything a replay compares.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_ROUTE_LABELS = ("max limit", "ergodic max", "pointwise sup", "inf formula")


def _cell_axis(centers):
    """Scalar centers plot on their own axis; vector centers by index."""
    arr = np.asarray(centers, dtype=float)
    if arr.ndim == 1:
        return arr, "cell center"
    return np.arange(arr.shape[0], dtype=float), "cell index"


def render(kind, results, path):
    """Write the diagnostic figure for one experiment kind to ``path``."""
    fig = _FIGURES[kind](results)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _certificate_figure(results):
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    estimates = np.asarray(results["estimates"], dtype=float)
    stderrs = np.asarray(results["stderrs"], dtype=float)
    idx = np.arange(len(estimates))
    ax.errorbar(idx, estimates, yerr=3.0 * stderrs, fmt="o", ms=3, lw=0.8, capsize=2)
    ax.axhline(0.0, color="black", lw=0.8)
    ax.axhline(-results["margin"], color="red", lw=0.8, ls="--", label="-margin")
    ax.set_xlabel("net point index")
    ax.set_ylabel("exponent estimate")
    ax.set_title("certificate: " + ("pass" if results["passed"] else "fail"))
    ax.legend(loc="best", fontsize=8)
    return fig


def _spectrum_figure(results):
    fig, ax = plt.subplots(figsize=(4.8, 3.6))
    exponents = np.asarray(results["exponents"], dtype=float)
    stderrs = np.asarray(results["stderrs"], dtype=float)
    idx = np.arange(1, len(exponents) + 1)
    ax.errorbar(idx, exponents, yerr=3.0 * stderrs, fmt="o", capsize=3)
    ax.axhline(0.0, color="black", lw=0.8)
    ax.set_xticks(idx)
    ax.set_xlabel("exponent index")
    ax.set_ylabel("estimate")
    ax.set_title("Lyapunov spectrum")
    return fig


def _furstenberg_figure(results):
    fig, ax = plt.subplots(figsize=(4.0, 3.6))
    ax.errorbar([0], [results["value"]], yerr=[3.0 * results["stderr"]],
                fmt="o", capsize=4)
    ax.set_xticks([])
    ax.set_ylabel("top exponent estimate")
    ax.set_title("stationary-chain average")
    return fig


def _koopman_figure(results):
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    centers, axis_label = _cell_axis(results["centers"])
    for i, measure in enumerate(results["measures"]):
        ax.plot(centers, np.asarray(measure, dtype=float), lw=1.0,
                label=f"class {i}")
    ax.set_xlabel(axis_label)
    ax.set_ylabel("mass per cell")
    ax.set_title(f"stationary structure (rho2 = {results['rho2']:.4f})")
    ax.legend(loc="best", fontsize=8)
    return fig


def _kingman_figure(results):
    fig, ax = plt.subplots(figsize=(5.6, 3.6))
    values = [results["via_max_limit"], results["via_ergodic_max"],
              results["via_pointwise_sup"], results["via_inf_formula"]]
    ax.plot(_ROUTE_LABELS, values, "o", ms=6)
    ax.set_ylabel("top growth rate")
    ax.set_title("four routes: " + ("agree" if results["agree"] else "disagree"))
    ax.tick_params(axis="x", labelrotation=15)
    return fig


def _clt_figure(results):
    fig, (left, right) = plt.subplots(1, 2, figsize=(8.0, 3.4))
    n = np.asarray(results["n_list"], dtype=float)
    sigma2 = np.asarray(results["sigma2"], dtype=float)
    stderr = np.asarray(results["sigma2_stderr"], dtype=float)
    left.errorbar(n, sigma2, yerr=3.0 * stderr, fmt="o-", capsize=3)
    left.set_xscale("log")
    left.set_xlabel("n")
    left.set_ylabel("variance of Z_n")
    ks = np.asarray(results["ks"], dtype=float)
    shown = np.isfinite(ks)
    if shown.any():
        right.plot(n[shown], ks[shown], "o-")
    else:
        right.text(0.5, 0.5, "degenerate at every n", ha="center", va="center",
                   transform=right.transAxes)
    right.set_xscale("log")
    right.set_xlabel("n")
    right.set_ylabel("KS distance to fitted normal")
    return fig


def _large_deviation_figure(results):
    fig, ax = plt.subplots(figsize=(5.6, 3.6))
    n = np.asarray(results["n_list"], dtype=float)
    drew = False
    for eps, row in zip(results["eps_list"], results["p_hat"]):
        p = np.asarray(row, dtype=float)
        mask = p > 0.0
        if mask.any():
            ax.semilogy(n[mask], p[mask], "o-", label=f"eps = {eps:g}")
            drew = True
    if drew:
        ax.legend(loc="best", fontsize=8)
    else:
        ax.text(0.5, 0.5, "all tails empty", ha="center", va="center",
                transform=ax.transAxes)
    ax.set_xlabel("n")
    ax.set_ylabel("tail probability")
    ax.set_title("deviation tails")
    return fig


def _sweep_figure(results):
    fig, (left, right) = plt.subplots(1, 2, figsize=(8.0, 3.4))
    t = np.asarray(results["t_list"], dtype=float)
    distances = np.asarray(results["distances"], dtype=float)
    if results["estimates"] is None:
        left.step(t, results["multiplicities"], where="mid")
        left.set_ylabel("ergodic multiplicity")
    else:
        estimates = np.asarray(results["estimates"], dtype=float)
        stderrs = np.asarray(results["stderrs"], dtype=float)
        left.errorbar(t, estimates, yerr=3.0 * stderrs, fmt="o-", ms=3, capsize=2)
        if results["base_value"] is not None:
            left.axhline(results["base_value"], color="black", lw=0.8)
        left.set_ylabel("estimate")
        base = results["base_value"]
        deltas = np.abs(estimates - base) if base is not None else np.abs(estimates)
        mask = (distances > 0.0) & (deltas > 0.0)
        if mask.any():
            right.loglog(distances[mask], deltas[mask], "o", ms=4)
        fit = results["fit"]
        if fit is not None and mask.any():
            d = np.sort(distances[mask])
            right.loglog(d, fit["c_hat"] * d ** fit["gamma_hat"], lw=0.8,
                         label=f"slope {fit['gamma_hat']:.3f}")
            right.legend(loc="best", fontsize=8)
    left.set_xlabel("t")
    right.set_xlabel("distance to base")
    right.set_ylabel("estimate shift")
    fig.suptitle(results["kind"], fontsize=10)
    return fig


def _synchronization_figure(results):
    fig, ax = plt.subplots(figsize=(3.6, 3.6))
    ax.bar([0], [results["fraction"]], width=0.5)
    ax.set_ylim(0.0, 1.05)
    ax.set_xticks([])
    ax.set_ylabel("synchronized fraction")
    ax.set_title(f"fraction = {results['fraction']:.4f}")
    return fig


def _basins_figure(results):
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    fractions = np.asarray(results["fractions"], dtype=float)
    centers, axis_label = _cell_axis(results["centers"])
    layers = [fractions[:, i] for i in range(fractions.shape[1])]
    labels = [f"measure {i}" for i in range(fractions.shape[1])]
    layers.append(np.asarray(results["unattributed"], dtype=float))
    labels.append("unattributed")
    ax.stackplot(centers, *layers, labels=labels)
    ax.set_xlabel(axis_label)
    ax.set_ylabel("attribution fraction")
    ax.set_ylim(0.0, 1.0)
    ax.legend(loc="best", fontsize=8)
    return fig


def _law_convergence_figure(results):
    fig, ax = plt.subplots(figsize=(5.6, 3.6))
    n = np.asarray(results["n_list"], dtype=float)
    d = np.asarray(results["distances"], dtype=float)
    positive = d > 0.0
    if positive.all():
        ax.loglog(n, d, "o-")
    else:
        ax.semilogx(n, d, "o-")
    ax.set_xlabel("n")
    ax.set_ylabel("W1 to nearest stationary measure")
    ax.set_title("law convergence")
    return fig


_FIGURES = {
    "certificate": _certificate_figure,
    "spectrum": _spectrum_figure,
    "furstenberg": _furstenberg_figure,
    "koopman": _koopman_figure,
    "kingman": _kingman_figure,
    "clt": _clt_figure,
    "large-deviation": _large_deviation_figure,
    "sweep": _sweep_figure,
    "synchronization": _synchronization_figure,
    "basins": _basins_figure,
    "law-convergence": _law_convergence_figure,
}
