"""Report figures written next to the CLI's CSV output (Agg backend, no display)."""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "figure.figsize": (5.0, 3.6),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "savefig.bbox": "tight",
}


def _save(fig, path):
    # strip metadata so reruns produce identical files
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def _finite(xs, ys):
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    ok = np.isfinite(xs) & np.isfinite(ys)
    return xs[ok], ys[ok]


def capacity_plot(rows, d, r, path):
    with plt.rc_context(_STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3.4))
        n, lam = _finite([row["n"] for row in rows], [row["lambda"] for row in rows])
        a1.loglog(n, lam, "o-", label=r"$\lambda_{d,r}(n)$")
        a1.set_xlabel("n")
        a1.set_title(f"capacity, d={d}, r={r:g}")
        a1.legend()
        n, kap = _finite([row["n"] for row in rows], [row["kappa"] for row in rows])
        a2.semilogx(n, kap, "s-", color="C1")
        a2.set_xlabel("n")
        a2.set_title(r"$\kappa_{d,r}(n)$")
        _save(fig, path)


def bounds_plot(rows, path):
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        labels = [row["quantity"] for row in rows]
        ax.barh(labels, [row["value"] for row in rows], color="C0")
        ax.set_xlabel("value")
        _save(fig, path)


def paths_plot(shells, p, d, path):
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        k = np.asarray(shells, float)
        ax.plot(k, np.asarray(p) * k ** (d - 1), ".", ms=3, alpha=0.6)
        ax.set_xlabel(r"shell $|e|_1$")
        ax.set_ylabel(r"$p_e\,|e|_1^{d-1}$")
        _save(fig, path)


def mu_plot(table, mu_hat, intercept, path):
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        n = np.array([row["n"] for row in table], float)
        m = np.array([row["mean_T"] for row in table])
        se = np.array([row["stderr"] for row in table])
        ax.errorbar(n, m, yerr=se, fmt="o", capsize=2, label="mean T(0, n e1)")
        xx = np.linspace(0, n.max(), 50)
        ax.plot(xx, intercept + mu_hat * xx, "--", label=rf"fit, $\hat\mu$={mu_hat:.4f}")
        ax.set_xlabel("n")
        ax.legend()
        _save(fig, path)


def estimates_plot(results, path):
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        names = list(results)
        p = [results[k]["p_hat"] for k in names]
        se = [results[k]["stderr"] for k in names]
        ax.errorbar(range(len(names)), p, yerr=se, fmt="o", capsize=3)
        ax.set_xticks(range(len(names)), names)
        ax.set_ylabel(r"$\hat p$")
        _save(fig, path)


def rate_plot(rows, path):
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        n, rate = _finite([row["n"] for row in rows], [row["rate"] for row in rows])
        ax.plot(n, rate, "o-", label="empirical")
        if rows:
            ax.axhline(rows[0]["theory"], ls="--", color="k", label="theory")
        ax.set_xlabel("n")
        ax.set_ylabel(r"$-\log\hat p\,/\,\mathrm{scale}(n)$")
        ax.legend()
        _save(fig, path)


def sum_tail_plot(rows, path):
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        n = np.array([row["n"] for row in rows])
        p = np.array([row["p_hat"] for row in rows])
        ax.semilogy(n[p > 0], p[p > 0], "o", label="empirical")
        ax.semilogy(n, [row["envelope"] for row in rows], "--", label="envelope")
        ax.set_xlabel("n")
        ax.legend()
        _save(fig, path)


def inclusion_plot(events, path):
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        lhs = [e["T1"] + e["T2"] + e["TG"] for e in events]
        tn = [e["Tn"] for e in events]
        x, y = _finite(lhs, tn)
        ax.plot(x, y, ".", ms=3)
        if len(x):
            top = max(x.max(), y.max())
            ax.plot([0, top], [0, top], "k--", lw=0.8)
        ax.set_xlabel(r"$T^{[1]} + T^{[2]} + T_G$")
        ax.set_ylabel(r"$T_n$")
        _save(fig, path)


def localization_plot(result, path):
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.bar(["freq_loc", "signal"], [result["freq_loc"], result["signal"]],
               yerr=[result["stderr"]] * 2, capsize=3)
        ax.set_ylim(0, 1.05 if math.isfinite(result["signal"]) else 1)
        _save(fig, path)
