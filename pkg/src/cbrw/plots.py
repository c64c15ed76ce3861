"""Figures for ``cbrw report``.

Each function takes the same tidy rows that ``report`` writes to CSV and
saves one PNG.  The Agg backend is used and the PNG software tag is
dropped so repeated runs produce identical files.
"""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": (5.0, 3.4),
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def limit_law(rows, phi_rows, path):
    """Empirical ``P(M_t/L_t <= lambda^{-1/gamma})`` per checkpoint against ``phi``."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        lam = np.array([r["lambda"] for r in phi_rows])
        ax.semilogx(lam, [r["phi_w1"] for r in phi_rows], "k-", lw=1.5, label=r"$\varphi$")
        for t in sorted({r["t"] for r in rows}):
            sel = [r for r in rows if r["t"] == t]
            ax.semilogx([r["lambda"] for r in sel], [r["empirical"] for r in sel],
                        lw=0.9, label=f"t = {t:g}")
        ax.set_xlabel(r"$\lambda$")
        ax.set_ylabel("probability")
        ax.set_ylim(0, 1.02)
        ax.legend(frameon=False)
        _save(fig, path)


def growth(rows, nu, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        t = np.array([r["t"] for r in rows])
        m = np.array([r["mean_total"] for r in rows])
        ax.semilogy(t, m, "o", ms=4, label="simulated mean")
        ref = m[0] * np.exp(nu * (t - t[0]))
        ax.semilogy(t, ref, "k--", lw=1, label=rf"slope $\nu$ = {nu:.4f}")
        ax.set_xlabel("t")
        ax.set_ylabel("mean population")
        ax.legend(frameon=False)
        _save(fig, path)


def small_lambda_ratio(rows, K, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for t in sorted({r["t"] for r in rows}):
            sel = [r for r in rows if r["t"] == t]
            ax.errorbar([r["lambda"] for r in sel], [r["ratio"] for r in sel],
                        yerr=[r["se"] for r in sel], marker="o", ms=3, lw=0.9, capsize=2,
                        label=f"t = {t:g}")
        if K is not None:
            ax.axhline(K, color="k", ls="--", lw=1, label=f"K = {K:.4f}")
        ax.set_xscale("log")
        ax.set_xlabel(r"$\lambda$")
        ax.set_ylabel(r"$\lambda^{-1} P(M_t > \lambda^{-1/\gamma} L_t)$")
        ax.legend(frameon=False)
        _save(fig, path)


def big_jump(rows, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for c in sorted({r["c"] for r in rows}):
            sel = sorted((r for r in rows if r["c"] == c), key=lambda r: r["t"])
            ax.plot([r["t"] for r in sel], [r["ratio"] for r in sel], marker="o", ms=3,
                    label=f"c = {c:g}")
        ax.axhline(1.0, color="k", lw=0.8)
        ax.set_xscale("log", base=2)
        ax.set_xlabel("t")
        ax.set_ylabel("exact tail / one-jump tail")
        ax.legend(frameon=False)
        _save(fig, path)


def extinction_proxy(rows, Q, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        t = [r["t"] for r in rows]
        p = np.array([r["proxy"] for r in rows])
        s = np.array([r["sigma"] for r in rows])
        ax.errorbar(t, p, yerr=3 * s, marker="o", ms=3, lw=0.9, capsize=2,
                    label="no particle on catalysts")
        if Q is not None:
            ax.axhline(Q, color="k", ls="--", lw=1, label=rf"plateau of $\varphi$ = {Q:.4f}")
        ax.set_xlabel("t")
        ax.set_ylabel("fraction of replicates")
        ax.legend(frameon=False)
        _save(fig, path)
