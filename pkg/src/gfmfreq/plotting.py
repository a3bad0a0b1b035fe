"""Figure rendering for run, sweep and portrait reports (PNG via Agg)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def pretty_figure(nrows=1, ncols=1, width=7.0, height=None, **kw):
    golden = (np.sqrt(5) - 1.0) / 2.0
    height = height or width * golden * max(1, nrows) / max(1, ncols) ** 0.5
    fig, axes = plt.subplots(nrows, ncols, figsize=(width, height), squeeze=False, **kw)
    for ax in axes.flat:
        ax.grid(True, alpha=0.3, linewidth=0.6)
        ax.tick_params(labelsize=9)
    return fig, axes


def _window(series, t_from, t_to):
    t = series.t
    return (t >= t_from) & (t <= t_to)


def plot_run(series, path, event_time=None, span=6.0):
    """Device and average frequency over the event, with p_m and p_e below."""
    t0 = series.t[0] if event_time is None else max(series.t[0], event_time - 0.5)
    m = _window(series, t0, t0 + span)
    fig, axes = pretty_figure(2, 1, width=7.0, height=6.5, sharex=True)
    ax_f, ax_p = axes[:, 0]
    for k, name in enumerate(series.names):
        ax_f.plot(series.t[m], series.f[m, k], lw=1.0, label=f"{name} ({series.kinds[k]})")
    if len(series.names) > 1:
        ax_f.plot(series.t[m], series.avg_f[m], "k--", lw=1.4, label="average")
    ax_f.set_ylabel("Frequency (Hz)")
    ax_f.legend(fontsize=8, ncol=2)
    for k, name in enumerate(series.names):
        line, = ax_p.plot(series.t[m], series.p_m[m, k], lw=1.2, label=f"{name} $p_m$")
        ax_p.plot(series.t[m], series.p_e[m, k], lw=0.8, ls=":", color=line.get_color(), label=f"{name} $p_e$")
    ax_p.set_ylabel("Power (pu, device base)")
    ax_p.set_xlabel("Time (s)")
    ax_p.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_sweep(labels, traces, reports, path, event_time=None, span=8.0):
    """Average frequency of every ladder member, and nadir / ROCOF against inertia."""
    fig, axes = pretty_figure(1, 2, width=11.0, height=4.2)
    ax_f, ax_m = axes[0]
    for lab, (t, f) in zip(labels, traces):
        t0 = t[0] if event_time is None else max(t[0], event_time - 0.5)
        m = (t >= t0) & (t <= t0 + span)
        ax_f.plot(t[m], f[m], lw=1.0, label=lab)
    ax_f.set_xlabel("Time (s)")
    ax_f.set_ylabel("Average frequency (Hz)")
    ax_f.legend(fontsize=7, ncol=2)

    H = [r.aggregate_H for r in reports]
    ax_m.plot(H, [r.nadir for r in reports], "o-", color="C0")
    ax_m.set_xlabel("Aggregate inertia (s)")
    ax_m.set_ylabel("Nadir (Hz)", color="C0")
    ax_r = ax_m.twinx()
    ax_r.plot(H, [r.rocof_max_abs for r in reports], "s--", color="C3")
    ax_r.set_ylabel("ROCOF (Hz/s)", color="C3")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_portrait(series, path):
    """Frequency against pre-converter power, one panel per device."""
    n = len(series.names)
    ncols = min(n, 5)
    nrows = int(np.ceil(n / ncols))
    fig, axes = pretty_figure(nrows, ncols, width=2.6 * ncols, height=2.4 * nrows)
    for k, ax in enumerate(axes.flat):
        if k >= n:
            ax.set_visible(False)
            continue
        ax.plot(series.p_m[:, k], series.f[:, k], lw=0.9, color="C0" if series.kinds[k] == "SG" else "C2")
        ax.set_title(f"{series.names[k]} ({series.kinds[k]})", fontsize=9)
        ax.set_xlabel("$p_m$ (pu)", fontsize=8)
        ax.set_ylabel("f (Hz)", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
