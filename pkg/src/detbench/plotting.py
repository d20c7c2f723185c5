"""Report figures written next to the JSON outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

# Fixed metadata keeps PNG bytes stable across runs.
_SAVE_KW = {"dpi": 120, "metadata": {"Software": None}}


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def plot_pr_curve(curves, path, title="Precision-recall (IoU 0.5)"):
    """``curves`` maps a dataset label to ``(PRCurve, ap)``."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, (curve, ap) in curves.items():
        # draw the monotone envelope the AP integrates
        env = list(curve.precision)
        for i in range(len(env) - 2, -1, -1):
            env[i] = max(env[i], env[i + 1])
        ax.step([0.0] + curve.recall, [env[0] if env else 0.0] + env, where="pre", label=f"{label} (AP {ap:.3f})")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_title(title)
    ax.legend(loc="lower left", fontsize=8)
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def plot_latency(report, path, title="Per-stage latency"):
    stages = ("preprocess", "inference", "postprocess")
    means = [getattr(report, s).mean for s in stages]
    fig, ax = plt.subplots(figsize=(5, 3))
    left = 0.0
    for stage, m in zip(stages, means):
        ax.barh([0], [m], left=left, label=f"{stage} {m:.1f} ms")
        left += m
    fps = report.fps
    fps_txt = f"{fps:.3f}" if fps != float("inf") else "inf"
    ax.set_yticks([])
    ax.set_xlabel("mean latency [ms]")
    ax.set_title(f"{title}: total {report.total.mean:.1f} ms, {fps_txt} FPS")
    ax.legend(loc="upper center", bbox_to_anchor=(0.5, -0.35), ncol=3, fontsize=8)
    return _finish(fig, path)


def plot_split_counts(counts, path, title="Split sizes"):
    """``counts`` maps a split name to a dict of group -> count."""
    names = list(counts)
    groups = sorted({g for c in counts.values() for g in c})
    fig, ax = plt.subplots(figsize=(6, 3.5))
    bottom = [0] * len(names)
    for g in groups:
        vals = [counts[n].get(g, 0) for n in names]
        ax.bar(names, vals, bottom=bottom, label=g)
        bottom = [b + v for b, v in zip(bottom, vals)]
    for x, total in enumerate(bottom):
        ax.text(x, total, str(total), ha="center", va="bottom", fontsize=8)
    ax.set_ylabel("images")
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _finish(fig, path)
