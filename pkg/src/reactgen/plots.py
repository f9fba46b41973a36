"""Static figure rendering for train/eval outputs (matplotlib, Agg backend)."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def save_loss_curves(history, path):
    """Per-epoch alignment/distribution/total losses on a log scale."""
    epochs = [entry["epoch"] for entry in history]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for key, label in (("align", "latent alignment"),
                       ("dist", "distribution regression"),
                       ("total", "total")):
        ax.plot(epochs, [entry[key] for entry in history], label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(frameon=False)
    ax.set_title("training losses")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_metric_summary(report, path):
    """Bar chart of the scalar metrics in a report."""
    names = sorted(report.values)
    values = [report.values[name] for name in names]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.bar(names, values, color="#4878a8")
    ax.set_ylabel("score")
    ax.set_title("evaluation metrics")
    ax.tick_params(axis="x", rotation=45)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_reaction_traces(pair, path, max_attributes=4):
    """Speaker vs generated vs appropriate-real traces, one panel per attribute."""
    n = min(max_attributes, pair.speaker.values.shape[0])
    fig, axes = plt.subplots(n, 1, figsize=(6.4, 1.8 * n), sharex=True)
    if n == 1:
        axes = [axes]
    for i, ax in enumerate(axes):
        ax.plot(pair.speaker.values[i], color="black", lw=1.2, label="speaker")
        for clip in pair.appropriate_real:
            ax.plot(clip.values[i], color="#70a070", lw=0.8, alpha=0.6,
                    label="appropriate real")
        for clip in pair.generated:
            ax.plot(clip.values[i], color="#b05050", lw=0.8, alpha=0.6,
                    label="generated")
        ax.set_ylabel(f"attr {i}")
        ax.set_ylim(-0.05, 1.05)
    handles, labels = axes[0].get_legend_handles_labels()
    seen = dict(zip(labels, handles))
    axes[0].legend(seen.values(), seen.keys(), frameon=False, fontsize=8)
    axes[-1].set_xlabel("frame")
    fig.suptitle(f"behaviour {pair.behavior_id}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
