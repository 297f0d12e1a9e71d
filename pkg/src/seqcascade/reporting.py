"""Figure rendering for the delimited reports.

Every report-producing command drops a PNG next to its TSV so runs can be
eyeballed without further tooling.  The effective config echo travels in the
PNG metadata.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

DPI = 120


def _save(fig, path, config_echo: list[str] | None) -> None:
    metadata = None
    if config_echo:
        metadata = {"Description": "; ".join(config_echo)}
    fig.savefig(path, dpi=DPI, metadata=metadata)
    plt.close(fig)


def save_training_curves(rows, task_names: list[str], path, config_echo=None) -> None:
    """Loss and dev-accuracy curves from the per-epoch log rows."""
    epochs = [r.epoch for r in rows]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_loss.plot(epochs, [r.total_loss for r in rows], label="total", color="black")
    for name in task_names:
        ax_loss.plot(epochs, [r.task_losses[name] for r in rows], label=name, alpha=0.7)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("training loss")
    ax_loss.legend(fontsize=8)
    for name in task_names:
        ax_acc.plot(epochs, [r.dev_accuracies[name] for r in rows], label=name, alpha=0.8)
    ax_acc.plot(epochs, [r.dev_mean for r in rows], label="mean", color="black",
                linestyle="--")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("dev token accuracy")
    ax_acc.set_ylim(0.0, 1.02)
    ax_acc.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path, config_echo)


def save_loop_metrics(rows: list[dict], task_names: list[str], path, config_echo=None) -> None:
    """Per-step accuracy lines (and training-token counts) for the
    annotation-loop metrics table."""
    steps = [int(r["step"]) for r in rows]
    fig, (ax_acc, ax_tok) = plt.subplots(1, 2, figsize=(9, 3.5))
    for name in task_names:
        points = [(s, float(r[name])) for s, r in zip(steps, rows) if r.get(name, "-") != "-"]
        if points:
            ax_acc.plot(*zip(*points), marker="o", label=name)
    ax_acc.set_xlabel("step")
    ax_acc.set_ylabel("dev token accuracy")
    ax_acc.set_ylim(0.0, 1.02)
    ax_acc.legend(fontsize=8)
    ax_tok.bar(steps, [int(r["train_tokens"]) for r in rows], color="tab:gray")
    ax_tok.set_xlabel("step")
    ax_tok.set_ylabel("training tokens")
    fig.tight_layout()
    _save(fig, path, config_echo)


def save_accuracy_bars(accuracies: dict[str, float], path, config_echo=None) -> None:
    """Per-task accuracy bars for an evaluation run."""
    fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(accuracies), 3.2))
    names = list(accuracies)
    values = [accuracies[n] for n in names]
    ax.bar(names, values, color="tab:blue")
    for i, v in enumerate(values):
        ax.text(i, v + 0.01, f"{v:.3f}", ha="center", fontsize=8)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("token accuracy")
    fig.tight_layout()
    _save(fig, path, config_echo)
