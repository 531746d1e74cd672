import sys
import os

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from base_analyzer import BaseAnalyzer, AnalysisResult
from trainer import write_history_csv


class HistoryAnalyzer(BaseAnalyzer):
    """Per-epoch loss and validation AUC: history.csv and history.svg"""

    handles = "history"

    @property
    def name(self) -> str:
        return "Training History"

    def analyze(self, data: dict) -> AnalysisResult:
        history = data["history"]
        frame = history.to_frame()
        write_history_csv(history, self._path("history.csv"))

        fig, ax = self._new_figure("Training history", "epoch", "loss")
        ax.plot(frame["epoch"], frame["train_loss"], marker="o", label="train loss")
        ax.plot(frame["epoch"], frame["val_loss"], marker="o", label="validation loss")
        auc_ax = ax.twinx()
        auc_ax.plot(frame["epoch"], frame["val_auc"], color="tab:green", marker="s", label="validation AUC")
        auc_ax.set_ylabel("AUC")
        auc_ax.set_ylim(0.0, 1.0)
        lines = ax.get_lines() + auc_ax.get_lines()
        ax.legend(lines, [line.get_label() for line in lines], loc="upper right")
        plot_path = self._save_svg(fig, "history.svg")

        if len(frame) == 0:
            summary = "no epochs trained"
        else:
            last = frame.iloc[-1]
            summary = (
                f"{len(frame)} epochs, final train loss {last['train_loss']:.4f}, "
                f"val loss {last['val_loss']:.4f}, val AUC {last['val_auc']:.4f}"
            )
        return AnalysisResult(analyzer_name=self.name, summary=summary, plot_path=str(plot_path))
