import sys
import os

import pandas as pd

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from base_analyzer import BaseAnalyzer, AnalysisResult
from pca_compress import components_for_variance, variance_curve


class PcaVarianceAnalyzer(BaseAnalyzer):
    """
    Variance retention per channel for one image.

    data keys:
        name:      image stem used in output file names
        channels:  list of ChannelPca, one per image channel
        threshold: optional cumulative-variance target in (0, 1]
    """

    handles = "pca"

    @property
    def name(self) -> str:
        return "PCA Variance Retention"

    def analyze(self, data: dict) -> AnalysisResult:
        stem = data["name"]
        channels = data["channels"]
        threshold = data.get("threshold")

        rows = [
            {"channel": c, "k": k, "cumulative_ratio": ratio}
            for c, pca in enumerate(channels)
            for k, ratio in variance_curve(pca)
        ]
        curve = pd.DataFrame(rows, columns=["channel", "k", "cumulative_ratio"])
        self._write_csv(curve, f"{stem}_variance.csv")

        fig, ax = self._new_figure(
            f"Variance retention: {stem}", "components (k)", "cumulative explained variance"
        )
        for c in range(len(channels)):
            points = curve[curve["channel"] == c]
            if len(points):
                ax.plot(points["k"], points["cumulative_ratio"], marker=".", label=f"channel {c}")
            else:
                ax.plot([], [], label=f"channel {c} (constant)")
        if threshold is not None:
            ax.axhline(threshold, color="gray", linestyle="--", linewidth=1, label=f"threshold {threshold}")
        ax.set_ylim(0.0, 1.05)
        ax.legend(loc="lower right")
        plot_path = self._save_svg(fig, f"{stem}_variance.svg")

        summary = f"{len(channels)} channels, k_max {[pca.k_max for pca in channels]}"
        details = None
        if threshold is not None:
            ks = [components_for_variance(pca, threshold) for pca in channels]
            self._write_csv(
                pd.DataFrame({"channel": range(len(channels)), "threshold": threshold, "k": ks}),
                f"{stem}_components.csv",
            )
            summary += f", k for {threshold:g} variance {ks}"
            details = "\n".join(f"channel {c}: k={k}" for c, k in enumerate(ks))

        return AnalysisResult(
            analyzer_name=self.name, summary=summary, plot_path=str(plot_path), details=details
        )
