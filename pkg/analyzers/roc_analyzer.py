import sys
import os
import re
from pathlib import Path

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from base_analyzer import BaseAnalyzer, AnalysisResult


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", label).strip("_").lower()


class RocAnalyzer(BaseAnalyzer):
    """
    ROC point CSV plus SVG for every label with a defined curve.

    data keys:
        curves:   {label: RocCurve}
        aucs:     {label: float}
        svg_path: optional target; one curve is written there directly,
                  several get a _<label> suffix on its stem
    """

    handles = "roc"

    @property
    def name(self) -> str:
        return "ROC Curves"

    def _targets(self, labels, svg_path):
        if svg_path is None:
            return {label: self._path(f"roc_{_slug(label)}.svg") for label in labels}
        svg_path = Path(svg_path).absolute()
        if len(labels) == 1:
            return {labels[0]: svg_path}
        return {
            label: svg_path.with_name(f"{svg_path.stem}_{_slug(label)}{svg_path.suffix or '.svg'}")
            for label in labels
        }

    def analyze(self, data: dict) -> AnalysisResult:
        curves = data["curves"]
        aucs = data.get("aucs", {})
        targets = self._targets(list(curves), data.get("svg_path"))

        written = []
        for label, curve in curves.items():
            svg_path = targets[label]
            self._write_csv(curve.to_frame(), svg_path.with_suffix(".csv"))

            fig, ax = self._new_figure(f"ROC: {label}", "false positive rate", "true positive rate")
            ax.plot([0, 1], [0, 1], color="gray", linestyle="--", linewidth=1)
            legend = f"AUC = {aucs[label]:.3f}" if label in aucs else label
            ax.plot(curve.fpr, curve.tpr, drawstyle="default", linewidth=2, label=legend)
            ax.set_xlim(0.0, 1.0)
            ax.set_ylim(0.0, 1.0)
            ax.legend(loc="lower right")
            written.append(self._save_svg(fig, svg_path))

        details = "\n".join(
            f"{label}: AUC {aucs[label]:.4f}" for label in curves if label in aucs
        )
        return AnalysisResult(
            analyzer_name=self.name,
            summary=f"{len(written)} ROC curves written",
            plot_path=str(written[0]) if written else None,
            details=details or None,
        )
