import sys
import os

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from base_analyzer import BaseAnalyzer, AnalysisResult
from dataset import summarize_demographics


class DemographicsAnalyzer(BaseAnalyzer):
    """Label, age, sex and view-position tallies as text and CSV (no plot)"""

    handles = "demographics"

    @property
    def name(self) -> str:
        return "Patient Demographics"

    def analyze(self, data: dict) -> AnalysisResult:
        summary = summarize_demographics(data["manifest"])
        text_path = self._write_text(summary.to_text(), "demographics.txt")
        self._write_csv(summary.to_frame(), "demographics.csv")

        sexes = ", ".join(f"{k}={v}" for k, v in summary.sex_counts.items())
        return AnalysisResult(
            analyzer_name=self.name,
            summary=f"{summary.total} images; sex {sexes}",
            details=f"report: {text_path}",
        )
