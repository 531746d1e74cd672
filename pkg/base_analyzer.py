from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd

# 640x480 viewBox at matplotlib's 72 units per inch
FIGSIZE = (640 / 72, 480 / 72)
# fixed id salt plus no Date metadata keeps re-rendered SVGs byte-identical
matplotlib.rcParams["svg.hashsalt"] = "thorax-cnn"


@dataclass
class AnalysisResult:
    analyzer_name: str
    summary: str
    plot_path: Optional[str] = None
    details: Optional[str] = None


class BaseAnalyzer(ABC):
    """
    Base class for report/plot plugins.

    `handles` names the artifact an analyzer consumes ("pca", "roc",
    "demographics", "history"); main.py routes each artifact to every
    loaded analyzer that handles it. Outputs land in `output_dir`.
    """

    handles: str = ""

    def __init__(self, output_dir: Union[str, Path] = "/tmp"):
        self.output_dir = Path(output_dir)

    @property
    @abstractmethod
    def name(self) -> str:
        """Return analyzer name for reporting"""
        pass

    @abstractmethod
    def analyze(self, data: dict) -> AnalysisResult:
        """Produce reports for one artifact; keys of `data` are analyzer-specific"""
        pass

    def _path(self, filename: Union[str, Path]) -> Path:
        path = Path(filename)
        if not path.is_absolute():
            path = self.output_dir / path
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def _write_csv(self, df: pd.DataFrame, filename: Union[str, Path]) -> Path:
        path = self._path(filename)
        df.to_csv(path, index=False)
        return path

    def _write_text(self, text: str, filename: Union[str, Path]) -> Path:
        path = self._path(filename)
        path.write_text(text)
        return path

    def _new_figure(self, title: str, xlabel: str, ylabel: str):
        fig, ax = plt.subplots(figsize=FIGSIZE)
        ax.set_title(title)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.grid(True, alpha=0.3)
        return fig, ax

    def _save_svg(self, fig, filename: Union[str, Path]) -> Path:
        path = self._path(filename)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        return path
