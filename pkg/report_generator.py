"""
Run report generator
Builds Markdown summaries of training runs and ablation studies and renders them to HTML
"""
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import markdown
import pandas as pd

from file_manager import FileManager

HTML_TEMPLATE = """<!DOCTYPE html>
<html>
<head>
<meta charset="utf-8">
<title>{title}</title>
<style>
body {{ font-family: sans-serif; max-width: 960px; margin: 2em auto; }}
table {{ border-collapse: collapse; }}
th, td {{ border: 1px solid #ccc; padding: 4px 10px; text-align: right; }}
th {{ background: #f0f0f0; }}
</style>
</head>
<body>
{body}
</body>
</html>
"""

FEATURE_ORDER = ("surface", "mse", "ahcl")
METHOD_ORDER = ("km-z", "sc-z", "sc-y")


def _markdown_table(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    for row in rows:
        lines.append("| " + " | ".join(str(cell) for cell in row) + " |")
    return "\n".join(lines) + "\n"


def summarize_ablation(records: List[Dict[str, Any]]) -> pd.DataFrame:
    """
    Mean and standard deviation of ACC/NMI per (features, method) cell.

    Args:
        records: metric records with "features", "method", "seed", "acc" and "nmi"

    Returns:
        pd.DataFrame: one row per cell with acc_mean, acc_std, nmi_mean, nmi_std, runs
    """
    frame = pd.DataFrame(records)
    if frame.empty:
        return pd.DataFrame(columns=["features", "method", "acc_mean", "acc_std", "nmi_mean", "nmi_std", "runs"])
    summary = (frame.groupby(["features", "method"])
               .agg(acc_mean=("acc", "mean"), acc_std=("acc", lambda s: s.std(ddof=0)),
                    nmi_mean=("nmi", "mean"), nmi_std=("nmi", lambda s: s.std(ddof=0)),
                    runs=("seed", "count"))
               .reset_index())
    rank_features = {name: i for i, name in enumerate(FEATURE_ORDER)}
    rank_methods = {name: i for i, name in enumerate(METHOD_ORDER)}
    summary["_f"] = summary["features"].map(lambda v: rank_features.get(v, len(FEATURE_ORDER)))
    summary["_m"] = summary["method"].map(lambda v: rank_methods.get(v, len(METHOD_ORDER)))
    return summary.sort_values(["_f", "_m"]).drop(columns=["_f", "_m"]).reset_index(drop=True)


class ReportGenerator:
    """
    Report generator class
    Writes report.md and report.html into a run folder
    """

    def __init__(self, file_manager: Optional[FileManager] = None):
        self.file_manager = file_manager or FileManager()
        self.today_str = datetime.now().strftime('%Y-%m-%d')
        self.logger = logging.getLogger("ReportGenerator")

    def generate_run_report_content(self, name: str, config: Dict[str, Any], trace: List[Dict[str, Any]],
                                    metrics: Optional[Dict[str, float]] = None, tail: int = 10) -> str:
        """
        Args:
            name: run / dataset name
            config: RunConfig.to_dict()
            trace: per-epoch records
            metrics: optional final ACC/NMI
            tail: number of last epochs to list
        """
        md_content = f"# 📊 AHCL run: {name}\n\n<strong>Date:</strong> {self.today_str}\n\n---\n\n"

        md_content += "## ⚙️ Configuration\n\n"
        md_content += _markdown_table(["key", "value"], sorted(config.items()))

        md_content += "\n## 📉 Training trace\n\n"
        if trace:
            first, last = trace[0], trace[-1]
            md_content += (f"<strong>Epochs:</strong> {last['epoch']} &nbsp; "
                           f"<strong>Total loss:</strong> {first['total']:.6g} → {last['total']:.6g}\n\n")
            columns = ["epoch", "ahcl", "mse", "total", "lr"]
            rows = [[r["epoch"]] + [f"{r[c]:.6g}" for c in columns[1:]] for r in trace[-tail:]]
            md_content += _markdown_table(columns, rows)
        else:
            md_content += "No epochs were run.\n"

        if metrics:
            md_content += "\n## 🎯 Clustering metrics\n\n"
            md_content += _markdown_table(["metric", "value"], [(k.upper(), f"{v:.4f}") for k, v in metrics.items()])
        return md_content

    def generate_ablation_report_content(self, name: str, records: List[Dict[str, Any]],
                                         config: Optional[Dict[str, Any]] = None) -> str:
        summary = summarize_ablation(records)
        seeds = sorted({r["seed"] for r in records})
        md_content = f"# 🧪 Ablation: {name}\n\n<strong>Date:</strong> {self.today_str}\n\n"
        md_content += f"<strong>Seeds:</strong> {', '.join(str(s) for s in seeds) or 'none'}\n\n---\n\n"
        md_content += "## 📋 ACC / NMI (mean ± std)\n\n"
        rows = [(row.features, row.method,
                 f"{100 * row.acc_mean:.2f} ± {100 * row.acc_std:.2f}",
                 f"{100 * row.nmi_mean:.2f} ± {100 * row.nmi_std:.2f}",
                 row.runs)
                for row in summary.itertuples()]
        md_content += _markdown_table(["features", "method", "ACC (%)", "NMI (%)", "runs"], rows)
        if config:
            md_content += "\n## ⚙️ Configuration\n\n"
            md_content += _markdown_table(["key", "value"], sorted(config.items()))
        return md_content

    def to_html(self, md_content: str, title: str) -> str:
        body = markdown.markdown(md_content, extensions=["tables"])
        return HTML_TEMPLATE.format(title=title, body=body)

    def save_report(self, run_dir: Path, md_content: str, title: str, stem: str = "report") -> Dict[str, str]:
        """
        Returns:
            Dict: {"markdown": path, "html": path}
        """
        run_dir = Path(run_dir)
        md_path = self.file_manager.write_text(run_dir / f"{stem}.md", md_content)
        html_path = self.file_manager.write_text(run_dir / f"{stem}.html", self.to_html(md_content, title))
        self.logger.info(f"✅ report saved: {md_path}")
        return {"markdown": str(md_path), "html": str(html_path)}
