"""Byte-stable JSON emission for metrics reports and training histories.

Keys are sorted, accuracies and gaps are written with fixed 4-decimal
formatting, loss values with 6 decimals; identical inputs therefore always
produce identical bytes.
"""

from __future__ import annotations

from pathlib import Path

from .evaluation import MetricsReport
from .training import TrainHistory


def _fmt(value: float, decimals: int) -> str:
    text = f"{float(value):.{decimals}f}"
    return "0" + text[1:] if text.startswith("-0.") and float(text) == 0.0 else text


def _json_string(value: str) -> str:
    escaped = value.replace("\\", "\\\\").replace('"', '\\"')
    return f'"{escaped}"'


def _metrics_block(metrics: dict[str, float], decimals: int) -> str:
    inner = ", ".join(f"{_json_string(k)}: {_fmt(v, decimals)}"
                      for k, v in sorted(metrics.items()))
    return "{" + inner + "}"


def _sizes_block(sizes: dict[str, int]) -> str:
    inner = ", ".join(f"{_json_string(k)}: {int(v)}" for k, v in sorted(sizes.items()))
    return "{" + inner + "}"


def render_report(report: MetricsReport) -> str:
    fields = {
        "config_fingerprint": _json_string(report.config_fingerprint),
        "metrics": _metrics_block(report.metrics, 4),
        "run_id": _json_string(report.run_id),
        "seed": str(int(report.seed)),
        "sizes": _sizes_block(report.sizes),
    }
    inner = ",\n".join(f"  {_json_string(k)}: {v}" for k, v in sorted(fields.items()))
    return "{\n" + inner + "\n}\n"


def render_history(history: TrainHistory, run_id: str, seed: int,
                   config_fingerprint: str) -> str:
    epoch_blocks = []
    for record in history.records:
        fields = {
            "epoch": str(record.epoch),
            "loss_total": _fmt(record.loss_total, 6),
            "metrics": _metrics_block(record.metrics, 4),
            "parts": _metrics_block(record.parts, 6),
        }
        inner = ", ".join(f"{_json_string(k)}: {v}" for k, v in sorted(fields.items()))
        epoch_blocks.append("    {" + inner + "}")
    epochs = "[\n" + ",\n".join(epoch_blocks) + "\n  ]" if epoch_blocks else "[]"
    fields = {
        "config_fingerprint": _json_string(config_fingerprint),
        "epochs": epochs,
        "run_id": _json_string(run_id),
        "seed": str(int(seed)),
    }
    inner = ",\n".join(f"  {_json_string(k)}: {v}" for k, v in sorted(fields.items()))
    return "{\n" + inner + "\n}\n"


def write_report(report: MetricsReport | TrainHistory, path, run_id: str = "",
                 seed: int = 0, config_fingerprint: str = "") -> None:
    """Serialize a report or history to ``path`` as deterministic JSON."""
    if isinstance(report, MetricsReport):
        text = render_report(report)
    elif isinstance(report, TrainHistory):
        text = render_history(report, run_id, seed, config_fingerprint)
    else:
        raise TypeError(f"cannot serialize {type(report).__name__}")
    path = Path(path)
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
