import csv
import math
from pathlib import Path
from typing import Iterable, Sequence, Union

from app.models.pnp import SWEEP_HEADER, TRACE_HEADER, SweepRow, TraceEntry

RESULTS_HEADER = ["image", "psnr_input", "psnr_restored"]


def write_csv(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence[str]]) -> Path:
    """Comma-separated, header row, LF line endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def format_db(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.6f}"


def write_sweep(path: Union[str, Path], rows: Sequence[SweepRow]) -> Path:
    return write_csv(path, SWEEP_HEADER, (r.csv_row() for r in rows))


def write_trace(path: Union[str, Path], trace: Sequence[TraceEntry]) -> Path:
    return write_csv(path, TRACE_HEADER, (t.csv_row() for t in trace))


def write_results(path: Union[str, Path], names: Sequence[str], psnr_input: Sequence[float], psnr_restored: Sequence[float]) -> Path:
    rows = [[n, format_db(a), format_db(b)] for n, a, b in zip(names, psnr_input, psnr_restored)]
    if names:
        rows.append(["mean", format_db(sum(psnr_input) / len(names)), format_db(sum(psnr_restored) / len(names))])
    return write_csv(path, RESULTS_HEADER, rows)
