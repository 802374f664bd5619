"""
bias_report.py
──────────────
Bench run files in, tables out.

▪ JSON with stable keys category / score / count / effect_size / epsilon
▪ Markdown: one table per task, effect sizes as (↓ .14) / (↑ .29)
▪ Excel: one sheet per task, styled header, frozen panes, zebra rows
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

import pandas as pd
from openpyxl import load_workbook
from openpyxl.styles import Alignment, Font, PatternFill

from bias_bench import (
    AVERAGE_ROW,
    CROWS,
    INTERSENTENCE,
    INTRASENTENCE,
    BenchmarkError,
    BenchRun,
    StereotypeReport,
    reports_for_runs,
)

logger = logging.getLogger(__name__)

# =============================================================================
# CONFIG & CONSTANTS
# =============================================================================

REPORT_FORMATS = ("json", "md", "xlsx")

TASK_TITLES = {
    INTRASENTENCE: "StereoSet intrasentence",
    INTERSENTENCE: "StereoSet intersentence",
    CROWS: "CrowS-Pairs",
}

HEADER_FILL = "4F81BD"
STRIPE_FILL = "F2F2F2"

ReportSet = Mapping[str, Sequence[StereotypeReport]]


# =============================================================================
# RUN FILES
# =============================================================================

def write_run(run: BenchRun, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(run.to_dict(), f, indent=2)
    logger.info("[BENCH] run eps=%s written to %s", run.epsilon, path)


def load_run(path: Union[str, Path]) -> BenchRun:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise BenchmarkError(f"{path.name}: invalid JSON ({e})")
    return BenchRun.from_dict(doc)


def load_runs(paths: Sequence[Union[str, Path]]) -> List[BenchRun]:
    """Runs sharing an ε label (seed repeats) are told apart as '<eps>/seed=<n>'."""
    runs = [load_run(p) for p in paths]
    labels = [r.epsilon for r in runs]
    for r in runs:
        if labels.count(r.epsilon) > 1:
            if r.seed is None:
                raise BenchmarkError(f"several runs labelled eps={r.epsilon} and one has no seed")
            r.epsilon = f"{r.epsilon}/seed={r.seed}"
    if len({r.epsilon for r in runs}) != len(runs):
        raise BenchmarkError("duplicate run labels after adding seeds")
    return runs


# =============================================================================
# FORMATTING
# =============================================================================

def _short(x: float, places: int) -> str:
    s = f"{x:.{places}f}"
    if s.startswith("0."):
        return s[1:]
    if s.startswith("-0."):
        return "-" + s[2:]
    return s


def format_score(p: float) -> str:
    return _short(p, 4)


def format_effect(d: Optional[float]) -> str:
    """-0.143 → '↓ .14'; zero reads '↑ .00'."""
    if d is None:
        return ""
    arrow = "↓" if d < 0 else "↑"
    return f"{arrow} {_short(abs(d), 2)}"


def _cell(score: float, effect: Optional[float]) -> str:
    if effect is None:
        return format_score(score)
    return f"{format_score(score)} ({format_effect(effect)})"


# =============================================================================
# JSON / FRAMES / MARKDOWN
# =============================================================================

def reports_to_json(reports: ReportSet, runs: Sequence[BenchRun] = ()) -> Dict:
    doc: Dict = {task: [r.to_dict() for r in reps] for task, reps in reports.items()}
    ppl = {r.epsilon: r.pseudo_perplexity for r in runs if r.pseudo_perplexity is not None}
    if ppl:
        doc["pseudo_perplexity"] = ppl
    return doc


def report_frame(reports: Sequence[StereotypeReport]) -> pd.DataFrame:
    """Categories down, one score column and one effect-size column per run."""
    categories: List[str] = []
    for rep in reports:
        categories += [r.category for r in rep.rows if r.category not in categories]
    data: Dict[str, List] = {"Category": [c.capitalize() for c in categories] + [AVERAGE_ROW.capitalize()]}
    for rep in reports:
        rows = {r.category: r for r in rep.rows}
        data[f"eps={rep.epsilon}"] = [rows[c].score if c in rows else None for c in categories] + [rep.average]
        if rep.epsilon != rep.baseline:
            data[f"d eps={rep.epsilon}"] = (
                [rows[c].effect_size if c in rows else None for c in categories] + [rep.average_effect_size]
            )
    return pd.DataFrame(data)


def reports_to_markdown(reports: ReportSet, runs: Sequence[BenchRun] = ()) -> str:
    out: List[str] = []
    for task, reps in reports.items():
        categories: List[str] = []
        for rep in reps:
            categories += [r.category for r in rep.rows if r.category not in categories]
        out.append(f"### {TASK_TITLES.get(task, task)}")
        out.append("")
        out.append("| Epsilon | " + " | ".join(rep.epsilon for rep in reps) + " |")
        out.append("|---|" + "---|" * len(reps))
        for c in categories:
            cells = []
            for rep in reps:
                rows = {r.category: r for r in rep.rows}
                cells.append(_cell(rows[c].score, rows[c].effect_size) if c in rows else "")
            out.append(f"| {c.capitalize()} | " + " | ".join(cells) + " |")
        out.append("| Average | " + " | ".join(_cell(rep.average, rep.average_effect_size) for rep in reps) + " |")
        out.append("")

    ppl = [(r.epsilon, r.pseudo_perplexity) for r in runs if r.pseudo_perplexity is not None]
    if ppl:
        out.append("### Pseudo-perplexity")
        out.append("")
        out.append("| Epsilon | " + " | ".join(e for e, _ in ppl) + " |")
        out.append("|---|" + "---|" * len(ppl))
        out.append("| PPPL | " + " | ".join(f"{v:.2f}" for _, v in ppl) + " |")
        out.append("")
    return "\n".join(out)


# =============================================================================
# EXCEL
# =============================================================================

def format_excel_file(filename: Union[str, Path]) -> None:
    """Header style, frozen header row, zebra rows, widths and number formats on every sheet."""
    wb = load_workbook(filename)
    header_font = Font(bold=True, color="FFFFFF")
    header_fill = PatternFill(start_color=HEADER_FILL, end_color=HEADER_FILL, fill_type="solid")
    stripe_fill = PatternFill(start_color=STRIPE_FILL, end_color=STRIPE_FILL, fill_type="solid")

    for ws in wb.worksheets:
        ws.freeze_panes = "A2"
        for cell in ws[1]:
            cell.font = header_font
            cell.fill = header_fill
            cell.alignment = Alignment(horizontal="center", vertical="center")

        for col_cells in ws.columns:
            header = str(col_cells[0].value or "")
            max_length = 0
            for cell in col_cells:
                if cell.row >= 2 and cell.row % 2 == 0:
                    cell.fill = stripe_fill
                if cell.value is not None:
                    max_length = max(max_length, len(str(cell.value)))
                if cell.row >= 2 and isinstance(cell.value, float):
                    cell.number_format = "+0.00;-0.00;0.00" if header.startswith("d ") else "0.0000"
                    cell.alignment = Alignment(horizontal="right")
            ws.column_dimensions[col_cells[0].column_letter].width = max_length + 2

        last = ws.max_row
        if ws.cell(row=last, column=1).value == AVERAGE_ROW.capitalize():
            for cell in ws[last]:
                cell.font = Font(bold=True)

    wb.save(filename)


def write_excel(reports: ReportSet, path: Union[str, Path], runs: Sequence[BenchRun] = ()) -> None:
    path = Path(path)
    with pd.ExcelWriter(path, engine="openpyxl") as writer:
        for task, reps in reports.items():
            report_frame(reps).to_excel(writer, sheet_name=TASK_TITLES.get(task, task)[:31], index=False)
        ppl = [(r.epsilon, r.pseudo_perplexity) for r in runs if r.pseudo_perplexity is not None]
        if ppl:
            pd.DataFrame(ppl, columns=["Epsilon", "Pseudo-perplexity"]).to_excel(
                writer, sheet_name="Pseudo-perplexity", index=False)
    format_excel_file(path)


# =============================================================================
# ENTRY
# =============================================================================

def write_report(runs: Sequence[BenchRun], baseline: str, out_path: Union[str, Path],
                 fmt: str = "json") -> ReportSet:
    if fmt not in REPORT_FORMATS:
        raise ValueError(f"unknown report format {fmt!r}; expected one of {REPORT_FORMATS}")
    if baseline not in [r.epsilon for r in runs]:
        raise BenchmarkError(f"baseline {baseline!r} not among runs {[r.epsilon for r in runs]}")
    reports = reports_for_runs(runs, baseline)

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        with open(out_path, "w", encoding="utf-8") as f:
            json.dump(reports_to_json(reports, runs), f, indent=2, ensure_ascii=False)
    elif fmt == "md":
        out_path.write_text(reports_to_markdown(reports, runs), encoding="utf-8")
    else:
        write_excel(reports, out_path, runs)
    logger.info("[REPORT] %s report written to %s", fmt, out_path)
    return reports
