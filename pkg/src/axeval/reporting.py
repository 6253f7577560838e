"""Build the metrics report from a run ledger and render it.

The JSON document is the canonical machine form; markdown and CSV renderings
carry exactly the same values. Ratio metrics are rounded to 4 decimals and
percentages / error counts to 2, and thresholds are applied here, at metric
time, from the stored raw ratings -- so reports can be regenerated under
different thresholds without touching any backend.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

from .dataset import LABELS, InferenceLabel, class_distribution
from .metrics import (
    SOURCE_P1,
    SOURCE_P3,
    STD_SAMPLE,
    ClassAccuracy,
    ConsistencyAnnotation,
    ErrorMatrix,
    HelpfulnessAnnotation,
    MetricsError,
    class_accuracy,
    consistency_score,
    consistency_summary,
    error_matrix,
    factuality_summary,
    per_class_breakdown,
)
from .orchestrator import (
    PHASE_JUDGE_CONS,
    PHASE_JUDGE_HELP,
    PHASE_P1,
    PHASE_P2,
    PHASE_P3,
    RunLedger,
)

SCHEMA_VERSION = 1

REPORT_FORMATS = ("json", "md", "csv")

_PREDICTION_FAMILIES = (("P1+P2", PHASE_P2), ("P3", PHASE_P3))


def _round4(x: float) -> float:
    x = round(x, 4)
    return 0.0 if x == 0 else x


def _round2(x: float) -> float:
    x = round(x, 2)
    return 0.0 if x == 0 else x


def build_report(
    ledger: RunLedger,
    help_threshold: int = 6,
    cons_threshold: int = 8,
    std_mode: str = STD_SAMPLE,
) -> dict:
    """Compute every derivable table family; missing phases become warnings."""
    warnings: list[str] = []
    gold = {inst.id: inst.gold_label for inst in ledger.instances}
    counts = class_distribution(ledger.instances)
    runs = ledger.runs

    exclusions: dict = {
        phase: sum(1 for rec in ledger.records(phase=phase) if not rec.ok)
        for phase in (PHASE_P1, PHASE_P2, PHASE_P3)
    }
    exclusions["judge_help"] = {}
    exclusions["judge_cons"] = {}
    exclusions["consistency_incomplete"] = {}

    fact_cons: dict = {}
    fact_cons_by_class: dict = {}
    for source in (SOURCE_P1, SOURCE_P3):
        help_records = ledger.records(phase=PHASE_JUDGE_HELP, source=source)
        cons_records = ledger.records(phase=PHASE_JUDGE_CONS, source=source)
        exclusions["judge_help"][source] = sum(1 for r in help_records if not r.ok)
        exclusions["judge_cons"][source] = sum(1 for r in cons_records if not r.ok)

        if not help_records:
            warnings.append(f"no judge annotations for source {source}; "
                            "factuality/consistency tables omitted for it")
            fact_cons[source] = None
            fact_cons_by_class[source] = None
            exclusions["consistency_incomplete"][source] = 0
            continue

        annotations = [
            HelpfulnessAnnotation.from_rating(
                rec.instance_id, source, rec.payload["rating"], help_threshold
            )
            for rec in help_records
            if rec.ok
        ]

        per_instance: dict[str, list[ConsistencyAnnotation]] = {}
        for rec in cons_records:
            if rec.ok:
                per_instance.setdefault(rec.instance_id, []).append(
                    ConsistencyAnnotation.from_rating(
                        rec.instance_id, source, rec.index, rec.payload["rating"], cons_threshold
                    )
                )
        cons_scores: dict[str, float] = {}
        incomplete = 0
        if runs >= 2:
            for instance_id in sorted(gold):
                anns = per_instance.get(instance_id, [])
                if len(anns) == runs - 1 and {a.j for a in anns} == set(range(2, runs + 1)):
                    cons_scores[instance_id] = consistency_score(anns, runs)
                elif anns or any(
                    rec.instance_id == instance_id for rec in cons_records
                ):
                    incomplete += 1
        else:
            warnings.append("single-run ledger: consistency is not applicable")
        exclusions["consistency_incomplete"][source] = incomplete

        fact = factuality_summary([a.h for a in annotations]) if annotations else None
        joined = [
            (a.h, cons_scores[a.instance_id])
            for a in annotations
            if a.instance_id in cons_scores
        ]
        cons = consistency_summary(joined) if joined else None
        fact_cons[source] = _fact_cons_json(fact, cons)

        if annotations:
            breakdown = per_class_breakdown(annotations, cons_scores, gold)
            fact_cons_by_class[source] = {
                label.value: _fact_cons_json(
                    breakdown[label].factuality, breakdown[label].consistency
                )
                for label in LABELS
            }
        else:
            fact_cons_by_class[source] = None

    prediction_errors: dict = {}
    accuracy: dict = {}
    for family, phase in _PREDICTION_FAMILIES:
        records = ledger.records(phase=phase)
        if not records:
            warnings.append(f"no {phase} records; prediction-error tables omitted for {family}")
            prediction_errors[family] = None
            accuracy[family] = None
            continue
        by_instance: dict[str, list] = {instance_id: [None] * runs for instance_id in sorted(gold)}
        complete = True
        for rec in records:
            if rec.instance_id in by_instance and 1 <= rec.index <= runs:
                value = InferenceLabel(rec.payload["label"]) if rec.ok else None
                by_instance[rec.instance_id][rec.index - 1] = ("filled", value)
        for instance_id, slots in by_instance.items():
            if any(slot is None for slot in slots):
                complete = False
                break
        if not complete:
            warnings.append(f"{phase} phase incomplete; prediction-error tables omitted for {family}")
            prediction_errors[family] = None
            accuracy[family] = None
            continue
        predictions = {
            instance_id: [value for (_, value) in slots]
            for instance_id, slots in by_instance.items()
        }
        try:
            matrix = error_matrix(gold, predictions, std_mode)
            prediction_errors[family] = _matrix_json(matrix)
        except MetricsError as exc:
            warnings.append(f"prediction-error analysis failed for {family}: {exc}")
            prediction_errors[family] = None
            accuracy[family] = None
            continue
        try:
            accuracy[family] = _accuracy_json(class_accuracy(matrix, counts))
        except MetricsError as exc:
            warnings.append(f"accuracy computation failed for {family}: {exc}")
            accuracy[family] = None

    fact_family = None if all(v is None for v in fact_cons.values()) else fact_cons
    by_class_family = (
        None if all(v is None for v in fact_cons_by_class.values()) else fact_cons_by_class
    )

    return {
        "schema_version": SCHEMA_VERSION,
        "manifest_digest": ledger.digest,
        "runs": runs,
        "instances": len(ledger.instances),
        "thresholds": {"helpfulness": help_threshold, "consistency": cons_threshold},
        "std_mode": std_mode,
        "class_counts": counts.to_json(),
        "exclusions": exclusions,
        "warnings": warnings,
        "tables": {
            "factuality_consistency": fact_family,
            "factuality_consistency_by_class": by_class_family,
            "prediction_errors": None if all(v is None for v in prediction_errors.values())
            else prediction_errors,
            "accuracy": None if all(v is None for v in accuracy.values()) else accuracy,
        },
    }


def _fact_cons_json(fact, cons) -> dict | None:
    if fact is None and cons is None:
        return None
    out: dict = {}
    if fact is not None:
        out.update(
            cr=_round4(fact.cr), wr=_round4(fact.wr), ncr=_round4(fact.ncr), n=fact.n
        )
    else:
        out.update(cr=None, wr=None, ncr=None, n=0)
    if cons is not None:
        out.update(
            c_correct=_round4(cons.c_correct),
            c_wrong=_round4(cons.c_wrong),
            nccr=_round4(cons.nccr),
            n_consistency=cons.n,
        )
        flags = []
        if cons.correct_stratum_empty:
            flags.append("empty correct stratum")
        if cons.wrong_stratum_empty:
            flags.append("empty wrong stratum")
        if flags:
            out["flags"] = flags
    else:
        out.update(c_correct=None, c_wrong=None, nccr=None, n_consistency=0)
    return out


def _matrix_json(matrix: ErrorMatrix) -> dict:
    cells = []
    for (g, p), series in matrix.cells.items():
        cells.append(
            {
                "gold": g.display,
                "predicted": p.display,
                "mean": _round2(series.mean),
                "std": _round2(series.std),
            }
        )
    excluded_total = sum(series.mean for series in matrix.excluded.values())
    return {"runs": matrix.runs, "cells": cells, "mean_excluded_per_run": _round2(excluded_total)}


def _accuracy_json(acc: ClassAccuracy) -> dict:
    return {
        "per_class": {
            label.value: {"mean": _round2(series.mean), "std": _round2(series.std)}
            for label, series in acc.per_class.items()
        },
        "overall": {"mean": _round2(acc.overall.mean), "std": _round2(acc.overall.std)},
    }


# -- rendering ---------------------------------------------------------------


def _fmt(value) -> str:
    return "n/a" if value is None else str(value)


_METRIC_ROWS = (
    ("Correct Rate (CR)", "cr"),
    ("Wrong Rate (WR)", "wr"),
    ("Net Correct Rate (NCR)", "ncr"),
    ("C_correct", "c_correct"),
    ("C_wrong", "c_wrong"),
    ("Net Consistently Correct Rate (NCCR)", "nccr"),
)


def render_markdown(report: dict) -> str:
    lines: list[str] = []
    lines.append("# Axiom evaluation report")
    lines.append("")
    lines.append(f"- instances: {report['instances']}, runs per prompt: {report['runs']}")
    lines.append(
        f"- thresholds: helpfulness >= {report['thresholds']['helpfulness']}, "
        f"similarity >= {report['thresholds']['consistency']}"
    )
    lines.append(f"- std estimator: {report['std_mode']}")
    lines.append(f"- manifest digest: `{report['manifest_digest']}`")
    counts = report["class_counts"]
    lines.append(
        f"- class counts: entailment {counts['entailment']}, contradiction "
        f"{counts['contradiction']}, neutral {counts['neutral']}, total {counts['total']}"
    )
    for warning in report["warnings"]:
        lines.append(f"- warning: {warning}")
    lines.append("")

    tables = report["tables"]
    fact = tables["factuality_consistency"]
    if fact is not None:
        lines.append("## Factuality and consistency")
        lines.append("")
        lines.append("| Metric | P1 | P3 |")
        lines.append("| --- | --- | --- |")
        for title, key in _METRIC_ROWS:
            row = [_cell(fact.get(source), key) for source in (SOURCE_P1, SOURCE_P3)]
            lines.append(f"| {title} | {row[0]} | {row[1]} |")
        lines.append("")

    by_class = tables["factuality_consistency_by_class"]
    if by_class is not None:
        lines.append("## Factuality and consistency by inference class")
        lines.append("")
        header = ["Metric"]
        for label in LABELS:
            for source in (SOURCE_P1, SOURCE_P3):
                header.append(f"{label.display} {source}")
        lines.append("| " + " | ".join(header) + " |")
        lines.append("|" + " --- |" * len(header))
        for title, key in _METRIC_ROWS:
            row = [title]
            for label in LABELS:
                for source in (SOURCE_P1, SOURCE_P3):
                    table = by_class.get(source)
                    cell = table.get(label.value) if table else None
                    row.append(_cell(cell, key))
            lines.append("| " + " | ".join(row) + " |")
        lines.append("")

    errors = tables["prediction_errors"]
    if errors is not None:
        lines.append("## Prediction error analysis")
        lines.append("")
        lines.append("| Gold label | Model prediction | P1+P2 mean | P1+P2 std | P3 mean | P3 std |")
        lines.append("| --- | --- | --- | --- | --- | --- |")
        for row in _error_rows(errors):
            lines.append("| " + " | ".join(row) + " |")
        lines.append("")

    accuracy = tables["accuracy"]
    if accuracy is not None:
        lines.append("## Prediction accuracy (percent)")
        lines.append("")
        lines.append("| Inference type | P1+P2 | P3 |")
        lines.append("| --- | --- | --- |")
        for row in _accuracy_rows(accuracy):
            lines.append(
                f"| {row[0]} | {row[1]} | {row[2]} |"
            )
        lines.append("")

    return "\n".join(lines)


def _cell(table: dict | None, key: str) -> str:
    if table is None:
        return "n/a"
    return _fmt(table.get(key))


def _error_rows(errors: dict) -> list[list[str]]:
    rows = []
    p1p2 = errors.get("P1+P2")
    p3 = errors.get("P3")
    reference = p1p2 or p3
    if reference is None:
        return rows
    for i, cell in enumerate(reference["cells"]):
        row = [cell["gold"], cell["predicted"]]
        for family in (p1p2, p3):
            if family is None:
                row.extend(["n/a", "n/a"])
            else:
                fam_cell = family["cells"][i]
                row.extend([_fmt(fam_cell["mean"]), _fmt(fam_cell["std"])])
        rows.append(row)
    return rows


def _accuracy_rows(accuracy: dict) -> list[tuple[str, str, str]]:
    def cell(family: dict | None, label_key: str | None) -> str:
        if family is None:
            return "n/a"
        entry = family["overall"] if label_key is None else family["per_class"][label_key]
        return f"{_fmt(entry['mean'])} ({_fmt(entry['std'])})"

    p1p2 = accuracy.get("P1+P2")
    p3 = accuracy.get("P3")
    rows = [
        (label.display, cell(p1p2, label.value), cell(p3, label.value)) for label in LABELS
    ]
    rows.append(("Overall", cell(p1p2, None), cell(p3, None)))
    return rows


def render_csvs(report: dict) -> dict[str, str]:
    """CSV renderings, one file per table family present in the report."""
    out: dict[str, str] = {}
    tables = report["tables"]

    fact = tables["factuality_consistency"]
    if fact is not None:
        lines = ["metric,P1,P3"]
        for title, key in _METRIC_ROWS:
            lines.append(
                f"{key},{_cell(fact.get(SOURCE_P1), key)},{_cell(fact.get(SOURCE_P3), key)}"
            )
        out["factuality_consistency.csv"] = "\n".join(lines) + "\n"

    by_class = tables["factuality_consistency_by_class"]
    if by_class is not None:
        lines = ["class,metric,P1,P3"]
        for label in LABELS:
            for title, key in _METRIC_ROWS:
                cells = []
                for source in (SOURCE_P1, SOURCE_P3):
                    table = by_class.get(source)
                    cells.append(_cell(table.get(label.value) if table else None, key))
                lines.append(f"{label.display},{key},{cells[0]},{cells[1]}")
        out["factuality_consistency_by_class.csv"] = "\n".join(lines) + "\n"

    errors = tables["prediction_errors"]
    if errors is not None:
        lines = ["gold_label,model_prediction,p1p2_mean,p1p2_std,p3_mean,p3_std"]
        for row in _error_rows(errors):
            lines.append(",".join(row))
        out["prediction_errors.csv"] = "\n".join(lines) + "\n"

    accuracy = tables["accuracy"]
    if accuracy is not None:
        lines = ["inference_type,p1p2_mean,p1p2_std,p3_mean,p3_std"]

        def pair(family, label_key):
            if family is None:
                return ["n/a", "n/a"]
            entry = family["overall"] if label_key is None else family["per_class"][label_key]
            return [_fmt(entry["mean"]), _fmt(entry["std"])]

        for label in LABELS:
            cells = pair(accuracy.get("P1+P2"), label.value) + pair(accuracy.get("P3"), label.value)
            lines.append(f"{label.display}," + ",".join(cells))
        cells = pair(accuracy.get("P1+P2"), None) + pair(accuracy.get("P3"), None)
        lines.append("Overall," + ",".join(cells))
        out["accuracy.csv"] = "\n".join(lines) + "\n"

    return out


def write_report(report: dict, out_dir: str | Path, formats: Iterable[str]) -> list[Path]:
    """Write the requested renderings; returns the paths produced."""
    formats = list(formats)
    unknown = set(formats) - set(REPORT_FORMATS)
    if unknown:
        raise ValueError(f"unknown report formats: {sorted(unknown)}")
    if not formats:
        raise ValueError("at least one output format is required")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if "json" in formats:
        path = out_dir / "report.json"
        path.write_text(
            json.dumps(report, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        written.append(path)
    if "md" in formats:
        path = out_dir / "report.md"
        path.write_text(render_markdown(report), encoding="utf-8")
        written.append(path)
    if "csv" in formats:
        for name, content in render_csvs(report).items():
            path = out_dir / name
            path.write_text(content, encoding="utf-8")
            written.append(path)
    return written
