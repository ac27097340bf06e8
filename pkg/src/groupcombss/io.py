"""CSV ingestion and JSON/CSV serialization of fits, paths and reports."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from . import __version__
from .design import GroupedDesign
from .errors import IngestionError
from .optimizer import CombssResult
from .path import PathPoint, SolutionPath
from .simulate import METRIC_NAMES, REFERENCE_TABLE, MetricsReport

SCHEMA_VERSION = 1


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# --------------------------------------------------------------------------
# ingestion
# --------------------------------------------------------------------------

def _is_number(s: str) -> bool:
    try:
        float(s)
    except (TypeError, ValueError):
        return False
    return True


def _read_table(path, what: str) -> tuple[pd.DataFrame, list[str] | None]:
    """Read a CSV as strings; a first row with any non-numeric cell is a header."""
    try:
        raw = pd.read_csv(path, header=None, dtype=str, keep_default_na=False,
                          skip_blank_lines=True)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise IngestionError(f"cannot read {what} file {path}: {exc}") from exc
    if raw.empty:
        raise IngestionError(f"{what} file {path} is empty")
    first = [c.strip() for c in raw.iloc[0]]
    header = None
    if not all(_is_number(c) for c in first):
        header = first
        raw = raw.iloc[1:].reset_index(drop=True)
    return raw, header


def _to_numeric(raw: pd.DataFrame, what: str, header_rows: int) -> NDArray:
    out = np.empty(raw.shape, dtype=float)
    for j in range(raw.shape[1]):
        col = raw.iloc[:, j].str.strip()
        for i, cell in enumerate(col):
            try:
                v = float(cell)
            except ValueError:
                raise IngestionError(
                    f"{what}: non-numeric cell {cell!r} at row {i + 1 + header_rows}, "
                    f"column {j + 1}"
                ) from None
            if not math.isfinite(v):
                raise IngestionError(
                    f"{what}: non-finite value at row {i + 1 + header_rows}, column {j + 1}"
                )
            out[i, j] = v
    return out


@dataclass
class IngestedData:
    design: GroupedDesign
    column_names: list[str]
    column_order: list[int]
    group_labels: list[str]
    response_name: str
    standardized: bool
    x_center: list[float] = field(default_factory=list)
    x_scale: list[float] = field(default_factory=list)
    y_mean: float = 0.0
    input_hashes: dict = field(default_factory=dict)

    def manifest_entry(self) -> dict:
        return {
            "column_order": self.column_order,
            "column_names": self.column_names,
            "group_labels": self.group_labels,
            "group_sizes": list(self.design.group_sizes),
            "response_name": self.response_name,
            "standardized": self.standardized,
            "y_mean": self.y_mean,
            "input_hashes": self.input_hashes,
        }


def _group_key(label: str):
    return (0, float(label), "") if _is_number(label) else (1, 0.0, label)


def read_groups(groups_csv, column_names: list[str]) -> tuple[list[int], list[str], list[int]]:
    """Parse a groups file into ``(column_order, group_labels, group_sizes)``.

    Two accepted layouts: one column of group sizes in column order, or two
    columns mapping each design column (header name or 0-based index) to a
    group id.  Numeric group ids are ordered numerically, others by first
    appearance; columns keep their relative order inside a group.
    """
    raw, header = _read_table(groups_csv, "groups")
    if header and len(header) == 2 and header[0] in column_names:
        # a leading "name,group" row is data, not a header
        raw = pd.concat([pd.DataFrame([header]), raw], ignore_index=True)
        header = None
    offset = 1 if header else 0
    p = len(column_names)
    if raw.shape[1] == 1:
        sizes = []
        for i, cell in enumerate(raw.iloc[:, 0].str.strip()):
            if not cell.isdigit() or int(cell) < 1:
                raise IngestionError(
                    f"groups: size {cell!r} at row {i + 1 + offset} is not a positive integer"
                )
            sizes.append(int(cell))
        if sum(sizes) != p:
            raise IngestionError(f"groups: sizes sum to {sum(sizes)} but design has {p} columns")
        labels = [str(j + 1) for j in range(len(sizes))]
        return list(range(p)), labels, sizes

    if raw.shape[1] != 2:
        raise IngestionError("groups file must have one column (sizes) or two (column, group)")
    name_to_idx = {name: i for i, name in enumerate(column_names)}
    assign: dict[int, str] = {}
    for i, (col, grp) in enumerate(zip(raw.iloc[:, 0].str.strip(), raw.iloc[:, 1].str.strip())):
        row = i + 1 + offset
        if col in name_to_idx:
            idx = name_to_idx[col]
        elif col.isdigit() and int(col) < p:
            idx = int(col)
        else:
            raise IngestionError(f"groups: unknown design column {col!r} at row {row}")
        if idx in assign:
            raise IngestionError(f"groups: column {col!r} assigned twice (row {row})")
        if grp == "":
            raise IngestionError(f"groups: empty group id at row {row}")
        assign[idx] = grp
    missing = [column_names[j] for j in range(p) if j not in assign]
    if missing:
        raise IngestionError(f"groups: columns without a group: {', '.join(missing[:10])}")

    seen: list[str] = []
    for j in range(p):
        if assign[j] not in seen:
            seen.append(assign[j])
    if all(_is_number(g) for g in seen):
        seen.sort(key=_group_key)
    order = []
    sizes = []
    for g in seen:
        cols = [j for j in range(p) if assign[j] == g]
        order.extend(cols)
        sizes.append(len(cols))
    return order, seen, sizes


def ingest(design_csv, response_csv, groups_file, standardize: bool = False,
           gram_mode: str = "auto") -> IngestedData:
    """Load a grouped regression problem from CSV files.

    The response is centered.  With ``standardize`` the design columns are
    centered and scaled to unit sample variance.  Columns are permuted once
    so every group occupies a contiguous block; ``column_order[k]`` is the
    original index of the k-th column of the stored design.
    """
    raw_x, header = _read_table(design_csv, "design")
    X = _to_numeric(raw_x, "design", 1 if header else 0)
    n, p = X.shape
    names = header if header else [str(j) for j in range(p)]
    if len(names) != p:
        raise IngestionError("design header length does not match the number of columns")

    raw_y, yheader = _read_table(response_csv, "response")
    if raw_y.shape[1] != 1:
        raise IngestionError(f"response file must have one column, found {raw_y.shape[1]}")
    y = _to_numeric(raw_y, "response", 1 if yheader else 0)[:, 0]
    if y.shape[0] != n:
        raise IngestionError(f"response has {y.shape[0]} rows but design has {n}")

    order, labels, sizes = read_groups(groups_file, names)
    X = X[:, order]
    center, scale = [], []
    if standardize:
        mu = X.mean(axis=0)
        sd = X.std(axis=0, ddof=1) if n > 1 else np.zeros(p)
        bad = np.flatnonzero(~(sd > 0))
        if bad.size:
            raise IngestionError(
                f"design column {names[order[bad[0]]]!r} has zero variance; "
                "cannot standardize"
            )
        X = (X - mu) / sd
        center, scale = mu.tolist(), sd.tolist()
    y_mean = float(y.mean())
    y = y - y_mean
    design = GroupedDesign(X, y, tuple(sizes), gram_mode=gram_mode)
    return IngestedData(
        design=design,
        column_names=[names[j] for j in order],
        column_order=list(order),
        group_labels=labels,
        response_name=yheader[0] if yheader else "y",
        standardized=standardize,
        x_center=center,
        x_scale=scale,
        y_mean=y_mean,
        input_hashes={
            "design": file_sha256(design_csv),
            "response": file_sha256(response_csv),
            "groups": file_sha256(groups_file),
        },
    )


def restore_column_order(values: NDArray, column_order: list[int]) -> NDArray:
    """Map a vector over stored (grouped) columns back to the original order."""
    out = np.empty_like(np.asarray(values))
    out[np.asarray(column_order)] = values
    return out


# --------------------------------------------------------------------------
# JSON encoding
# --------------------------------------------------------------------------

def _arr(a) -> list | None:
    if a is None:
        return None
    return [None if (isinstance(x, float) and math.isnan(x)) else x
            for x in np.asarray(a).tolist()]


def _unarr(v, dtype=float) -> NDArray | None:
    if v is None:
        return None
    return np.array([np.nan if x is None else x for x in v], dtype=dtype)


def result_to_dict(res: CombssResult) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "combss_result",
        "lambda": res.lam,
        "gamma": res.gamma,
        "tau": res.tau,
        "selection": _arr(res.selection),
        "t_final": _arr(res.t_final),
        "w_final": _arr(res.w_final),
        "refit_coefficients": _arr(res.refit_coefficients),
        "refit_error": res.refit_error,
        "iterations_used": res.iterations_used,
        "converged": res.converged,
        "objective_trace": list(res.objective_trace),
    }


def point_to_dict(pt: PathPoint) -> dict:
    return {
        "lambda": pt.lam,
        "selection": _arr(pt.selection),
        "t_final": _arr(pt.t_final),
        "w_final": _arr(pt.w_final),
        "refit_coefficients": _arr(pt.refit_coefficients),
        "train_mse": pt.train_mse,
        "validation_risk": pt.validation_risk,
        "iterations_used": pt.iterations_used,
        "converged": pt.converged,
        "error": pt.error,
    }


def point_from_dict(d: dict) -> PathPoint:
    return PathPoint(
        lam=d["lambda"],
        selection=_unarr(d["selection"], int),
        t_final=_unarr(d["t_final"]),
        w_final=_unarr(d["w_final"]),
        refit_coefficients=_unarr(d["refit_coefficients"]),
        train_mse=d["train_mse"],
        iterations_used=d["iterations_used"],
        converged=d["converged"],
        validation_risk=d["validation_risk"],
        error=d["error"],
    )


def path_to_dict(path: SolutionPath) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "solution_path",
        "metadata": path.metadata,
        "points": [point_to_dict(pt) for pt in path.points],
    }


def path_from_dict(d: dict) -> SolutionPath:
    if d.get("schema_version") != SCHEMA_VERSION or d.get("kind") != "solution_path":
        raise IngestionError("not a solution path document of a supported schema version")
    return SolutionPath([point_from_dict(p) for p in d["points"]], d["metadata"])


def write_json(obj: dict, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, allow_nan=False) + "\n", encoding="utf-8")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def save_path(path: SolutionPath, out) -> None:
    write_json(path_to_dict(path), out)


def load_path(src) -> SolutionPath:
    return path_from_dict(read_json(src))


def paths_equal(a: SolutionPath, b: SolutionPath) -> bool:
    if a.metadata != b.metadata or len(a.points) != len(b.points):
        return False
    for pa, pb in zip(a.points, b.points):
        for name in ("lam", "train_mse", "validation_risk", "iterations_used", "converged",
                     "error"):
            if getattr(pa, name) != getattr(pb, name):
                return False
        for name in ("selection", "t_final", "w_final", "refit_coefficients"):
            u, v = getattr(pa, name), getattr(pb, name)
            if (u is None) != (v is None):
                return False
            if u is not None and not np.array_equal(u, v, equal_nan=True):
                return False
    return True


# --------------------------------------------------------------------------
# CSV tables
# --------------------------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(rows: list[list], header: list[str], out) -> None:
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


PATH_CSV_HEADER = ["lambda", "group_id", "t_value", "selected", "coef_norm"]


def path_long_rows(path: SolutionPath, group_labels: list[str] | None = None,
                   group_sizes: list[int] | None = None) -> list[list]:
    """One row per (lambda, group): activation, selection flag and refit norm."""
    sizes = group_sizes or path.metadata.get("design", {}).get("group_sizes")
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int)
    rows = []
    for pt in path.points:
        coef = pt.refit_coefficients
        norms = (np.sqrt(np.add.reduceat(coef * coef, offsets)) if coef is not None
                 else [None] * len(sizes))
        for j in range(len(sizes)):
            label = group_labels[j] if group_labels else str(j + 1)
            t_val = pt.t_final[j]
            rows.append([pt.lam, label, None if math.isnan(t_val) else float(t_val),
                         int(pt.selection[j]), norms[j]])
    return rows


def write_path_csv(path: SolutionPath, out, group_labels=None) -> None:
    write_csv(path_long_rows(path, group_labels), PATH_CSV_HEADER, out)


REPORT_HEADER = ["method", "setting", "snr", "source", "replicates"] + [
    f"{m}_{stat}" for m in METRIC_NAMES for stat in ("mean", "se")
]


def report_rows(report: MetricsReport, setting_label, snr: float,
                include_reference: bool = True) -> list[list]:
    summary = report.summary()
    row = ["Group COMBSS", str(setting_label), snr, "computed", summary["replicates"]]
    for m in METRIC_NAMES:
        row += [summary[m]["mean"], summary[m]["se"]]
    rows = [row]
    key = (setting_label, int(snr)) if float(snr).is_integer() else None
    if include_reference and key in REFERENCE_TABLE:
        for method, vals in REFERENCE_TABLE[key].items():
            ref = [method, str(setting_label), snr, "published", 50]
            for mean, se in vals:
                ref += [mean, se]
            rows.append(ref)
    return rows


REPLICATE_HEADER = ["replicate", "tp", "fp", "tn", "fn", "precision", "recall", "mcc", "risk"]


def replicate_rows(report: MetricsReport) -> list[list]:
    return [[i, m.tp, m.fp, m.tn, m.fn, m.precision, m.recall, m.mcc, m.risk]
            for i, m in enumerate(report.per_replicate)]


def report_to_dict(report: MetricsReport) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "metrics_report",
        "setting": report.setting,
        "config": report.config,
        "summary": _nan_to_none(report.summary()),
        "failures": report.failures,
        "per_replicate": [
            {"tp": m.tp, "fp": m.fp, "tn": m.tn, "fn": m.fn, "precision": m.precision,
             "recall": m.recall, "mcc": m.mcc, "risk": m.risk}
            for m in report.per_replicate
        ],
    }


def _nan_to_none(obj):
    if isinstance(obj, dict):
        return {k: _nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, float) and math.isnan(obj):
        return None
    return obj


def report_from_dict(d: dict) -> MetricsReport:
    from .simulate import SelectionMetrics

    if d.get("schema_version") != SCHEMA_VERSION or d.get("kind") != "metrics_report":
        raise IngestionError("not a metrics report document of a supported schema version")
    return MetricsReport(
        per_replicate=[SelectionMetrics(**m) for m in d["per_replicate"]],
        failures=d["failures"],
        setting=d["setting"],
        config=d["config"],
    )


def make_manifest(command: str, config: dict, input_hashes: dict | None = None,
                  timings: dict | None = None, outputs: dict | None = None) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "run_manifest",
        "command": command,
        "config": config,
        "input_hashes": input_hashes or {},
        "library_version": __version__,
        "timings_seconds": timings or {},
        "outputs": outputs or {},
    }
