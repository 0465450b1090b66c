"""File handling utilities for run outputs."""

import csv
import json
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence, Union

PathLike = Union[str, Path]

HYPOTHESIS_COLUMNS = ("scan", "rank", "weight", "n", "labels")


def ensure_directory(directory_path: PathLike) -> Path:
    """
    Ensure that a directory exists, creating it if necessary.

    Args:
        directory_path: The directory path to ensure exists

    Returns:
        The Path object for the directory
    """
    path = Path(directory_path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def dumps(record: Mapping[str, Any]) -> str:
    """Canonical one-line JSON: sorted keys, no optional whitespace."""
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def write_jsonl(path: PathLike, records: Iterable[Mapping[str, Any]]) -> Path:
    """
    Write one JSON object per line.

    Args:
        path: Output file
        records: JSON-serializable mappings

    Returns:
        The written path
    """
    path = Path(path)
    ensure_directory(path.parent)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(dumps(record) + "\n")
    return path


def write_json(path: PathLike, record: Mapping[str, Any]) -> Path:
    path = Path(path)
    ensure_directory(path.parent)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(record, f, sort_keys=True, indent=2)
        f.write("\n")
    return path


def write_hypothesis_table(path: PathLike, rows: Sequence[Mapping[str, Any]]) -> Path:
    """
    Write the flat (scan, rank, weight, n, labels) table used for plotting.

    Track labels of one hypothesis are joined with spaces.

    Args:
        path: Output CSV file
        rows: Mappings with the HYPOTHESIS_COLUMNS keys

    Returns:
        The written path
    """
    path = Path(path)
    ensure_directory(path.parent)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=HYPOTHESIS_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({**row, "labels": " ".join(row["labels"]), "weight": repr(float(row["weight"]))})
    return path
