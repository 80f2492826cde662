"""
CSV emission and re-parsing.

Floats are written with 17 significant digits so 64-bit values survive a
round trip. Metadata lines precede the header and start with '#'.
"""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Union

import numpy as np

Cell = Union[float, int, bool, str, None]


def format_cell(value: Cell) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_csv(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence[Cell]],
              metadata: Mapping[str, object] = None) -> Path:
    """
    Write a CSV file with '#'-prefixed metadata lines.

    Args:
        path: Output file
        header: Column names
        rows: Row values
        metadata: Key/value pairs echoed above the header

    Returns:
        The written path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        for key, value in (metadata or {}).items():
            text = str(value).replace("\n", " ")
            handle.write(f"# {key}: {text}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(v) for v in row])
    return path


@dataclass
class CsvTable:
    metadata: Dict[str, str]
    header: List[str]
    rows: List[List[str]]

    def column(self, name: str) -> np.ndarray:
        index = self.header.index(name)
        return np.array([float(row[index]) if row[index] != "" else np.nan for row in self.rows])


def read_csv(path: Union[str, Path]) -> CsvTable:
    metadata: Dict[str, str] = {}
    body: List[str] = []
    with Path(path).open(newline="", encoding="utf-8") as handle:
        for line in handle:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(":")
                metadata[key.strip()] = value.strip()
            else:
                body.append(line)
    parsed = list(csv.reader(body))
    if not parsed:
        raise ValueError(f"{path} has no header line")
    return CsvTable(metadata=metadata, header=parsed[0], rows=parsed[1:])
