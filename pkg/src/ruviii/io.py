"""Plain-text file formats.

* matrix TSV: header row of variable ids (first cell is a corner label),
  then one row per assay, assay id first. Values use 17 significant
  digits so a read/write cycle is lossless.
* mapping CSV: header ``assay_id,sample_id``.
* controls: one variable id per line; blank lines and ``#`` comments skipped.
* annotation CSV: header ``assay_id,biology,unwanted``.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .model import AssayMatrix, ControlMask, MappingMatrix, build_mapping

__all__ = [
    "ParseError",
    "read_matrix",
    "write_matrix",
    "read_mapping",
    "write_mapping",
    "read_controls",
    "read_annotation",
    "write_json",
    "write_csv",
]


class ParseError(ValidationError):
    def __init__(self, path, line, message, column=None):
        where = f"{path}:{line}" + (f":{column}" if column is not None else "")
        self.path, self.line, self.column = str(path), line, column
        super().__init__(f"{where}: {message}")


def _fmt(v):
    return format(float(v), ".17g")


def write_matrix(path, values, row_ids, col_ids, corner="assay_id"):
    values = np.asarray(values, dtype=float)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join([corner, *col_ids]) + "\n")
        for rid, row in zip(row_ids, values):
            fh.write(rid + "\t" + "\t".join(map(_fmt, row.tolist())) + "\n")


def read_matrix(path) -> AssayMatrix:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\r\n")
        if not header:
            raise ParseError(path, 1, "empty file")
        variable_ids = header.split("\t")[1:]
        n = len(variable_ids)
        ids, rows = [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\r\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != n + 1:
                raise ParseError(path, lineno, f"expected {n + 1} fields, found {len(fields)}")
            try:
                rows.append(np.array(fields[1:], dtype=float))
            except ValueError:
                for col, tok in enumerate(fields[1:], start=2):
                    try:
                        float(tok)
                    except ValueError:
                        raise ParseError(path, lineno, f"not a number: {tok!r}", col) from None
                raise
            ids.append(fields[0])
    if not rows:
        raise ParseError(path, 2, "no data rows")
    return AssayMatrix(np.vstack(rows), ids, variable_ids)


def _read_csv(path, expected):
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(path, 1, "empty file") from None
        missing = [c for c in expected if c not in header]
        if missing:
            raise ParseError(path, 1, f"missing columns {missing}; header is {header}")
        pos = [header.index(c) for c in expected]
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not x.strip() for x in row):
                continue
            if len(row) != len(header):
                raise ParseError(path, lineno, f"expected {len(header)} fields, found {len(row)}")
            out.append(tuple(row[p].strip() for p in pos))
    return out


def read_mapping(path, assay_ids=None) -> MappingMatrix:
    """Read the mapping; if ``assay_ids`` is given, reorder rows to match."""
    pairs = _read_csv(path, ("assay_id", "sample_id"))
    if assay_ids is not None:
        lookup = dict(pairs)
        missing = [a for a in assay_ids if a not in lookup]
        extra = sorted(set(lookup) - set(assay_ids))
        problems = []
        if missing:
            problems.append(f"assays without a sample in {path}: {', '.join(missing[:20])}")
        if extra:
            problems.append(f"mapping names unknown assays: {', '.join(extra[:20])}")
        if len(lookup) != len(pairs):
            problems.append(f"duplicate assay ids in {path}")
        if problems:
            raise ValidationError(problems)
        pairs = [(a, lookup[a]) for a in assay_ids]
    return build_mapping(pairs)


def write_mapping(path, mapping: MappingMatrix):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["assay_id", "sample_id"])
        w.writerows(mapping.pairs())


def read_control_ids(path):
    ids = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                ids.append(line)
    if not ids:
        raise ParseError(path, 1, "no control ids")
    return ids


def read_controls(path, variable_ids) -> ControlMask:
    return ControlMask.from_ids(variable_ids, read_control_ids(path))


def read_annotation(path, assay_ids):
    """Return ``(biology, unwanted)`` label lists aligned with ``assay_ids``.

    Assays missing from the annotation get ``None`` labels and are left
    out of every pseudo-sample.
    """
    rows = _read_csv(path, ("assay_id", "biology", "unwanted"))
    lookup = {a: (b, u) for a, b, u in rows}
    unknown = sorted(set(lookup) - set(assay_ids))
    if unknown:
        raise ValidationError(f"annotation names unknown assays: {', '.join(unknown[:20])}")
    bio = [lookup.get(a, (None, None))[0] for a in assay_ids]
    unw = [lookup.get(a, (None, None))[1] for a in assay_ids]
    return bio, unw


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
