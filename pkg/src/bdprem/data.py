"""Long-format dataset handling.

The on-disk format is a CSV with columns subject id, time, reported count,
then covariates; a schema names which covariate columns feed the mean model
(split into time-fixed and time-varying blocks), the random-effect design,
and the reporting-rate model.  Missing visits are simply absent rows; no
imputation happens anywhere.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

__all__ = ["ValidationError", "DataSchema", "Dataset", "load_dataset", "write_dataset"]


class ValidationError(ValueError):
    """Bad user input: malformed files, inconsistent configuration."""


@dataclass
class DataSchema:
    subject: str = "subject_id"
    time: str = "time"
    y: str = "y"
    alpha_fixed: list = field(default_factory=list)
    alpha_varying: list = field(default_factory=list)
    h: list = field(default_factory=lambda: ["Intercept"])
    w: list = field(default_factory=list)

    def __post_init__(self):
        overlap = set(self.alpha_fixed) & set(self.alpha_varying)
        if overlap:
            raise ValidationError(f"columns in both alpha blocks: {sorted(overlap)}")
        if not self.alpha_fixed and not self.alpha_varying:
            raise ValidationError("schema declares no mean-model covariates")

    @property
    def x_names(self):
        return list(self.alpha_fixed) + list(self.alpha_varying)

    @property
    def covariate_names(self):
        """All covariate columns, in canonical write order."""
        seen, out = set(), []
        for name in self.x_names + list(self.h) + list(self.w):
            if name not in seen:
                seen.add(name)
                out.append(name)
        return out


@dataclass
class Dataset:
    """Observations sorted by (subject, time), with design matrices for the
    mean (X), random-effect (H) and rate (W) predictors."""

    subject_ids: list
    subject_index: np.ndarray
    times: np.ndarray
    y: np.ndarray
    X: np.ndarray
    H: np.ndarray
    W: np.ndarray
    schema: DataSchema
    z_true: np.ndarray | None = None

    def __post_init__(self):
        self.subject_index = np.asarray(self.subject_index, dtype=np.int64)
        self.times = np.asarray(self.times, dtype=float)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.W = np.atleast_2d(np.asarray(self.W, dtype=float))
        if np.any(self.y < 0):
            raise ValidationError("reported counts must be non-negative")
        order = np.lexsort((self.times, self.subject_index))
        if not np.array_equal(order, np.arange(self.N)):
            raise ValidationError("rows must be sorted by (subject, time)")
        counts = np.bincount(self.subject_index, minlength=self.n)
        if np.any(counts == 0):
            raise ValidationError("every subject needs at least one row")
        self._check_fixed_constant()

    def _check_fixed_constant(self):
        for j, name in enumerate(self.schema.alpha_fixed):
            col = self.X[:, j]
            for i in range(self.n):
                rows = col[self.subject_index == i]
                if rows.size and not np.all(rows == rows[0]):
                    raise ValidationError(
                        f"time-fixed covariate '{name}' varies within subject "
                        f"'{self.subject_ids[i]}'"
                    )

    @property
    def n(self):
        return len(self.subject_ids)

    @property
    def N(self):
        return self.y.size

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def q(self):
        return self.W.shape[1]

    @property
    def r(self):
        return self.H.shape[1]

    @property
    def fixed_idx(self):
        return list(range(len(self.schema.alpha_fixed)))

    def group_slices(self):
        """Per-subject [start, stop) row ranges (rows are subject-sorted)."""
        starts = np.searchsorted(self.subject_index, np.arange(self.n))
        stops = np.append(starts[1:], self.N)
        return starts, stops


def _parse_cell(text, row, col):
    try:
        return float(text)
    except ValueError:
        raise ValidationError(
            f"row {row}, column '{col}': non-numeric value {text!r}"
        ) from None


def load_dataset(path, schema: DataSchema):
    """Read and validate a long-format CSV against the schema."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        needed = [schema.subject, schema.time, schema.y] + schema.covariate_names
        missing = [c for c in needed if c not in header]
        if missing:
            raise ValidationError(f"{path}: missing columns {missing}")
        pos = {name: header.index(name) for name in needed}

        records = []
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValidationError(f"row {lineno}: expected {len(header)} cells")
            subj = row[pos[schema.subject]].strip()
            t = _parse_cell(row[pos[schema.time]], lineno, schema.time)
            yv = _parse_cell(row[pos[schema.y]], lineno, schema.y)
            if yv < 0 or yv != int(yv):
                raise ValidationError(
                    f"row {lineno}, column '{schema.y}': "
                    f"reported count must be a non-negative integer, got {yv}"
                )
            cov = [_parse_cell(row[pos[c]], lineno, c) for c in schema.covariate_names]
            records.append((subj, t, int(yv), cov))

    if not records:
        raise ValidationError(f"{path}: no data rows")
    records.sort(key=lambda r: (r[0], r[1]))
    subject_ids = sorted({r[0] for r in records})
    index_of = {s: i for i, s in enumerate(subject_ids)}
    cov_pos = {name: k for k, name in enumerate(schema.covariate_names)}

    def cols(names, rec):
        return [rec[3][cov_pos[c]] for c in names]

    return Dataset(
        subject_ids=subject_ids,
        subject_index=np.array([index_of[r[0]] for r in records]),
        times=np.array([r[1] for r in records]),
        y=np.array([r[2] for r in records]),
        X=np.array([cols(schema.x_names, r) for r in records], dtype=float),
        H=np.array([cols(schema.h, r) for r in records], dtype=float),
        W=np.array([cols(schema.w, r) for r in records], dtype=float),
        schema=schema,
    )


def _fmt(v):
    f = float(v)
    return str(int(f)) if f == int(f) and abs(f) < 1e15 else repr(f)


def write_dataset(ds: Dataset, path):
    """Write the canonical CSV form (inverse of load_dataset)."""
    schema = ds.schema
    names = schema.covariate_names
    x_pos = {c: j for j, c in enumerate(schema.x_names)}
    h_pos = {c: j for j, c in enumerate(schema.h)}
    w_pos = {c: j for j, c in enumerate(schema.w)}

    def value(name, i):
        if name in x_pos:
            return ds.X[i, x_pos[name]]
        if name in h_pos:
            return ds.H[i, h_pos[name]]
        return ds.W[i, w_pos[name]]

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([schema.subject, schema.time, schema.y] + names)
        for i in range(ds.N):
            row = [ds.subject_ids[ds.subject_index[i]], _fmt(ds.times[i]), int(ds.y[i])]
            row += [_fmt(value(c, i)) for c in names]
            writer.writerow(row)
