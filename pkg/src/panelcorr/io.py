"""Long-format panel ingestion and the constraint mini-grammar."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import (ConfigError, DuplicateCell, NonNumericField,
                         UnbalancedPanel)
from .inference import Constraint
from .model import PanelData


@dataclass
class ColumnRoles:
    unit: str = "unit"
    time: str = "time"
    outcome: str = "y"
    x: Sequence[str] = field(default_factory=list)
    u: Optional[str] = None
    v: Optional[str] = None
    lag_order: int = 0


def _sort_key(labels):
    try:
        return sorted(labels, key=float)
    except ValueError:
        return sorted(labels)


def _label(s):
    """Integer-looking labels become ints so they print naturally."""
    try:
        f = float(s)
    except ValueError:
        return s
    return int(f) if f.is_integer() else f


def ingest(path: str, roles: ColumnRoles, delimiter: Optional[str] = None) -> PanelData:
    """Read a long-format file (one row per unit-period) into a balanced panel.

    Row numbers in errors count data rows from 1 (the header is row 0).
    With ``lag_order > 0`` the first period of every unit becomes ``y_init``
    and is removed from the estimation sample.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        text = fh.read()
    if delimiter is None:
        try:
            delimiter = csv.Sniffer().sniff(text.splitlines()[0], delimiters=",;\t").delimiter
        except (csv.Error, IndexError):
            delimiter = ","
    rows = list(csv.reader(text.splitlines(), delimiter=delimiter))
    if not rows:
        raise ConfigError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    numeric = [roles.outcome, *roles.x] + [c for c in (roles.u, roles.v) if c]
    for col in [roles.unit, roles.time, *numeric]:
        if col not in header:
            raise ConfigError(f"column {col!r} not found in {path}")
    pos = {h: k for k, h in enumerate(header)}
    cells = {}
    for r, row in enumerate(rows[1:], start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ConfigError(f"row {r} has {len(row)} fields, expected {len(header)}")
        key = (row[pos[roles.unit]].strip(), row[pos[roles.time]].strip())
        if key in cells:
            raise DuplicateCell(f"duplicate (unit, time) = {key} at row {r}", row=r)
        vals = []
        for col in numeric:
            raw = row[pos[col]].strip()
            try:
                v = float(raw)
            except ValueError:
                raise NonNumericField(f"non-numeric value {raw!r} in column {col!r} "
                                      f"at row {r}", row=r, column=col) from None
            if not np.isfinite(v):
                raise NonNumericField(f"non-finite value in column {col!r} at row {r}",
                                      row=r, column=col)
            vals.append(v)
        cells[key] = vals
    units = _sort_key({k[0] for k in cells})
    times = _sort_key({k[1] for k in cells})
    gaps = {}
    for u in units:
        missing = [t for t in times if (u, t) not in cells]
        if missing:
            gaps[_label(u)] = [_label(t) for t in missing]
    if gaps:
        lines = "; ".join(f"unit {u}: missing {m}" for u, m in gaps.items())
        raise UnbalancedPanel(f"unbalanced panel ({lines})", gaps=gaps)
    arr = np.array([[cells[(u, t)] for t in times] for u in units], dtype=float)
    k = len(roles.x)
    y = arr[:, :, 0]
    x = arr[:, :, 1:1 + k]
    rest = 1 + k
    u_arr = v_arr = None
    if roles.u:
        u_arr = arr[:, :, rest]
        rest += 1
    if roles.v:
        v_arr = arr[:, :, rest]
    time_labels = [_label(t) for t in times]
    y_init = None
    if roles.lag_order > 0:
        if len(times) < 3:
            raise ConfigError("a dynamic model needs at least three periods")
        y_init = y[:, 0]
        y, x = y[:, 1:], x[:, 1:]
        u_arr = None if u_arr is None else u_arr[:, 1:]
        v_arr = None if v_arr is None else v_arr[:, 1:]
        time_labels = time_labels[1:]
    return PanelData(y=y, x=x, y_init=y_init, u=u_arr, v=v_arr,
                     x_names=list(roles.x), unit_labels=[_label(u) for u in units],
                     time_labels=time_labels, meta={"source": str(path)})


def write_long_csv(path: str, data: PanelData, roles: Optional[ColumnRoles] = None):
    """Inverse of :func:`ingest` (the initial period is written when present)."""
    roles = roles or ColumnRoles(x=list(data.x_names),
                                 u="u" if data.u is not None else None,
                                 v="v" if data.v is not None else None,
                                 lag_order=int(data.y_init is not None))
    n, t = data.shape
    times = list(data.time_labels)
    header = [roles.unit, roles.time, roles.outcome, *roles.x]
    if roles.u:
        header.append(roles.u)
    if roles.v:
        header.append(roles.v)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(n):
            if data.y_init is not None:
                t0 = times[0] - 1 if isinstance(times[0], (int, float)) else "init"
                row = [data.unit_labels[i], t0, format(data.y_init[i], ".17g")]
                row += ["0"] * len(roles.x)
                row += ["0"] * (bool(roles.u) + bool(roles.v))
                w.writerow(row)
            for s in range(t):
                row = [data.unit_labels[i], times[s], format(data.y[i, s], ".17g")]
                row += [format(v, ".17g") for v in data.x[i, s]]
                if roles.u:
                    row.append(format(data.u[i, s], ".17g"))
                if roles.v:
                    row.append(format(data.v[i, s], ".17g"))
                w.writerow(row)


# -- constraints ------------------------------------------------------------------

def _number(tok):
    try:
        return float(tok)
    except ValueError:
        return None


def parse_constraint(text: str, names: Sequence[str]) -> Constraint:
    """Parse ``name=value`` and ``a=b[=c...]`` clauses joined by commas.

    Every clause is linear; chained equalities contribute one row per ``=``.
    """
    names = list(names)
    index = {n: k for k, n in enumerate(names)}
    rows, rhs = [], []
    clauses = [c.strip() for c in text.split(",") if c.strip()]
    if not clauses:
        raise ConfigError("empty constraint")
    for clause in clauses:
        terms = [t.strip() for t in clause.split("=")]
        if len(terms) < 2 or any(t == "" for t in terms):
            raise ConfigError(f"cannot parse constraint clause {clause!r}")
        for left, right in zip(terms, terms[1:]):
            row = np.zeros(len(names))
            c = 0.0
            for side, sign in ((left, 1.0), (right, -1.0)):
                val = _number(side)
                if val is not None:
                    c -= sign * val
                elif side in index:
                    row[index[side]] += sign
                else:
                    raise ConfigError(f"unknown parameter {side!r}; "
                                      f"known: {', '.join(names)}")
            if not row.any():
                raise ConfigError(f"clause {clause!r} involves no parameter")
            rows.append(row)
            rhs.append(c)
    return Constraint.linear(np.array(rows), np.array(rhs), description=text.strip())
