"""Long-format CSV input and output (``curve_id,t,y``, header required)."""

from __future__ import annotations

import csv
from collections import OrderedDict

import numpy as np

from .errors import InvalidInput, NoData
from .presmooth import ObservedCurve

HEADER = ("curve_id", "t", "y")


def read_long_csv(path) -> list[ObservedCurve]:
    """Group rows by ``curve_id`` in order of first appearance."""
    groups: OrderedDict = OrderedDict()
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        try:
            head = next(rd)
        except StopIteration:
            raise NoData(f"{path}: empty file") from None
        if tuple(x.strip() for x in head) != HEADER:
            raise InvalidInput(f"{path}: header must be {','.join(HEADER)}")
        for lineno, row in enumerate(rd, start=2):
            if not row or all(not x.strip() for x in row):
                continue
            if len(row) != 3:
                raise InvalidInput(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            cid = row[0].strip()
            try:
                t, y = float(row[1]), float(row[2])
            except ValueError:
                raise InvalidInput(f"{path}:{lineno}: non-numeric t or y") from None
            ts, ys = groups.setdefault(cid, ([], []))
            ts.append(t)
            ys.append(y)
    if not groups:
        raise NoData(f"{path}: no data rows")
    return [ObservedCurve(cid, np.array(ts), np.array(ys)) for cid, (ts, ys) in groups.items()]


def write_long_csv(path, curves) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(HEADER)
        for c in curves:
            for t, y in zip(c.times, c.values):
                wr.writerow([c.id, repr(float(t)), repr(float(y))])
