"""CSV and JSON serialization shared by the CLI and the tests.

Floats are written with ``repr`` (shortest round-trip form) so reruns are
byte-identical and values survive a read-back exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .policy import GridPolicy


def _fmt(x) -> str:
    return repr(float(x))


def write_surface_csv(path, t, p, values) -> None:
    """Matrix CSV: the header row lists the ``p`` nodes, each row starts with its ``t`` node."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t\\p"] + [_fmt(x) for x in p])
        for tk, row in zip(t, values):
            wr.writerow([_fmt(tk)] + [_fmt(x) for x in row])


def read_surface_csv(path):
    """Inverse of :func:`write_surface_csv`; returns ``(t, p, values)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    p = np.array([float(x) for x in rows[0][1:]])
    t = np.array([float(r[0]) for r in rows[1:]])
    values = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    return t, p, values


POLICY_COLUMNS = ["t", "p", "pi_S_pre", "pi_P_pre", "pi_S_post"]


def write_policy_csv(path, policy: GridPolicy) -> None:
    """Long-format policy table, one row per ``(t, p)`` node."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(POLICY_COLUMNS)
        for k, tk in enumerate(policy.t_grid):
            for j, pj in enumerate(policy.p_grid):
                wr.writerow([_fmt(tk), _fmt(pj), _fmt(policy.pre_stock[k, j]),
                             _fmt(policy.pre_credit[k, j]), _fmt(policy.post_stock[k, j])])


def read_policy_csv(path) -> GridPolicy:
    with open(path, newline="") as fh:
        rdr = csv.reader(fh)
        header = next(rdr)
        if header != POLICY_COLUMNS:
            raise ValueError(f"unexpected policy header {header}")
        data = np.array([[float(x) for x in row] for row in rdr])
    t = np.unique(data[:, 0])
    p = np.unique(data[:, 1])
    if data.shape[0] != t.size * p.size:
        raise ValueError("policy table is not a full (t, p) grid")
    order = np.lexsort((data[:, 1], data[:, 0]))
    data = data[order]
    shape = (t.size, p.size)
    return GridPolicy(t, p, data[:, 2].reshape(shape), data[:, 3].reshape(shape),
                      data[:, 4].reshape(shape))


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([_fmt(x) if isinstance(x, (float, np.floating)) else x for x in row])


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_config(path) -> dict:
    """Read a run configuration; a bare model dict is accepted too."""
    with open(path) as fh:
        cfg = json.load(fh)
    if "model" not in cfg:
        cfg = {"model": cfg}
    return cfg
