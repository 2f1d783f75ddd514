"""Reading matrices, vectors and group layouts from disk.

Two matrix formats are accepted and told apart by the first line:
MatrixMarket files start with ``%%MatrixMarket``; anything else is read as
delimited text with one row per line, separated by commas or whitespace.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
import scipy.io

from airopt.model import GroupStructure

MM_BANNER = "%%matrixmarket"


def _is_matrix_market(path):
    with open(path, "r") as fh:
        return fh.readline().strip().lower().startswith(MM_BANNER)


def _load_text(path):
    text = Path(path).read_text()
    rows = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        rows.append([float(tok) for tok in re.split(r"[,\s]+", line) if tok])
    if not rows:
        raise ValueError(f"{path}: no numeric data")
    width = len(rows[0])
    for i, row in enumerate(rows, 1):
        if len(row) != width:
            raise ValueError(f"{path}: row {i} has {len(row)} entries, expected {width}")
    return np.array(rows, dtype=float)


def load_matrix(path) -> np.ndarray:
    """Dense 2-D float array from a delimited-text or MatrixMarket file."""
    if _is_matrix_market(path):
        data = scipy.io.mmread(str(path))
        data = data.toarray() if hasattr(data, "toarray") else np.asarray(data)
        return np.atleast_2d(np.asarray(data, dtype=float))
    return _load_text(path)


def load_vector(path) -> np.ndarray:
    """1-D float array; a single row or a single column are both accepted."""
    arr = load_matrix(path)
    if arr.ndim == 2 and min(arr.shape) != 1:
        raise ValueError(f"{path}: expected a vector, found a {arr.shape[0]}x{arr.shape[1]} matrix")
    return arr.ravel()


def load_groups(path) -> GroupStructure:
    """Contiguous group layout from a file listing block lengths."""
    sizes = load_matrix(path).ravel()
    if np.any(sizes != np.round(sizes)) or np.any(sizes < 1):
        raise ValueError(f"{path}: block lengths must be positive integers")
    return GroupStructure.contiguous([int(s) for s in sizes])


def save_vector(path, x):
    """One value per line, full double precision."""
    Path(path).write_text("".join(f"{float(v)!r}\n" for v in np.asarray(x, dtype=float).ravel()))
