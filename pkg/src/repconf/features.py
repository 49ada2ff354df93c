"""
Per-interaction playcount and relistening recency.

For the i-th interaction of a pair, ``playcount`` is the number of listens
among interactions 1..i-1 and ``recency_s`` is the time elapsed since the
pair's most recent earlier listen (NaN before the first listen).
"""

from __future__ import annotations

import numpy as np
import pandas as pd

__all__ = ["annotate", "select_first_after_le", "exclude_single_le_pairs", "write_annotated"]


def _pair_order(ints: pd.DataFrame) -> np.ndarray:
    # stable grouping by pair that keeps the within-pair frame order
    return np.lexsort((np.arange(len(ints)), ints["item"].to_numpy(), ints["user"].to_numpy()))


def annotate(ints: pd.DataFrame) -> pd.DataFrame:
    """
    Add ``playcount``, ``recency_s`` and ``seq_index`` columns.

    Rows keep their order; within each (user, item) pair they must already be
    in nondecreasing timestamp order.
    """
    n = len(ints)
    order = _pair_order(ints)
    u = ints["user"].to_numpy()[order]
    v = ints["item"].to_numpy()[order]
    ts = ints["timestamp"].to_numpy(np.int64)[order]
    lab = ints["label"].to_numpy(np.int64)[order]

    start = np.ones(n, dtype=bool)
    start[1:] = (u[1:] != u[:-1]) | (v[1:] != v[:-1])
    if n > 1 and np.any((ts[1:] < ts[:-1]) & ~start[1:]):
        raise ValueError("interactions are not time-ordered within pairs")

    group = np.cumsum(start) - 1
    first_pos = np.flatnonzero(start)
    pos = np.arange(n)
    seq = pos - first_pos[group] + 1

    cum = np.cumsum(lab)
    before_group = np.where(first_pos > 0, cum[first_pos - 1], 0)
    playcount = cum - lab - before_group[group]

    # index of the latest listen at or before each position, within the pair
    last_le = np.where(lab == 1, pos, -1)
    last_le = np.maximum.accumulate(last_le)
    prev_le = np.full(n, -1)
    prev_le[1:] = last_le[:-1]
    prev_le[start] = -1
    prev_le[prev_le < first_pos[group]] = -1
    recency = np.full(n, np.nan)
    ok = prev_le >= 0
    recency[ok] = (ts[ok] - ts[prev_le[ok]]).astype(np.float64)

    out = ints.copy()
    cols = {"playcount": playcount, "recency_s": recency, "seq_index": seq}
    for name, vals in cols.items():
        col = np.empty(n, dtype=vals.dtype)
        col[order] = vals
        out[name] = col
    out["playcount"] = out["playcount"].astype(np.int64)
    out["seq_index"] = out["seq_index"].astype(np.int64)
    return out


def select_first_after_le(ann: pd.DataFrame) -> pd.DataFrame:
    """
    Keep one interaction per (pair, playcount level): the first one.

    That is the pair's first interaction and each interaction immediately
    following a listen. Further interactions at an unchanged playcount
    (repeated skips) are dropped.
    """
    order = _pair_order(ann)
    u = ann["user"].to_numpy()[order]
    v = ann["item"].to_numpy()[order]
    lab = ann["label"].to_numpy()[order]
    keep = np.ones(len(order), dtype=bool)
    if len(order) > 1:
        same = (u[1:] == u[:-1]) & (v[1:] == v[:-1])
        keep[1:] = ~same | (lab[:-1] == 1)
    mask = np.empty(len(order), dtype=bool)
    mask[order] = keep
    return ann[mask]


def exclude_single_le_pairs(ann: pd.DataFrame) -> pd.DataFrame:
    """Drop pairs made of a single interaction that was a listen."""
    g = ann.groupby(["user", "item"], sort=False)["label"]
    size = g.transform("size")
    first_label = g.transform("first")
    return ann[~((size == 1) & (first_label == 1))]


def write_annotated(path, ann: pd.DataFrame):
    cols = ["user", "item", "timestamp", "label", "playcount", "recency_s"]
    ann[cols].to_csv(path, index=False, na_rep="")
