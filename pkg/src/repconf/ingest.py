"""
Raw listening-log ingestion: parsing, listen/skip labelling and filtering.

Interactions are carried as pandas frames with the columns
``user, item, timestamp, label``; ``user`` and ``item`` are dense integer ids
assigned in order of first appearance.
"""

from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd

_log = logging.getLogger(__name__)

EVENT_COLUMNS = ["user_id", "item_id", "timestamp", "duration_ms"]
INTERACTION_COLUMNS = ["user", "item", "timestamp", "label"]


class MalformedRowError(ValueError):
    pass


class EmptyDatasetError(ValueError):
    """Filtering removed every interaction."""


class ParsedEvents(NamedTuple):
    events: pd.DataFrame
    n_malformed: int


class Labeled(NamedTuple):
    interactions: pd.DataFrame
    user_ids: list
    item_ids: list


@dataclass(frozen=True)
class DatasetStats:
    n_users: int
    n_items: int
    n_interactions: int
    n_pairs: int
    median_rep: float
    mean_rep: float
    max_rep: float
    p99_rep: float

    @property
    def skewed(self) -> bool:
        """True when the repetition distribution is right-skewed (median <= mean)."""
        return self.median_rep <= self.mean_rep


def _parse_int(text: str) -> int:
    text = text.strip()
    if not text:
        raise ValueError("empty field")
    return int(text)


def parse_events(
    source,
    fmt: str = "csv",
    *,
    header: bool = False,
    delimiter: str | None = None,
    strict: bool = False,
) -> ParsedEvents:
    """
    Parse a raw event log.

    Parameters
    ----------
    source
        Path, bytes stream or text stream. Rows are
        ``user_id, item_id, timestamp[, duration_ms]``.
    fmt
        ``"csv"`` or ``"tsv"``; selects the default delimiter.
    header
        Skip the first row.
    strict
        Raise on the first malformed row instead of skipping it.

    Returns
    -------
    ParsedEvents
        Events in file order (``duration_ms`` is a nullable integer column)
        and the number of skipped malformed rows.
    """
    if fmt not in ("csv", "tsv"):
        raise ValueError(f"unknown format {fmt!r}")
    if delimiter is None:
        delimiter = "," if fmt == "csv" else "\t"

    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            raw = fh.read()
    else:
        raw = source.read()
    text = raw.decode("utf-8") if isinstance(raw, bytes) else raw

    users, items, stamps, durations = [], [], [], []
    n_bad = 0
    reader = csv.reader(io.StringIO(text), delimiter=delimiter)
    for lineno, row in enumerate(reader, start=1):
        if header and lineno == 1:
            continue
        if not row or all(not f.strip() for f in row):
            continue
        try:
            if len(row) not in (3, 4):
                raise ValueError(f"expected 3 or 4 fields, got {len(row)}")
            uid, iid = row[0].strip(), row[1].strip()
            if not uid or not iid:
                raise ValueError("empty identifier")
            ts = _parse_int(row[2])
            if ts < 0:
                raise ValueError("negative timestamp")
            dur = None
            if len(row) == 4 and row[3].strip():
                dur = _parse_int(row[3])
                if dur < 0:
                    raise ValueError("negative duration")
        except ValueError as e:
            if strict:
                raise MalformedRowError(f"line {lineno}: {e}") from e
            n_bad += 1
            continue
        users.append(uid)
        items.append(iid)
        stamps.append(ts)
        durations.append(dur)

    if n_bad:
        _log.warning("skipped %d malformed rows", n_bad)
    events = pd.DataFrame(
        {
            "user_id": pd.Series(users, dtype=object),
            "item_id": pd.Series(items, dtype=object),
            "timestamp": np.asarray(stamps, dtype=np.int64),
            "duration_ms": pd.array(durations, dtype="Int64"),
        }
    )
    return ParsedEvents(events, n_bad)


def restrict_window(events: pd.DataFrame, window_days: float, first_appearance_only: bool = False) -> pd.DataFrame:
    """
    Keep the last ``window_days`` of the log.

    With ``first_appearance_only`` only items whose earliest event in the whole
    log falls inside the window are kept, so every retained item is new to the
    period.
    """
    ts = events["timestamp"].to_numpy(np.int64)
    if ts.size == 0:
        return events
    start = ts.max() - window_days * 86400.0
    inside = ts >= start
    if first_appearance_only:
        first_seen = events.groupby("item_id", sort=False)["timestamp"].transform("min").to_numpy()
        inside &= first_seen >= start
    return events[inside].reset_index(drop=True)


def _densify(events: pd.DataFrame) -> tuple[np.ndarray, np.ndarray, list, list]:
    ucodes, uniq_u = pd.factorize(events["user_id"], sort=False)
    icodes, uniq_i = pd.factorize(events["item_id"], sort=False)
    return ucodes.astype(np.int64), icodes.astype(np.int64), list(uniq_u), list(uniq_i)


def _canonical(frame: pd.DataFrame) -> pd.DataFrame:
    # stable (user, timestamp) order; ties keep input order
    order = np.lexsort((np.arange(len(frame)), frame["timestamp"].to_numpy(), frame["user"].to_numpy()))
    return frame.iloc[order].reset_index(drop=True)


def derive_labels_duration(events: pd.DataFrame, threshold_s: int = 30) -> Labeled:
    """Label each event as a listen when at least ``threshold_s`` seconds were played."""
    dur = events["duration_ms"]
    missing = np.flatnonzero(dur.isna().to_numpy())
    if missing.size:
        raise ValueError(f"event at row {missing[0]} has no duration_ms")
    users, items, uids, iids = _densify(events)
    frame = pd.DataFrame(
        {
            "user": users,
            "item": items,
            "timestamp": events["timestamp"].to_numpy(np.int64),
            "label": (dur.to_numpy(np.int64) >= threshold_s * 1000).astype(np.int8),
        }
    )
    return Labeled(_canonical(frame), uids, iids)


def derive_labels_gap(events: pd.DataFrame, threshold_s: int = 30) -> Labeled:
    """
    Label events from the time to the same user's next event.

    An event is a listen if the next event of the user starts at least
    ``threshold_s`` seconds later. Each user's final event has no successor
    and is dropped.
    """
    ts = events["timestamp"].to_numpy(np.int64)
    ucodes, _ = pd.factorize(events["user_id"], sort=False)
    order = np.lexsort((np.arange(len(events)), ts, ucodes))
    su = ucodes[order]
    sts = ts[order]
    has_next = np.zeros(len(order), dtype=bool)
    has_next[:-1] = su[1:] == su[:-1]
    gap = np.zeros(len(order), dtype=np.int64)
    gap[:-1] = sts[1:] - sts[:-1]

    keep_rows = np.sort(order[has_next])
    kept = events.iloc[keep_rows].reset_index(drop=True)
    label_by_row = np.zeros(len(events), dtype=np.int8)
    label_by_row[order[has_next]] = gap[has_next] >= threshold_s
    users, items, uids, iids = _densify(kept)
    frame = pd.DataFrame(
        {
            "user": users,
            "item": items,
            "timestamp": kept["timestamp"].to_numpy(np.int64),
            "label": label_by_row[keep_rows],
        }
    )
    return Labeled(_canonical(frame), uids, iids)


def pair_positive_counts(ints: pd.DataFrame) -> pd.Series:
    """Number of listens per (user, item) pair, including pairs with zero listens."""
    return ints.groupby(["user", "item"], sort=True)["label"].sum().astype(np.int64)


def filter_dataset(
    ints: pd.DataFrame,
    min_items_per_user: int = 20,
    min_users_per_item: int = 100,
    rep_cap: int | None = None,
) -> pd.DataFrame:
    """
    Drop over-repeated pairs, then alternate user and item filters to a fixpoint.

    With ``rep_cap`` set, every interaction of a pair whose listen count exceeds
    the cap is removed. Users are then required to have interacted with at least
    ``min_items_per_user`` distinct items and items with at least
    ``min_users_per_item`` distinct users, repeating until both hold at once.
    """
    cur = ints
    if rep_cap is not None:
        r = pair_positive_counts(cur)
        over = r[r > rep_cap]
        if len(over):
            key = pd.MultiIndex.from_frame(cur[["user", "item"]])
            cur = cur[~key.isin(over.index)]
            _log.info("rep_cap=%d removed %d pairs", rep_cap, len(over))

    n_pass = 0
    while True:
        n_pass += 1
        before = len(cur)
        upairs = cur.drop_duplicates(["user", "item"])
        n_items = upairs.groupby("user").size()
        good_users = n_items.index[n_items >= min_items_per_user]
        cur = cur[cur["user"].isin(good_users)]
        upairs = upairs[upairs["user"].isin(good_users)]
        n_users = upairs.groupby("item").size()
        good_items = n_users.index[n_users >= min_users_per_item]
        cur = cur[cur["item"].isin(good_items)]
        if len(cur) == before:
            break

    if cur.empty:
        raise EmptyDatasetError(
            f"no interactions left after filtering {len(ints)} rows "
            f"(min_items_per_user={min_items_per_user}, min_users_per_item={min_users_per_item}, "
            f"rep_cap={rep_cap}, passes={n_pass})"
        )
    return cur.reset_index(drop=True)


def compute_stats(ints: pd.DataFrame) -> DatasetStats:
    """Size and repetition statistics; repetitions are counted over pairs with at least one listen."""
    if ints.empty:
        raise ValueError("cannot compute statistics of an empty interaction set")
    r = pair_positive_counts(ints)
    r = r[r >= 1].to_numpy(np.float64)
    if r.size:
        med, mean, mx, p99 = float(np.median(r)), float(r.mean()), float(r.max()), float(np.percentile(r, 99))
    else:
        med = mean = mx = p99 = float("nan")
    return DatasetStats(
        n_users=int(ints["user"].nunique()),
        n_items=int(ints["item"].nunique()),
        n_interactions=len(ints),
        n_pairs=int(r.size),
        median_rep=med,
        mean_rep=mean,
        max_rep=mx,
        p99_rep=p99,
    )


# ---------------------------------------------------------------------------
# file formats


def write_interactions(path, ints: pd.DataFrame):
    ints[INTERACTION_COLUMNS].to_csv(path, index=False)


def read_interactions(path) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={"user": np.int64, "item": np.int64, "timestamp": np.int64, "label": np.int8})
    missing = set(INTERACTION_COLUMNS) - set(frame.columns)
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    if not frame["label"].isin([0, 1]).all():
        raise ValueError(f"{path}: labels must be 0 or 1")
    return frame[INTERACTION_COLUMNS]


def write_id_map(path, ids: list):
    """Write ``dense_id,original_id`` rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["dense_id", "original_id"])
        for i, orig in enumerate(ids):
            w.writerow([i, orig])


def read_id_map(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    return [orig for _, orig in rows]


def write_kv(path, values: dict):
    """Flat ``key=value`` report, one entry per line in insertion order."""
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in values.items():
            fh.write(f"{k}={v}\n")


def read_kv(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        k, sep, v = line.partition("=")
        if not sep:
            raise ValueError(f"{path}: not a key=value line: {line!r}")
        out[k.strip()] = v.strip()
    return out


def write_stats(path, stats: DatasetStats, **extra):
    write_kv(path, {**asdict(stats), **extra})
