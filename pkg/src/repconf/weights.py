"""
Per-pair confidence weights for implicit-feedback matrix factorization.

Six schemes are supported. Count-based: ``linear``, ``log`` and ``log_pop``.
Posterior-based, built from interpolated grid estimates of every
interaction of the pair: ``sum_post``, ``logsum_post`` and ``sum_conf``.
Pairs without a single listen get no weight under any scheme.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
import scipy.sparse as sps

from .features import annotate
from .grid import PosteriorGrid, interpolate_arrays

_log = logging.getLogger(__name__)

SCHEMES = ("linear", "log", "log_pop", "sum_post", "logsum_post", "sum_conf")
POSTERIOR_SCHEMES = ("sum_post", "logsum_post", "sum_conf")


@dataclass(frozen=True)
class WeightConfig:
    scheme: str = "linear"
    scale_alpha: float = 1.0
    epsilon: float = 1.0
    cutoff_c: float = 0.1

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown weighting scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not self.scale_alpha > 0:
            raise ValueError("scale_alpha must be positive")
        if self.scheme in ("log", "log_pop") and not self.epsilon > 0:
            raise ValueError("epsilon must be positive for log schemes")
        if self.cutoff_c < 0:
            raise ValueError("cutoff_c must be nonnegative")


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """Sparse ``(user, item, weight)`` triplets sorted by (user, item)."""

    users: np.ndarray
    items: np.ndarray
    weights: np.ndarray
    shape: tuple[int, int]

    def __post_init__(self):
        if not (len(self.users) == len(self.items) == len(self.weights)):
            raise ValueError("triplet arrays differ in length")
        if len(self.weights) and not (np.all(np.isfinite(self.weights)) and np.all(self.weights > 0)):
            raise ValueError("weights must be finite and positive")
        if len(self.users) and (self.users.max() >= self.shape[0] or self.items.max() >= self.shape[1]):
            raise ValueError("triplet ids exceed matrix shape")

    def __len__(self):
        return len(self.weights)

    def to_csr(self) -> sps.csr_matrix:
        m = sps.csr_matrix((self.weights, (self.users, self.items)), shape=self.shape)
        m.sort_indices()
        return m

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"user": self.users, "item": self.items, "weight": self.weights})


def rep_counts(ints: pd.DataFrame) -> pd.Series:
    """Listens per (user, item) pair, indexed by pair; skip-only pairs count 0."""
    return ints.groupby(["user", "item"], sort=True)["label"].sum().astype(np.int64)


def item_avg_pos(ints: pd.DataFrame) -> pd.Series:
    """
    Average listens per listening user, per item.

    Items that were only ever skipped are absent.
    """
    r = rep_counts(ints)
    r = r[r > 0]
    g = r.groupby(level="item")
    return (g.sum() / g.size()).rename("avg_pos")


def compute_weights(
    ints: pd.DataFrame,
    cfg: WeightConfig,
    *,
    ann: pd.DataFrame | None = None,
    grid: PosteriorGrid | None = None,
    item_stats: pd.Series | None = None,
    shape: tuple[int, int] | None = None,
) -> WeightMatrix:
    """
    Weight every pair with at least one listen under ``cfg.scheme``.

    Parameters
    ----------
    ints
        Labelled interactions.
    ann
        Annotated interactions (playcount, recency); computed from ``ints``
        when a posterior scheme needs them and none are given.
    grid
        Fitted posterior grid, required by the posterior schemes.
    item_stats
        Per-item average listens for ``log_pop``; computed when omitted.
    shape
        Matrix shape; defaults to ``(max user + 1, max item + 1)``.
    """
    r = rep_counts(ints)
    r = r[r > 0]
    users = r.index.get_level_values("user").to_numpy(np.int64)
    items = r.index.get_level_values("item").to_numpy(np.int64)
    counts = r.to_numpy(np.float64)

    scheme = cfg.scheme
    if scheme == "linear":
        w = counts
    elif scheme == "log":
        w = np.log1p(counts / cfg.epsilon)
    elif scheme == "log_pop":
        if item_stats is None:
            item_stats = item_avg_pos(ints)
        rv = item_stats.reindex(items).to_numpy(np.float64)
        w = np.log1p(counts / (rv * cfg.epsilon))
    else:
        if grid is None:
            raise ValueError(f"scheme {scheme!r} needs a fitted posterior grid")
        if ann is None:
            ann = annotate(ints)
        pi, width, _ = interpolate_arrays(
            grid, ann["playcount"].to_numpy(np.float64), ann["recency_s"].to_numpy(np.float64)
        )
        if scheme == "sum_conf":
            contrib = pi / (cfg.cutoff_c + width)
        else:
            contrib = pi
        per_pair = (
            pd.DataFrame({"user": ann["user"].to_numpy(), "item": ann["item"].to_numpy(), "c": contrib})
            .groupby(["user", "item"], sort=True)["c"]
            .sum()
        )
        total = per_pair.reindex(r.index).to_numpy(np.float64)
        w = np.log1p(total) if scheme == "logsum_post" else total

    w = cfg.scale_alpha * w
    ok = np.isfinite(w) & (w > 0)
    if not ok.all():
        _log.warning("dropping %d pairs with nonpositive or invalid weight", int((~ok).sum()))
    if shape is None:
        shape = (int(ints["user"].max()) + 1, int(ints["item"].max()) + 1)
    return WeightMatrix(users[ok], items[ok], w[ok], shape)


def write_weights(path, wm: WeightMatrix):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# shape={wm.shape[0]},{wm.shape[1]}\n")
        fh.write("user,item,weight\n")
        for u, i, w in zip(wm.users, wm.items, wm.weights):
            fh.write(f"{u},{i},{float(w)!r}\n")


def read_weights(path) -> WeightMatrix:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith("# shape="):
            raise ValueError(f"{path}: missing shape header")
        n_u, n_i = (int(x) for x in first.split("=", 1)[1].split(","))
        frame = pd.read_csv(fh, dtype={"user": np.int64, "item": np.int64}, float_precision="round_trip")
    return WeightMatrix(
        frame["user"].to_numpy(np.int64),
        frame["item"].to_numpy(np.int64),
        frame["weight"].to_numpy(np.float64),
        (n_u, n_i),
    )
