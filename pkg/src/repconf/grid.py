"""
Beta posteriors over playcount levels and log-spaced recency bins.

A :class:`PosteriorGrid` holds one Beta posterior per (playcount level,
recency bin) cell. Estimates for arbitrary interactions come from bilinear
interpolation of the cell means and HDI widths over node coordinates
``(k, log10 bin centre)``; queries without a usable recency fall back to the
prior.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .bayes import BetaParams, Hdi, adaptive_max_iter, beta_hdi, beta_hdi_arrays
from .features import select_first_after_le

__all__ = [
    "BinSpec",
    "GridConfig",
    "GridCell",
    "PosteriorGrid",
    "InterpolatedEstimate",
    "build_recency_bins",
    "assign_bins",
    "fit_playcount_curve",
    "fit_recency_curve",
    "fit_grid",
    "interpolate",
    "interpolate_arrays",
    "export_grid",
    "import_grid",
    "export_cells",
]

MIN_RECENCY_S = 134.0


@dataclass(frozen=True, eq=False)
class BinSpec:
    edges: np.ndarray
    min_recency_s: float = MIN_RECENCY_S

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.float64)
        if edges.ndim != 1 or edges.size < 2:
            raise ValueError("need at least two bin edges")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("bin edges must be strictly increasing")
        if edges[0] != self.min_recency_s:
            raise ValueError(f"first edge {edges[0]} != min_recency_s {self.min_recency_s}")
        object.__setattr__(self, "edges", edges)

    @property
    def n_bins(self) -> int:
        return self.edges.size - 1

    @property
    def log_centers(self) -> np.ndarray:
        """log10 of each bin's geometric centre."""
        le = np.log10(self.edges)
        return 0.5 * (le[:-1] + le[1:])


@dataclass(frozen=True)
class GridConfig:
    prior: BetaParams = BetaParams(200.0, 200.0)
    n_recency_bins: int = 50
    max_playcount: int = 57
    hdi_mass: float = 0.95
    min_recency_s: float = MIN_RECENCY_S

    def __post_init__(self):
        if self.n_recency_bins < 1:
            raise ValueError("n_recency_bins must be >= 1")
        if self.max_playcount < 1:
            raise ValueError("max_playcount must be >= 1")
        if not 0 < self.hdi_mass < 1:
            raise ValueError("hdi_mass must lie in (0, 1)")


@dataclass(frozen=True)
class GridCell:
    playcount_level: int | None
    bin_index: int | None
    posterior: BetaParams
    mean: float
    hdi: Hdi
    n_obs: int
    n_pos: int


@dataclass(frozen=True)
class InterpolatedEstimate:
    pi_hat: float
    hdi_width_hat: float
    from_prior: bool


def _summarise(prior: BetaParams, n_obs: np.ndarray, n_pos: np.ndarray, mass: float):
    a = prior.a + n_pos.astype(np.float64)
    b = prior.b + (n_obs - n_pos).astype(np.float64)
    mean = a / (a + b)
    # many cells share parameters (all empty cells carry the prior)
    ab = np.stack([a.ravel(), b.ravel()], axis=1)
    uniq, inv = np.unique(ab, axis=0, return_inverse=True)
    lo, hi = beta_hdi_arrays(uniq[:, 0], uniq[:, 1], mass, max_iter=adaptive_max_iter(uniq[:, 0], uniq[:, 1]))
    inv = inv.ravel()
    return a, b, mean, lo[inv].reshape(a.shape), hi[inv].reshape(a.shape)


def _cells(prior, levels, bin_idx, n_obs, n_pos, mass) -> list[GridCell]:
    a, b, mean, lo, hi = _summarise(prior, n_obs, n_pos, mass)
    return [
        GridCell(
            None if levels is None else int(levels[i]),
            None if bin_idx is None else int(bin_idx[i]),
            BetaParams(float(a[i]), float(b[i])),
            float(mean[i]),
            Hdi(float(lo[i]), float(hi[i]), mass),
            int(n_obs[i]),
            int(n_pos[i]),
        )
        for i in range(len(n_obs))
    ]


def build_recency_bins(ann, n_bins: int, min_recency_s: float = MIN_RECENCY_S) -> BinSpec:
    """
    Log-uniform recency bins from ``min_recency_s`` to the largest observed recency.

    ``ann`` is an annotated frame or an array of recencies in seconds.
    """
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    rec = ann["recency_s"].to_numpy(np.float64) if isinstance(ann, pd.DataFrame) else np.asarray(ann, np.float64)
    rec = rec[np.isfinite(rec) & (rec >= min_recency_s)]
    if rec.size == 0:
        raise ValueError(f"no recency values >= {min_recency_s}s to bin")
    top = float(rec.max())
    if top <= min_recency_s:
        raise ValueError(f"all eligible recencies equal {min_recency_s}s; cannot span bins")
    edges = np.logspace(math.log10(min_recency_s), math.log10(top), n_bins + 1)
    edges[0] = min_recency_s
    edges[-1] = top
    return BinSpec(edges, float(min_recency_s))


def assign_bins(recency, bins: BinSpec) -> np.ndarray:
    """Bin index per recency, half-open ``[lo, hi)`` with the last bin closed; -1 outside."""
    r = np.asarray(recency, dtype=np.float64)
    idx = np.searchsorted(bins.edges, r, side="right") - 1
    idx = np.where(r == bins.edges[-1], bins.n_bins - 1, idx)
    bad = ~np.isfinite(r) | (r < bins.edges[0]) | (r > bins.edges[-1])
    return np.where(bad, -1, idx).astype(np.int64)


def fit_playcount_curve(
    ann: pd.DataFrame, prior: BetaParams, max_playcount: int, hdi_mass: float = 0.95
) -> list[GridCell]:
    """
    One posterior per playcount level ``0..max_playcount``.

    Expects interactions already reduced with
    :func:`~repconf.features.select_first_after_le` and
    :func:`~repconf.features.exclude_single_le_pairs`. Levels above
    ``max_playcount`` are not part of the curve.
    """
    k = ann["playcount"].to_numpy(np.int64)
    lab = ann["label"].to_numpy(np.int64)
    m = k <= max_playcount
    n_obs = np.bincount(k[m], minlength=max_playcount + 1)
    n_pos = np.bincount(k[m], weights=lab[m], minlength=max_playcount + 1).astype(np.int64)
    levels = np.arange(max_playcount + 1)
    return _cells(prior, levels, None, n_obs, n_pos, hdi_mass)


def fit_recency_curve(
    ann: pd.DataFrame, prior: BetaParams, bins: BinSpec, hdi_mass: float = 0.95
) -> list[GridCell]:
    """One posterior per recency bin, using the interactions whose recency falls in it."""
    idx = assign_bins(ann["recency_s"].to_numpy(np.float64), bins)
    lab = ann["label"].to_numpy(np.int64)
    m = idx >= 0
    n_obs = np.bincount(idx[m], minlength=bins.n_bins)
    n_pos = np.bincount(idx[m], weights=lab[m], minlength=bins.n_bins).astype(np.int64)
    return _cells(prior, None, np.arange(bins.n_bins), n_obs, n_pos, hdi_mass)


@dataclass(frozen=True, eq=False)
class PosteriorGrid:
    """Fitted playcount x recency posteriors. Arrays are indexed ``[k, bin]``."""

    config: GridConfig
    bins: BinSpec
    n_obs: np.ndarray
    n_pos: np.ndarray
    a: np.ndarray
    b: np.ndarray
    mean: np.ndarray
    hdi_lo: np.ndarray
    hdi_hi: np.ndarray
    prior_hdi: Hdi = field(default=None)

    def __post_init__(self):
        if self.prior_hdi is None:
            prior = self.config.prior
            hdi = beta_hdi(prior, self.config.hdi_mass, max_iter=adaptive_max_iter(prior.a, prior.b))
            object.__setattr__(self, "prior_hdi", hdi)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mean.shape

    @property
    def width(self) -> np.ndarray:
        return self.hdi_hi - self.hdi_lo

    @property
    def node_levels(self) -> np.ndarray:
        return np.arange(self.shape[0], dtype=np.float64)

    @property
    def node_log_recency(self) -> np.ndarray:
        return self.bins.log_centers

    def cell(self, k: int, j: int) -> GridCell:
        return GridCell(
            k,
            j,
            BetaParams(float(self.a[k, j]), float(self.b[k, j])),
            float(self.mean[k, j]),
            Hdi(float(self.hdi_lo[k, j]), float(self.hdi_hi[k, j]), self.config.hdi_mass),
            int(self.n_obs[k, j]),
            int(self.n_pos[k, j]),
        )

    def iter_cells(self):
        for k in range(self.shape[0]):
            for j in range(self.shape[1]):
                yield self.cell(k, j)


def _grid_from_counts(config: GridConfig, bins: BinSpec, n_obs, n_pos) -> PosteriorGrid:
    a, b, mean, lo, hi = _summarise(config.prior, n_obs, n_pos, config.hdi_mass)
    return PosteriorGrid(config, bins, n_obs, n_pos, a, b, mean, lo, hi)


def fit_grid(
    ann: pd.DataFrame,
    config: GridConfig,
    bins: BinSpec | None = None,
    *,
    first_after_le_only: bool = False,
) -> PosteriorGrid:
    """
    Fit the joint playcount x recency grid.

    Every annotated interaction with an in-range recency is evidence for its
    cell; playcounts above ``config.max_playcount`` are pooled into the top
    level. With ``first_after_le_only`` the one-per-level selection used for
    the playcount curve is applied first.
    """
    if first_after_le_only:
        ann = select_first_after_le(ann)
    if bins is None:
        bins = build_recency_bins(ann, config.n_recency_bins, config.min_recency_s)
    n_levels = config.max_playcount + 1
    k = np.minimum(ann["playcount"].to_numpy(np.int64), config.max_playcount)
    j = assign_bins(ann["recency_s"].to_numpy(np.float64), bins)
    lab = ann["label"].to_numpy(np.int64)
    m = j >= 0
    flat = k[m] * bins.n_bins + j[m]
    size = n_levels * bins.n_bins
    n_obs = np.bincount(flat, minlength=size).reshape(n_levels, bins.n_bins)
    n_pos = np.bincount(flat, weights=lab[m], minlength=size).astype(np.int64).reshape(n_levels, bins.n_bins)
    return _grid_from_counts(config, bins, n_obs, n_pos)


def _bilinear(f: np.ndarray, i0, i1, fk, j0, j1, fr):
    return (
        (1 - fk) * (1 - fr) * f[i0, j0]
        + fk * (1 - fr) * f[i1, j0]
        + (1 - fk) * fr * f[i0, j1]
        + fk * fr * f[i1, j1]
    )


def interpolate_arrays(grid: PosteriorGrid, k, recency_s):
    """
    Vectorised :func:`interpolate`.

    Returns
    -------
    pi_hat, hdi_width_hat, from_prior : np.ndarray
    """
    k = np.asarray(k, dtype=np.float64)
    r = np.asarray(recency_s, dtype=np.float64)
    k, r = np.broadcast_arrays(k, r)
    edges = grid.bins.edges
    with np.errstate(invalid="ignore"):
        from_prior = ~np.isfinite(r) | (r < edges[0]) | (r > edges[-1]) | ~(k >= 0)

    n_levels, n_bins = grid.shape
    kq = np.clip(np.where(from_prior, 0.0, k), 0.0, n_levels - 1)
    i0 = np.minimum(np.floor(kq).astype(np.int64), max(n_levels - 2, 0))
    i1 = np.minimum(i0 + 1, n_levels - 1)
    fk = np.where(i1 > i0, kq - i0, 0.0)

    yc = grid.node_log_recency
    with np.errstate(divide="ignore", invalid="ignore"):
        lr = np.log10(np.where(from_prior, edges[0], r))
    lr = np.clip(lr, yc[0], yc[-1])
    if n_bins > 1:
        j0 = np.clip(np.searchsorted(yc, lr, side="right") - 1, 0, n_bins - 2)
        j1 = j0 + 1
        fr = (lr - yc[j0]) / (yc[j1] - yc[j0])
    else:
        j0 = j1 = np.zeros(lr.shape, dtype=np.int64)
        fr = np.zeros(lr.shape)

    pi = _bilinear(grid.mean, i0, i1, fk, j0, j1, fr)
    width = _bilinear(grid.width, i0, i1, fk, j0, j1, fr)
    pi = np.where(from_prior, grid.config.prior.mean, pi)
    width = np.where(from_prior, grid.prior_hdi.width, width)
    return pi, width, from_prior


def interpolate(grid: PosteriorGrid, k: float, recency_s: float | None) -> InterpolatedEstimate:
    """Estimated listen probability and HDI width for one (playcount, recency) query."""
    r = np.nan if recency_s is None else recency_s
    pi, w, fp = interpolate_arrays(grid, k, r)
    return InterpolatedEstimate(float(pi), float(w), bool(fp))


# ---------------------------------------------------------------------------
# CSV export / import

GRID_COLUMNS = ["k", "bin_lo", "bin_hi", "a_post", "b_post", "mean", "hdi_lo", "hdi_hi", "n_obs", "n_pos"]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def export_grid(grid: PosteriorGrid, sink):
    """
    Write the grid as CSV in k-major order.

    ``sink`` is a path or a text stream. Comment lines starting with ``#`` carry
    the prior and HDI mass needed by :func:`import_grid`.
    """
    if not hasattr(sink, "write"):
        with open(sink, "w", newline="", encoding="utf-8") as fh:
            return export_grid(grid, fh)
    cfg = grid.config
    sink.write(f"# prior_a={cfg.prior.a!r}\n# prior_b={cfg.prior.b!r}\n")
    sink.write(f"# hdi_mass={cfg.hdi_mass!r}\n# min_recency_s={grid.bins.min_recency_s!r}\n")
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(GRID_COLUMNS)
    e = grid.bins.edges
    n_levels, n_bins = grid.shape
    for k in range(n_levels):
        for j in range(n_bins):
            w.writerow(
                [
                    _fmt(k),
                    _fmt(e[j]),
                    _fmt(e[j + 1]),
                    _fmt(grid.a[k, j]),
                    _fmt(grid.b[k, j]),
                    _fmt(grid.mean[k, j]),
                    _fmt(grid.hdi_lo[k, j]),
                    _fmt(grid.hdi_hi[k, j]),
                    _fmt(grid.n_obs[k, j]),
                    _fmt(grid.n_pos[k, j]),
                ]
            )


def import_grid(source) -> PosteriorGrid:
    """Read a grid written by :func:`export_grid`."""
    if not hasattr(source, "read"):
        with open(source, newline="", encoding="utf-8") as fh:
            return import_grid(fh)
    meta = {}
    body = []
    for line in source:
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            meta[key.strip()] = float(val)
        elif line.strip():
            body.append(line)
    rows = list(csv.DictReader(body))
    if not rows:
        raise ValueError("grid file has no cells")
    ks = np.array([int(r["k"]) for r in rows])
    n_levels = ks.max() + 1
    n_bins = len(rows) // n_levels
    if n_levels * n_bins != len(rows):
        raise ValueError("grid file is not a dense k x bin table")

    def col(name, dtype=float):
        return np.array([dtype(r[name]) for r in rows]).reshape(n_levels, n_bins)

    lo_edges = col("bin_lo")[0]
    edges = np.append(lo_edges, float(rows[n_bins - 1]["bin_hi"]))
    config = GridConfig(
        prior=BetaParams(meta["prior_a"], meta["prior_b"]),
        n_recency_bins=n_bins,
        max_playcount=n_levels - 1,
        hdi_mass=meta["hdi_mass"],
        min_recency_s=meta["min_recency_s"],
    )
    return PosteriorGrid(
        config,
        BinSpec(edges, meta["min_recency_s"]),
        col("n_obs", int),
        col("n_pos", int),
        col("a_post"),
        col("b_post"),
        col("mean"),
        col("hdi_lo"),
        col("hdi_hi"),
    )


def export_cells(cells: list[GridCell], sink, bins: BinSpec | None = None):
    """Write a 1D curve (playcount or recency) in the grid CSV layout, plus a plotting centre."""
    if not hasattr(sink, "write"):
        with open(sink, "w", newline="", encoding="utf-8") as fh:
            return export_cells(cells, fh, bins)
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(GRID_COLUMNS + ["recency_center"])
    for c in cells:
        lo = hi = center = None
        if c.bin_index is not None and bins is not None:
            lo, hi = bins.edges[c.bin_index], bins.edges[c.bin_index + 1]
            center = 10 ** bins.log_centers[c.bin_index]
        w.writerow(
            [
                _fmt(c.playcount_level),
                _fmt(lo),
                _fmt(hi),
                _fmt(c.posterior.a),
                _fmt(c.posterior.b),
                _fmt(c.mean),
                _fmt(c.hdi.lo),
                _fmt(c.hdi.hi),
                _fmt(c.n_obs),
                _fmt(c.n_pos),
                _fmt(center),
            ]
        )
