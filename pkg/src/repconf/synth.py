"""
Synthetic repeated-listening logs with a known listen probability.

Each user has a taste for a few item groups and discovers items from them
at random times. Every (user, item) pair then produces a sequence of
interactions whose listen probability depends on the number of earlier
listens (rise to a peak at ``peak_exposure``, then satiation) and on the
time since the last listen (boosted near whole days).

Two optional kinds of out-of-taste pairs can be mixed in: *exploration
pairs*, short trials of random items that follow the same listening model,
and *noise pairs*, binge loops of random items whose labels ignore the
listening model and pile up at high playcounts with short gaps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

DAY_S = 86400.0
TASTE, EXPLORE, NOISE = 0, 1, 2


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 2000
    n_items: int = 1000
    pairs_per_user: int = 30
    n_groups: int = 20
    groups_per_user: int = 2
    popularity_exponent: float = 0.8
    peak_exposure: int = 10
    base_prob: float = 0.55
    peak_prob: float = 0.85
    satiation_rate: float = 0.05
    daily_boost: float = 0.15
    daily_width_s: float = 3600.0
    mean_events_per_pair: float = 20.0
    # inter-event gap mixture: short replays, a daily mode and a broad tail
    gap_loop_frac: float = 0.15
    gap_loop_median_s: float = 600.0
    gap_loop_sigma: float = 0.8
    gap_daily_frac: float = 0.35
    gap_daily_sigma: float = 0.08
    gap_broad_median_s: float = 3 * DAY_S
    gap_broad_sigma: float = 1.2
    horizon_days: float = 120.0
    explore_pairs_per_user: int = 0
    explore_mean_events: float = 2.0
    noise_pairs_per_user: int = 0
    noise_events_per_pair: int = 45
    noise_listen_prob: float = 0.5
    noise_min_gap_s: float = 134.0
    noise_max_gap_s: float = 30 * DAY_S
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.base_prob <= self.peak_prob < 1:
            raise ValueError("need 0 < base_prob <= peak_prob < 1")
        if self.peak_exposure < 1:
            raise ValueError("peak_exposure must be >= 1")
        if self.satiation_rate < 0 or self.daily_boost < 0:
            raise ValueError("satiation_rate and daily_boost must be nonnegative")
        if self.gap_loop_frac + self.gap_daily_frac > 1:
            raise ValueError("gap mixture fractions exceed 1")
        if self.groups_per_user > self.n_groups:
            raise ValueError("groups_per_user exceeds n_groups")
        if self.mean_events_per_pair < 1:
            raise ValueError("mean_events_per_pair must be >= 1")


def _day_distance(recency_s):
    phase = np.mod(recency_s, DAY_S)
    return np.minimum(phase, DAY_S - phase)


def _prob_scalar(cfg: SynthConfig, k: float, r: float | None) -> float:
    x = k / cfg.peak_exposure
    p = cfg.base_prob + (cfg.peak_prob - cfg.base_prob) * x * math.exp(1.0 - x)
    p *= math.exp(-cfg.satiation_rate * max(0.0, k - cfg.peak_exposure))
    if r is not None and r == r:
        phase = r % DAY_S
        d = min(phase, DAY_S - phase)
        p *= 1.0 + cfg.daily_boost * math.exp(-0.5 * (d / cfg.daily_width_s) ** 2)
    return min(0.99, max(0.01, p))


def true_prob(cfg: SynthConfig, k, recency_s=None):
    """
    Listen probability after ``k`` earlier listens, ``recency_s`` seconds after the last one.

    Scalars in, float out; arrays broadcast. A missing recency (``None`` or
    NaN) disables the daily modulation.
    """
    if np.isscalar(k) and (recency_s is None or np.isscalar(recency_s)):
        return _prob_scalar(cfg, float(k), None if recency_s is None else float(recency_s))
    k = np.asarray(k, dtype=np.float64)
    r = np.asarray(np.nan if recency_s is None else recency_s, dtype=np.float64)
    x = k / cfg.peak_exposure
    p = cfg.base_prob + (cfg.peak_prob - cfg.base_prob) * x * np.exp(1.0 - x)
    p = p * np.exp(-cfg.satiation_rate * np.maximum(0.0, k - cfg.peak_exposure))
    with np.errstate(invalid="ignore"):
        d = _day_distance(r)
        bump = np.where(np.isfinite(r), np.exp(-0.5 * (d / cfg.daily_width_s) ** 2), 0.0)
    p = p * (1.0 + cfg.daily_boost * bump)
    return np.clip(p, 0.01, 0.99)


@dataclass(eq=False)
class GroundTruth:
    """Generator settings plus the probability used for each generated label."""

    config: SynthConfig
    event_prob: np.ndarray
    pair_kind: np.ndarray

    @property
    def noise_event(self) -> np.ndarray:
        return self.pair_kind == NOISE

    def __call__(self, k, recency_s=None):
        return true_prob(self.config, k, recency_s)

    def table(self, bins, max_playcount: int) -> pd.DataFrame:
        """``(k, recency_bin, p)`` at every level and bin geometric centre."""
        centers = 10 ** bins.log_centers
        kk, jj = np.meshgrid(np.arange(max_playcount + 1), np.arange(bins.n_bins), indexing="ij")
        p = true_prob(self.config, kk.ravel(), centers[jj.ravel()])
        return pd.DataFrame({"k": kk.ravel(), "recency_bin": jj.ravel(), "p": p})


def _draw_gaps(rng: np.random.Generator, cfg: SynthConfig, n: int) -> np.ndarray:
    comp = rng.random(n)
    z = rng.standard_normal(n)
    loop = comp < cfg.gap_loop_frac
    daily = (comp >= cfg.gap_loop_frac) & (comp < cfg.gap_loop_frac + cfg.gap_daily_frac)
    median = np.where(loop, cfg.gap_loop_median_s, np.where(daily, DAY_S, cfg.gap_broad_median_s))
    sigma = np.where(loop, cfg.gap_loop_sigma, np.where(daily, cfg.gap_daily_sigma, cfg.gap_broad_sigma))
    return np.maximum(1.0, np.round(median * np.exp(sigma * z)))


def _simulate_pair(rng, cfg, start, horizon, out_t, out_l, out_p, mean_events):
    n = int(rng.geometric(1.0 / mean_events))
    gaps = _draw_gaps(rng, cfg, n)
    coin = rng.random(n)
    t = start
    k = 0
    last_le = -1.0
    for e in range(n):
        r = t - last_le if last_le >= 0 else None
        p = _prob_scalar(cfg, k, r)
        lab = coin[e] < p
        out_t.append(t)
        out_l.append(lab)
        out_p.append(p)
        if lab:
            k += 1
            last_le = t
        t += gaps[e]
        if t > horizon:
            break


def _simulate_noise_pair(rng, cfg, start, horizon, out_t, out_l, out_p):
    n = cfg.noise_events_per_pair
    lo, hi = math.log(cfg.noise_min_gap_s), math.log(cfg.noise_max_gap_s)
    gaps = np.round(np.exp(rng.uniform(lo, hi, n)))
    coin = rng.random(n)
    t = start
    for e in range(n):
        out_t.append(t)
        out_l.append(coin[e] < cfg.noise_listen_prob)
        out_p.append(cfg.noise_listen_prob)
        t += gaps[e]
        if t > horizon:
            break


def _choose_items(rng, cfg: SynthConfig, group_of: np.ndarray, pop: np.ndarray, n: int):
    groups = rng.choice(cfg.n_groups, size=cfg.groups_per_user, replace=False)
    pool = np.flatnonzero(np.isin(group_of, groups))
    n = min(n, pool.size)
    w = pop[pool] / pop[pool].sum()
    return rng.choice(pool, size=n, replace=False, p=w)


def generate(cfg: SynthConfig) -> tuple[pd.DataFrame, GroundTruth]:
    """
    Simulate an interaction log.

    Returns the interactions (``user, item, timestamp, label``, canonical
    order) and the ground truth, whose ``event_prob`` and ``pair_kind``
    arrays are aligned with the returned rows. Every pair draws from its own
    random stream derived from ``(seed, user, item)``.
    """
    horizon = cfg.horizon_days * DAY_S
    group_of = np.arange(cfg.n_items) % cfg.n_groups
    rank = np.arange(cfg.n_items) // cfg.n_groups
    pop = 1.0 / (rank + 1.0) ** cfg.popularity_exponent

    users, items, stamps, labels, probs, kinds = [], [], [], [], [], []
    for u in range(cfg.n_users):
        urng = np.random.default_rng([cfg.seed, u])
        chosen = _choose_items(urng, cfg, group_of, pop, cfg.pairs_per_user)
        rest = np.setdiff1d(np.arange(cfg.n_items), chosen)
        n_out = min(cfg.explore_pairs_per_user + cfg.noise_pairs_per_user, rest.size)
        if n_out:
            outside = urng.choice(rest, size=n_out, replace=False, p=pop[rest] / pop[rest].sum())
        else:
            outside = rest[:0]
        explore_items = outside[: cfg.explore_pairs_per_user]
        noise_items = outside[cfg.explore_pairs_per_user :]
        for kind, item_list in ((TASTE, chosen), (EXPLORE, explore_items), (NOISE, noise_items)):
            for v in item_list:
                prng = np.random.default_rng([cfg.seed, u, int(v), kind])
                start = float(np.floor(prng.uniform(0.0, horizon)))
                t, l, p = [], [], []
                if kind == NOISE:
                    _simulate_noise_pair(prng, cfg, start, horizon, t, l, p)
                else:
                    mean_events = cfg.mean_events_per_pair if kind == TASTE else cfg.explore_mean_events
                    _simulate_pair(prng, cfg, start, horizon, t, l, p, mean_events)
                users.extend([u] * len(t))
                items.extend([int(v)] * len(t))
                stamps.extend(t)
                labels.extend(l)
                probs.extend(p)
                kinds.extend([kind] * len(t))

    frame = pd.DataFrame(
        {
            "user": np.asarray(users, dtype=np.int64),
            "item": np.asarray(items, dtype=np.int64),
            "timestamp": np.asarray(stamps, dtype=np.int64),
            "label": np.asarray(labels, dtype=np.int8),
        }
    )
    probs = np.asarray(probs, dtype=np.float64)
    kinds = np.asarray(kinds, dtype=np.int8)
    order = np.lexsort((np.arange(len(frame)), frame["timestamp"].to_numpy(), frame["user"].to_numpy()))
    frame = frame.iloc[order].reset_index(drop=True)
    return frame, GroundTruth(cfg, probs[order], kinds[order])
