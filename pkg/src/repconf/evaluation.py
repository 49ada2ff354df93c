"""
Offline evaluation: time-window splits, ranking metrics, repeated runs and
Welch's t-test.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .als import AlsConfig, FactorModel, train
from .bayes import reg_inc_beta
from .grid import PosteriorGrid
from .weights import WeightConfig, WeightMatrix, compute_weights

_log = logging.getLogger(__name__)

METRICS = ("recall@10", "recall@20", "ndcg@10", "ndcg@20")


class EmptySplitError(ValueError):
    pass


@dataclass(frozen=True)
class SplitConfig:
    train_frac: float = 0.70
    val_frac_end: float = 0.85
    min_train_items_per_user: int = 10
    eval_items_per_user: int = 2

    def __post_init__(self):
        if not 0 < self.train_frac < self.val_frac_end < 1:
            raise ValueError("need 0 < train_frac < val_frac_end < 1")
        if self.eval_items_per_user < 1:
            raise ValueError("eval_items_per_user must be >= 1")


@dataclass(eq=False)
class Split:
    train: pd.DataFrame
    val: dict[int, list[int]]
    test: dict[int, list[int]]
    train_end: float
    val_end: float
    shape: tuple[int, int]

    @property
    def users(self) -> list[int]:
        return sorted(self.test)

    @property
    def train_items(self) -> np.ndarray:
        return np.unique(self.train["item"].to_numpy())


def _pick_eval_items(window: pd.DataFrame, users, train_items, exclude_pairs: pd.MultiIndex, n: int):
    w = window[(window["label"] == 1) & window["user"].isin(users) & window["item"].isin(train_items)]
    if len(w):
        key = pd.MultiIndex.from_frame(w[["user", "item"]])
        w = w[~key.isin(exclude_pairs)]
    first = w.groupby(["user", "item"], sort=False)["timestamp"].min().reset_index()
    # earliest first; equal timestamps resolved by item id
    first = first.sort_values(["user", "timestamp", "item"], kind="stable")
    first = first.groupby("user", sort=True).head(n)
    counts = first.groupby("user").size()
    ok = counts.index[counts == n]
    first = first[first["user"].isin(ok)]
    return {int(u): [int(i) for i in g["item"]] for u, g in first.groupby("user", sort=True)}


def time_split(ints: pd.DataFrame, cfg: SplitConfig = SplitConfig()) -> Split:
    """
    Split by global time window and enforce per-user evaluation constraints.

    The first ``train_frac`` of the window is training data, the span up to
    ``val_frac_end`` is validation and the rest is test. Users are removed
    until every remaining user has at least ``min_train_items_per_user``
    distinct training items and exactly ``eval_items_per_user`` validation and
    test items. Evaluation items are listened items that appear in the
    training data and that the user never interacted with before the window;
    the earliest ones are kept.
    """
    ts = ints["timestamp"].to_numpy(np.float64)
    t0, t1 = ts.min(), ts.max()
    train_end = t0 + cfg.train_frac * (t1 - t0)
    val_end = t0 + cfg.val_frac_end * (t1 - t0)
    train_all = ints[ts < train_end]
    val_all = ints[(ts >= train_end) & (ts < val_end)]
    test_all = ints[ts >= val_end]

    users = set(train_all["user"].unique().tolist())
    n_rounds = 0
    while True:
        n_rounds += 1
        train = train_all[train_all["user"].isin(users)]
        per_user = train.drop_duplicates(["user", "item"]).groupby("user").size()
        users = set(per_user.index[per_user >= cfg.min_train_items_per_user].tolist())
        train = train[train["user"].isin(users)]
        train_items = train["item"].unique()
        train_pairs = pd.MultiIndex.from_frame(train[["user", "item"]].drop_duplicates())
        val = _pick_eval_items(val_all, users, train_items, train_pairs, cfg.eval_items_per_user)
        val_pairs = pd.MultiIndex.from_frame(val_all[["user", "item"]].drop_duplicates())
        test = _pick_eval_items(test_all, users, train_items, train_pairs.union(val_pairs), cfg.eval_items_per_user)
        keep = users & set(val) & set(test)
        if keep == users:
            break
        users = keep
        if not users:
            break

    if not users:
        raise EmptySplitError(
            f"no user satisfies the split constraints ({len(ints)} interactions, "
            f"window [{t0}, {t1}], {n_rounds} rounds)"
        )
    shape = (int(ints["user"].max()) + 1, int(ints["item"].max()) + 1)
    return Split(train.reset_index(drop=True), val, test, float(train_end), float(val_end), shape)


def verify_split(split: Split, ints: pd.DataFrame, cfg: SplitConfig = SplitConfig()) -> list[str]:
    """Independent re-check of every split constraint; returns violation messages."""
    problems = []
    seen: dict[int, set] = {}
    for u, i in zip(split.train["user"].tolist(), split.train["item"].tolist()):
        seen.setdefault(u, set()).add(i)
    train_items = set(split.train["item"].tolist())
    if max(split.train["timestamp"], default=-math.inf) >= split.train_end:
        problems.append("training data extends past the training window")
    for u, items in seen.items():
        if len(items) < cfg.min_train_items_per_user:
            problems.append(f"user {u}: {len(items)} train items")
        for name, part in (("val", split.val), ("test", split.test)):
            chosen = part.get(u)
            if chosen is None:
                problems.append(f"user {u}: no {name} items")
                continue
            if len(set(chosen)) != cfg.eval_items_per_user or len(chosen) != cfg.eval_items_per_user:
                problems.append(f"user {u}: {len(chosen)} {name} items")
            for i in chosen:
                if i in items:
                    problems.append(f"user {u}: {name} item {i} seen in train")
                if i not in train_items:
                    problems.append(f"user {u}: {name} item {i} absent from train")
    for name, part in (("val", split.val), ("test", split.test)):
        for u in part:
            if u not in seen:
                problems.append(f"user {u}: {name} items without train history")
    # evaluation items must come from their window
    rows = ints[["user", "item", "timestamp", "label"]].itertuples(index=False)
    in_val, in_test = set(), set()
    for u, i, t, lab in rows:
        if lab == 1 and split.train_end <= t < split.val_end:
            in_val.add((u, i))
        elif lab == 1 and t >= split.val_end:
            in_test.add((u, i))
    for name, part, pool in (("val", split.val, in_val), ("test", split.test, in_test)):
        for u, chosen in part.items():
            for i in chosen:
                if (u, i) not in pool:
                    problems.append(f"user {u}: {name} item {i} has no listen in its window")
    return problems


def recall_at_k(ranked, relevant, K: int) -> float:
    relevant = set(relevant)
    if not relevant:
        raise ValueError("recall is undefined without relevant items")
    hits = sum(1 for i in list(ranked)[:K] if i in relevant)
    return hits / len(relevant)


def ndcg_at_k(ranked, relevant, K: int) -> float:
    """Binary-relevance NDCG with ``1 / log2(p + 1)`` discounts at 1-based positions."""
    relevant = set(relevant)
    if not relevant:
        raise ValueError("NDCG is undefined without relevant items")
    dcg = sum(1.0 / math.log2(p + 1) for p, i in enumerate(list(ranked)[:K], start=1) if i in relevant)
    idcg = sum(1.0 / math.log2(p + 1) for p in range(1, min(K, len(relevant)) + 1))
    return dcg / idcg


def evaluate_model(
    model: FactorModel,
    split: Split,
    target: str = "test",
    ks=(10, 20),
    exclude_val: bool = False,
) -> dict[str, float]:
    """
    Macro-averaged recall and NDCG over the split's users.

    Candidates are training items the user did not interact with in training;
    with ``exclude_val`` the user's validation items are removed as well.
    """
    truth = split.test if target == "test" else split.val
    users = sorted(truth)
    cand = split.train_items
    pos = {int(i): n for n, i in enumerate(cand)}
    scores = model.user_factors[users] @ model.item_factors[cand].T
    tr = split.train[split.train["user"].isin(users)]
    row_of = {u: n for n, u in enumerate(users)}
    rr = np.fromiter((row_of[u] for u in tr["user"].tolist()), dtype=np.int64, count=len(tr))
    cc = np.fromiter((pos[i] for i in tr["item"].tolist()), dtype=np.int64, count=len(tr))
    scores[rr, cc] = -np.inf
    if exclude_val and target == "test":
        for u in users:
            for i in split.val.get(u, ()):
                if i in pos:
                    scores[row_of[u], pos[i]] = -np.inf
    kmax = max(ks)
    # stable sort on the negated scores keeps ascending item id among ties
    top = np.argsort(-scores, axis=1, kind="stable")[:, :kmax]
    out = {f"{m}@{k}": 0.0 for m in ("recall", "ndcg") for k in ks}
    for n, u in enumerate(users):
        ranked = [int(cand[j]) for j in top[n] if np.isfinite(scores[n, j])]
        for k in ks:
            out[f"recall@{k}"] += recall_at_k(ranked, truth[u], k)
            out[f"ndcg@{k}"] += ndcg_at_k(ranked, truth[u], k)
    return {k: v / len(users) for k, v in out.items()}


@dataclass
class MetricsReport:
    scheme: str
    per_run: dict[str, list[float]]
    seeds: list[int]
    config: dict = field(default_factory=dict)

    @property
    def n_runs(self) -> int:
        return len(self.seeds)

    def mean(self, metric: str) -> float:
        return float(np.mean(self.per_run[metric]))

    def std(self, metric: str) -> float:
        return float(np.std(self.per_run[metric]))

    def to_kv(self) -> dict[str, str]:
        out = {"scheme": self.scheme, "n_runs": str(self.n_runs), "seeds": ",".join(map(str, self.seeds))}
        for k, v in self.config.items():
            out[f"config.{k}"] = str(v)
        for m in self.per_run:
            out[f"{m}.mean"] = repr(self.mean(m))
            out[f"{m}.std"] = repr(self.std(m))
            out[f"{m}.runs"] = ",".join(repr(float(x)) for x in self.per_run[m])
        return out

    def to_rows(self) -> list[dict]:
        return [
            {"scheme": self.scheme, "metric": m, "mean": self.mean(m), "std": self.std(m), "n_runs": self.n_runs}
            for m in self.per_run
        ]


def run_experiment(
    split: Split,
    weight_cfg: WeightConfig,
    als_cfg: AlsConfig,
    n_runs: int = 10,
    base_seed: int = 0,
    *,
    grid: PosteriorGrid | None = None,
    target: str = "test",
    exclude_val: bool = False,
    weights: WeightMatrix | None = None,
) -> MetricsReport:
    """Train ``n_runs`` models with consecutive seeds and aggregate their metrics."""
    if weights is None:
        weights = compute_weights(split.train, weight_cfg, grid=grid, shape=split.shape)
    per_run = {m: [] for m in METRICS}
    seeds = list(range(base_seed, base_seed + n_runs))
    for s in seeds:
        cfg = AlsConfig(
            n_factors=als_cfg.n_factors,
            reg_lambda=als_cfg.reg_lambda,
            n_iterations=als_cfg.n_iterations,
            seed=s,
            init_scale=als_cfg.init_scale,
        )
        model = train(weights, cfg)
        res = evaluate_model(model, split, target=target, exclude_val=exclude_val)
        for m in METRICS:
            per_run[m].append(res[m])
    echo = {
        "scheme": weight_cfg.scheme,
        "scale_alpha": weight_cfg.scale_alpha,
        "epsilon": weight_cfg.epsilon,
        "cutoff_c": weight_cfg.cutoff_c,
        "n_factors": als_cfg.n_factors,
        "reg_lambda": als_cfg.reg_lambda,
        "n_iterations": als_cfg.n_iterations,
        "target": target,
        "train_digest": frame_digest(split.train),
    }
    return MetricsReport(weight_cfg.scheme, per_run, seeds, echo)


@dataclass(frozen=True)
class TTestResult:
    t_stat: float
    p_value: float
    df: float


def _t_sf(t: float, df: float) -> float:
    """P(T > t) for Student's t with ``df`` degrees of freedom."""
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    tail = 0.5 * reg_inc_beta(df / (df + t * t), 0.5 * df, 0.5)
    return tail if t >= 0 else 1.0 - tail


def welch_t_test(a, b, alternative: str = "two-sided") -> TTestResult:
    """
    Welch's unequal-variance t-test of ``mean(a) - mean(b)``.

    ``alternative`` is ``"two-sided"``, ``"greater"`` (mean of ``a`` larger)
    or ``"less"``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least two values")
    if alternative not in ("two-sided", "greater", "less"):
        raise ValueError(f"unknown alternative {alternative!r}")
    na, nb = a.size, b.size
    va, vb = a.var(ddof=1) / na, b.var(ddof=1) / nb
    diff = a.mean() - b.mean()
    se2 = va + vb
    if se2 == 0.0:
        df = float(na + nb - 2)
        if diff == 0.0:
            return TTestResult(0.0, 1.0 if alternative == "two-sided" else 0.5, df)
        t = math.copysign(math.inf, diff)
    else:
        t = diff / math.sqrt(se2)
        # normalised shares keep the squares from underflowing
        ra, rb = va / se2, vb / se2
        df = 1.0 / (ra * ra / (na - 1) + rb * rb / (nb - 1))
    if alternative == "greater":
        p = _t_sf(t, df)
    elif alternative == "less":
        p = _t_sf(-t, df)
    else:
        p = min(1.0, 2.0 * _t_sf(abs(t), df))
    return TTestResult(float(t), float(p), float(df))


def frame_digest(frame: pd.DataFrame) -> str:
    """Git-style blob hash of the frame's CSV serialisation."""
    payload = frame.to_csv(index=False).encode("utf-8")
    h = hashlib.sha1(b"blob %d\0" % len(payload))
    h.update(payload)
    return h.hexdigest()


ALPHA_GRID = (0.1, 0.5, 1.0, 1.5, 2.0, 10.0, 40.0, 100.0)


@dataclass
class SearchResult:
    """Validation scores of every tried setting plus the winning configs."""

    best_weight_cfg: WeightConfig
    best_als_cfg: AlsConfig
    best_score: float
    metric: str
    table: list[dict]


def grid_search(
    split: Split,
    scheme: str,
    als_cfg: AlsConfig,
    *,
    alphas=ALPHA_GRID,
    epsilons=(1.0,),
    factors=None,
    cutoff_c: float = 0.1,
    grid: PosteriorGrid | None = None,
    relative_alpha: bool = False,
    metric: str = "ndcg@10",
    n_runs: int = 1,
    base_seed: int = 0,
) -> SearchResult:
    """
    Sweep scale, epsilon and rank on the validation users.

    ``epsilons`` is only swept for the ``log`` and ``log_pop`` schemes. With
    ``relative_alpha`` each alpha is divided by the mean raw weight of the
    scheme, so that different schemes are compared at matched overall
    confidence mass.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    factors = (als_cfg.n_factors,) if factors is None else tuple(factors)
    eps_list = tuple(epsilons) if scheme in ("log", "log_pop") else (1.0,)
    table = []
    best = None
    for eps in eps_list:
        raw = compute_weights(split.train, WeightConfig(scheme, 1.0, eps, cutoff_c), grid=grid, shape=split.shape)
        unit = 1.0 / float(np.mean(raw.weights)) if relative_alpha else 1.0
        for alpha in alphas:
            eff = alpha * unit
            wcfg = WeightConfig(scheme, eff, eps, cutoff_c)
            wm = WeightMatrix(raw.users, raw.items, raw.weights * eff, raw.shape)
            for d in factors:
                acfg = AlsConfig(d, als_cfg.reg_lambda, als_cfg.n_iterations, als_cfg.seed, als_cfg.init_scale)
                rep = run_experiment(split, wcfg, acfg, n_runs, base_seed, target="val", weights=wm)
                score = rep.mean(metric)
                table.append({"alpha": alpha, "scale_alpha": eff, "epsilon": eps, "n_factors": d, metric: score})
                _log.info("search %s alpha=%g eps=%g d=%d -> %s=%.5f", scheme, alpha, eps, d, metric, score)
                if best is None or score > best[0]:
                    best = (score, wcfg, acfg)
    return SearchResult(best[1], best[2], best[0], metric, table)
