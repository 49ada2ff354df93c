# %% [markdown]
# Confidence weights for implicit ALS
#
# Each user also binge-loops one random off-taste item: many listens a few
# minutes apart. Linear play counts give those pairs large weights. The
# posterior-based sum_conf weight sums pi_hat / (c + HDI width) over the
# listens, which discounts listens that are routine in that region of the
# (playcount, recency) grid. Smaller than the acceptance run so it finishes
# in well under a minute.

# %%
import time

from repconf.als import AlsConfig
from repconf.bayes import BetaParams
from repconf.evaluation import grid_search, run_experiment, time_split, welch_t_test
from repconf.features import annotate
from repconf.grid import GridConfig, fit_grid
from repconf.synth import SynthConfig, generate
from repconf.weights import WeightConfig, compute_weights

t0 = time.perf_counter()
cfg = SynthConfig(
    n_users=1000,
    n_items=800,
    pairs_per_user=20,
    explore_pairs_per_user=20,
    noise_pairs_per_user=1,
    noise_events_per_pair=50,
    noise_listen_prob=0.9,
    noise_min_gap_s=134,
    noise_max_gap_s=900,
)
ints, truth = generate(cfg)
split = time_split(ints)
print(len(ints), "interactions;", len(split.users), "evaluation users")

# %% [markdown]
# Fit the grid on the training window only, then look at how the two schemes
# treat noise pairs relative to taste pairs.

# %%
grid = fit_grid(annotate(split.train), GridConfig(prior=BetaParams(500, 500), n_recency_bins=50, max_playcount=57))
noise_pairs = set(map(tuple, ints.loc[truth.noise_event, ["user", "item"]].drop_duplicates().to_numpy()))
for scheme in ("linear", "sum_conf"):
    wm = compute_weights(split.train, WeightConfig(scheme, cutoff_c=0.01), grid=grid, shape=split.shape)
    is_noise = [(int(u), int(i)) in noise_pairs for u, i in zip(wm.users, wm.items)]
    w_noise = wm.weights[is_noise].mean()
    w_rest = wm.weights[[not x for x in is_noise]].mean()
    print(f"{scheme:9s} mean weight noise/other = {w_noise / w_rest:.2f}")

# %% [markdown]
# Same protocol for both schemes: pick alpha on validation NDCG@10 (alpha is
# relative to the scheme's mean raw weight), then 10 seeded test runs.

# %%
als = AlsConfig(n_factors=32, reg_lambda=10.0, n_iterations=10)
reports = {}
for scheme in ("linear", "sum_conf"):
    res = grid_search(split, scheme, als, alphas=(0.5, 1.0, 2.0, 10.0), cutoff_c=0.01, grid=grid,
                      relative_alpha=True, base_seed=100)
    reports[scheme] = run_experiment(split, res.best_weight_cfg, als, n_runs=10, grid=grid)
    r = reports[scheme]
    print(f"{scheme:9s} alpha={res.table[[row['scale_alpha'] for row in res.table].index(res.best_weight_cfg.scale_alpha)]['alpha']:<5}"
          f" ndcg@10 {r.mean('ndcg@10'):.4f} +- {r.std('ndcg@10'):.4f}  recall@20 {r.mean('recall@20'):.4f}")

t = welch_t_test(reports["sum_conf"].per_run["ndcg@10"], reports["linear"].per_run["ndcg@10"], "greater")
print(f"Welch t = {t.t_stat:.2f}, df = {t.df:.1f}, one-sided p = {t.p_value:.3g}")
print(f"{time.perf_counter() - t0:.0f}s")
