# %% [markdown]
# Beta posteriors for a listen probability
#
# A user has heard a track k times. At the next exposure they either listen
# (L = 1) or skip (L = 0). We treat the listen probability as Beta distributed
# and update it with observed counts.

# %%
from repconf.bayes import BetaParams, beta_hdi, beta_quantile, posterior_update, reg_inc_beta

prior = BetaParams(5, 5)
post = posterior_update(prior, successes=10, trials=10)
print("prior", prior, "mean", prior.mean)
print("posterior after 10/10 listens", post, "mean", post.mean)

# %% [markdown]
# Evidence arriving in batches gives the same posterior as pooled evidence.

# %%
seq = posterior_update(posterior_update(BetaParams(0.3, 7.1), 4, 9), 11, 12)
pooled = posterior_update(BetaParams(0.3, 7.1), 15, 21)
print(seq == pooled, seq)

# %% [markdown]
# The CDF is the regularized incomplete beta function; quantiles invert it.

# %%
for x in (0.5, 0.75, 0.9):
    print(f"I_{x}(15, 5) = {reg_inc_beta(x, 15, 5):.6f}")
q = beta_quantile(post, 0.025)
print("2.5% quantile", q, "round trip", reg_inc_beta(q, post.a, post.b))

# %% [markdown]
# The 95% highest density interval is the narrowest interval holding 95% of
# the mass. For a skewed posterior it is shifted relative to the equal-tailed
# interval and slightly narrower.

# %%
h = beta_hdi(post)
eq = (beta_quantile(post, 0.025), beta_quantile(post, 0.975))
print(f"HDI          [{h.lo:.4f}, {h.hi:.4f}] width {h.width:.4f}")
print(f"equal-tailed [{eq[0]:.4f}, {eq[1]:.4f}] width {eq[1] - eq[0]:.4f}")

# %% [markdown]
# More evidence narrows the interval. A strong prior (Beta(500, 500)) moves
# slowly: the same 10/10 run barely shifts it.

# %%
for n in (10, 100, 1000):
    p = posterior_update(prior, int(0.8 * n), n)
    print(n, "events -> width", round(beta_hdi(p).width, 4))
strong = posterior_update(BetaParams(500, 500), 10, 10)
print("strong prior mean", round(strong.mean, 4), "width", round(beta_hdi(strong).width, 4))
