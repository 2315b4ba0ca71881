# %% [markdown]
# # Recovering a known class
#
# Draw a class of 70 students from the prior, fit it, and check that the
# posterior band for the class CDF covers the true one.

# %%
import numpy as np

from sacbayes import analysis
from sacbayes.mcmc import ChainConfig, run_chain
from sacbayes.model import Hyperparams, TestDesign, forward_simulate

hyper = Hyperparams()
dataset, truth = forward_simulate(hyper, TestDesign({(1, 1): 50}), {(1, 1): 70}, seed=21)
true_p = truth[(1, 1, 1)].p
print("true K:", truth[(1, 1, 1)].K, " mean accuracy:", round(float(true_p.mean()), 3))

# %%
samples = run_chain(dataset, hyper, ChainConfig(n_samples=2_000, burn_in=500, seed=21))
lattice, lo, hi = analysis.cdf_band(samples, 1, 1, 1)
print("coverage:", analysis.band_coverage(true_p, lattice, lo, hi))

# %%
true_cdf = analysis.empirical_cdf(true_p, lattice)[0]
for x in (0.2, 0.4, 0.6, 0.8):
    i = int(np.searchsorted(lattice, x))
    print(f"F({x}) true {true_cdf[i]:.3f} band [{lo[i]:.3f}, {hi[i]:.3f}]")

# %%
heatmap = analysis.cdf_heatmap(samples, 1, 1, 1)
print("columns integrate to", heatmap.column_integrals()[[0, 50, 100]])
