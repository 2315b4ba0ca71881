# %% [markdown]
# # What the prior says about gains
#
# Fitting classes whose tests have no questions shows the prior the model
# places on pretest-to-posttest gains.  With identical priors for both
# methods the comparison should sit near a coin flip.

# %%
from sacbayes import protocol

# small settings so the script runs in seconds; the CLI default is 70 students and 10,000 samples.
# With 1,000 samples the per-student probabilities carry about +-0.03 of noise, so a line may read FAIL.
report, samples = protocol.end_to_end_prior_check(seed=11, students=20, n_samples=1_000, burn_in=200)
print("\n".join(report.lines()))

# %%
moves = samples.diagnostics["moves"]
print("K-move acceptance:", moves["k_move_accept_rate"])
print("ARMS fallbacks:", moves["arms"]["fallbacks"])
