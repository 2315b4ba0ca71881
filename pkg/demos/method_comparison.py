# %% [markdown]
# # Comparing two teaching methods
#
# Two schools, each teaching one class by method 1 and one by method 2,
# with a pretest and a posttest.  The tables report the posterior
# probability that method 2 gains more than method 1 and the expected
# difference in mean log-odds gain, for the whole class, halves and
# quartiles by pretest mark.

# %%
from sacbayes import analysis, protocol
from sacbayes.mcmc import ChainConfig, run_chain
from sacbayes.model import Hyperparams

hyper = Hyperparams()
dataset, _ = protocol.simulate(hyper, seed=31, students=24, schools=2, marks=30)
samples = run_chain(dataset, hyper, ChainConfig(n_samples=1_000, burn_in=200, seed=31))

# %%
for query in ("whole", "halves", "quartiles"):
    table = analysis.comparison_table(samples, samples, [1, 2], query)
    print(analysis.format_comparison_table(table), end="\n\n")

# %%
prob, marks = analysis.per_student_prob_gain(samples, 2, 1)
for mark, pr in sorted(zip(marks, prob), reverse=True)[:5]:
    print(f"pretest {mark:2d}: P(gain > 0) = {pr:.3f}")
