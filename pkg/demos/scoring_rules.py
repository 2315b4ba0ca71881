# %% [markdown]
# # Confidence scoring rules
#
# A student answers a question and reports a confidence q that the answer
# is right.  A rule pays f(q) when right and g(q) when wrong.  A student
# whose true chance of being right is p expects h(p, q) = p f(q) + (1 - p) g(q).

# %%
import numpy as np

from sacbayes import scoring

rules = {name: scoring.get_rule(name) for name in sorted(scoring.RULES)}
for name, rule in rules.items():
    print(f"{name:18s} f(0.8) = {float(rule.right(0.8)):+.4f}   g(0.8) = {float(rule.wrong(0.8)):+.4f}")

# %% [markdown]
# Truthfulness: the best report for each p should be q = p.  The Foster
# rule pays +q or -q, so the best report jumps to 0 or 1.

# %%
for p in (0.3, 0.6, 0.9):
    best = {name: scoring.optimal_report(rule, p) for name, rule in rules.items()}
    print(p, {k: round(v, 3) for k, v in best.items()})

# %% [markdown]
# Reward for accuracy: h(p, p) should rise with p.  Symmetric rules only
# manage this above one half.

# %%
for name in ("log", "quadratic", "asymmetric"):
    rule = rules[name]
    print(name, scoring.check_C2(rule, 0.5).summary(), "|", scoring.check_C2(rule, 0.0).summary())

# %% [markdown]
# New members of the symmetric family come from any positive weight that
# is symmetric about one half.

# %%
rule = scoring.rule_from_spec({"kind": "cosine", "coefficients": [1.0, 0.4]})
print(rule.name, scoring.check_C1(rule).passed, scoring.check_C2(rule, 0.5).passed)

# %% [markdown]
# Deliberately answering wrong and reporting q = 0 under the combined rule.

# %%
print(scoring.sabotage_threshold().summary())

# %%
surface = scoring.expected_score_surface(rules["log"], resolution=11)
print(np.round(surface.values[::5, ::5], 3))
