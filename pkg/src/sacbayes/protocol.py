"""Synthetic scenarios, parallel fitting and the zero-question prior check."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import analysis
from .diagnostics import effective_sample_size, split_rhat
from .mcmc import ChainConfig, MoveStats, SampleSet, run_chain
from .model import Hyperparams, TestDesign, forward_simulate, probeta_sampler

logger = logging.getLogger(__name__)

PRIOR_CHECK_PROB = (0.48, 0.52)
PRIOR_CHECK_DIFF = 0.02
PRIOR_CHECK_STUDENT = (0.45, 0.55)


def scenario_design(schools: int = 1, tests: int = 2, marks: int = 50,
                    zero_questions: bool = False) -> TestDesign:
    N = 0 if zero_questions else marks
    return TestDesign({(s, t): N for s in range(1, schools + 1) for t in range(1, tests + 1)})


def simulate(hyper: Hyperparams | None = None, seed: int = 0, students: int = 70,
             schools: int = 1, tests: int = 2, marks: int = 50, zero_questions: bool = False):
    """Two methods per school, ``students`` each; returns (dataset, truth)."""
    hyper = hyper or Hyperparams()
    design = scenario_design(schools, tests, marks, zero_questions)
    sizes = {(m, s): students for s in range(1, schools + 1) for m in (1, 2)}
    return forward_simulate(hyper, design, sizes, seed)


# ---------------------------------------------------------------------------
# Fitting in parallel
# ---------------------------------------------------------------------------


def chain_seed(seed: int, chain: int) -> int:
    """Seed of chain ``chain``; chain 0 uses ``seed`` itself."""
    if chain == 0:
        return int(seed)
    ss = np.random.SeedSequence(int(seed), spawn_key=(0x5EED, chain))
    return int(ss.generate_state(1, np.uint64)[0])


def _fit_groups(args):
    dataset, hyper, config, keys = args
    return run_chain(dataset, hyper, config, groups=set(keys))


def _combine(parts, config: ChainConfig, hyper: Hyperparams) -> SampleSet:
    groups = {}
    trace = np.zeros(config.burn_in + config.n_samples)
    moves = MoveStats()
    per_group = {}
    for part in parts:
        groups.update(part.groups)
        trace += part.trace
        per_group.update(part.diagnostics["groups"])
        m = part.diagnostics["moves"]
        moves.births_proposed += m["births_proposed"]
        moves.births_accepted += m["births_accepted"]
        moves.deaths_proposed += m["deaths_proposed"]
        moves.deaths_accepted += m["deaths_accepted"]
        for k, v in m["arms"].items():
            if hasattr(moves.arms, k) and not k.endswith("_rate"):
                setattr(moves.arms, k, getattr(moves.arms, k) + v)
    S = config.n_stored
    sweeps = config.burn_in + config.thin * np.arange(1, S + 1) - 1
    diagnostics = {
        "moves": moves.as_dict(),
        "groups": dict(sorted(per_group.items())),
        "probeta_bound_violations": probeta_sampler(hyper).bound_violations,
    }
    return SampleSet(dict(sorted(groups.items())), sweeps, trace[sweeps] if S else np.empty(0),
                     trace, config, hyper, diagnostics)


def fit(dataset, hyper: Hyperparams, config: ChainConfig, workers: int = 1) -> SampleSet:
    """``run_chain`` with groups spread over worker processes.

    Groups have their own random streams, so the result does not depend on
    ``workers``.
    """
    keys = [key for key, _, _ in dataset.groups()]
    if workers <= 1 or len(keys) <= 1:
        return run_chain(dataset, hyper, config)
    batches = [keys[i::workers] for i in range(min(workers, len(keys)))]
    with ProcessPoolExecutor(len(batches)) as pool:
        parts = list(pool.map(_fit_groups, [(dataset, hyper, config, b) for b in batches]))
    return _combine(parts, config, hyper)


def fit_chains(dataset, hyper: Hyperparams, config: ChainConfig, chains: int,
               workers: int = 1) -> list[SampleSet]:
    """Independent chains with seeds split from ``config.seed``."""
    configs = [replace(config, seed=chain_seed(config.seed, c)) for c in range(chains)]
    if workers <= 1 or chains <= 1:
        return [fit(dataset, hyper, c) for c in configs]
    with ProcessPoolExecutor(min(workers, chains)) as pool:
        futures = [pool.submit(run_chain, dataset, hyper, c) for c in configs]
        return [f.result() for f in futures]


def chain_summary(chains: list[SampleSet]) -> dict:
    """Split R-hat and ESS for log-joint, K and mean accuracy of each group."""
    out = {"log_joint": {
        "rhat": split_rhat([c.log_joint for c in chains]),
        "ess": [effective_sample_size(c.log_joint) for c in chains],
    }}
    for key in chains[0].groups:
        name = ",".join(map(str, key))
        Ks = [c.groups[key].K.astype(float) for c in chains]
        means = [c.groups[key].p.mean(axis=1) if c.groups[key].p.shape[1] else np.zeros(len(c))
                 for c in chains]
        out[name] = {
            "K_rhat": split_rhat(Ks),
            "mean_p_rhat": split_rhat(means),
            "mean_p_ess": [effective_sample_size(m) for m in means],
        }
    return out


# ---------------------------------------------------------------------------
# Zero-question prior check
# ---------------------------------------------------------------------------


@dataclass
class PriorCheckReport:
    prob_method2_better: float
    expected_gain_diff: float
    student_probs: dict = field(default_factory=dict)
    n_samples: int = 0

    @property
    def prob_ok(self) -> bool:
        lo, hi = PRIOR_CHECK_PROB
        return lo <= self.prob_method2_better <= hi

    @property
    def diff_ok(self) -> bool:
        return abs(self.expected_gain_diff) <= PRIOR_CHECK_DIFF

    @property
    def students_ok(self) -> bool:
        lo, hi = PRIOR_CHECK_STUDENT
        return all(np.all((v >= lo) & (v <= hi)) for v in self.student_probs.values())

    @property
    def passed(self) -> bool:
        return self.prob_ok and self.diff_ok and self.students_ok

    def lines(self) -> list[str]:
        def tag(ok):
            return "PASS" if ok else "FAIL"

        lo, hi = PRIOR_CHECK_PROB
        out = [
            f"{tag(self.prob_ok)} P(method 2 gain > method 1 gain) = {self.prob_method2_better:.4f} "
            f"(required in [{lo}, {hi}])",
            f"{tag(self.diff_ok)} E(method 2 gain - method 1 gain) = {self.expected_gain_diff:+.4f} nats "
            f"(required |diff| <= {PRIOR_CHECK_DIFF})",
        ]
        slo, shi = PRIOR_CHECK_STUDENT
        for m, v in sorted(self.student_probs.items()):
            out.append(f"{tag(bool(np.all((v >= slo) & (v <= shi))))} method {m}: per-student P(gain > 0) "
                       f"in [{v.min():.4f}, {v.max():.4f}] (required within [{slo}, {shi}])")
        return out


def prior_check_report(samples: SampleSet, school: int = 1) -> PriorCheckReport:
    row = analysis.compare_methods(samples, samples, school)
    probs = {m: analysis.per_student_prob_gain(samples, m, school)[0] for m in (1, 2)}
    return PriorCheckReport(row.prob_method2_better, row.expected_gain_diff, probs, row.n_samples)


def end_to_end_prior_check(hyper: Hyperparams | None = None, seed: int = 0, students: int = 70,
                           n_samples: int = 10_000, burn_in: int = 1_000, workers: int = 1):
    """Fit two zero-question classes and check the induced prior on gains.

    Returns (report, samples).
    """
    hyper = hyper or Hyperparams()
    dataset, _ = simulate(hyper, seed, students=students, zero_questions=True)
    config = ChainConfig(n_samples=n_samples, burn_in=burn_in, seed=seed)
    samples = fit(dataset, hyper, config, workers)
    return prior_check_report(samples), samples
