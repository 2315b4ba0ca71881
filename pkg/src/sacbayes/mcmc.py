"""Posterior sampling for the Beta-mixture model.

Each (method, school, test) group is sampled independently.  The student
accuracies are integrated out during the sweeps; a sweep visits

    assignments -> weights -> components -> K

and then the same list in reverse.  Component parameters are updated in
polar coordinates: first the scale along the ray from the origin through
the current point, then the angle, i.e. along the circle through the
current point centred on the origin, which crosses that ray at a right
angle.  Each of the two moves is one ARMS draw.  The number of
components changes by birth of an empty component or death of an empty
one.  Accuracies are drawn from their Beta conditionals only for stored
samples.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaln

from .arms import ArmsStats, arms
from .model import (
    RHO_MAX,
    RHO_MIN,
    THETA_MAX,
    THETA_MIN,
    Dataset,
    Hyperparams,
    dirichlet_draw,
    log_betabinomial,
    log_dirichlet,
    log_K_prior,
    log_proBeta,
    probeta_sampler,
)

logger = logging.getLogger(__name__)

_RHO_INIT = (-2.0, 2.0, 4.5, 6.5, 8.5, 11.0)


@dataclass(frozen=True)
class ChainConfig:
    n_samples: int = 10_000
    burn_in: int = 1_000
    thin: int = 1
    seed: int = 0
    ars_max_points: int = 50
    k_max: int = 50

    def __post_init__(self):
        if self.n_samples < 0 or self.burn_in < 0:
            raise ValueError("n_samples and burn_in must be non-negative")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if self.ars_max_points < 3:
            raise ValueError("ars_max_points must be at least 3")

    @property
    def n_stored(self) -> int:
        return self.n_samples // self.thin


@dataclass
class GroupState:
    """Latent state of one (method, school, test) group; assignments are 0-based."""

    K: int
    alpha: np.ndarray
    beta: np.ndarray
    weights: np.ndarray
    assignments: np.ndarray
    p: np.ndarray

    def counts(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.K)

    def copy(self) -> "GroupState":
        return GroupState(self.K, self.alpha.copy(), self.beta.copy(), self.weights.copy(),
                          self.assignments.copy(), self.p.copy())

    def check(self) -> None:
        assert self.K == self.alpha.size == self.beta.size == self.weights.size
        assert np.all(self.alpha > 0) and np.all(self.beta > 0)
        assert np.all(self.weights > 0) and abs(self.weights.sum() - 1.0) <= 1e-12
        assert np.all((self.assignments >= 0) & (self.assignments < self.K))


def group_gamma(state: GroupState, hyper: Hyperparams) -> np.ndarray:
    return np.full(state.K, hyper.mu / state.K)


@dataclass
class MoveStats:
    births_proposed: int = 0
    births_accepted: int = 0
    deaths_proposed: int = 0
    deaths_accepted: int = 0
    arms: ArmsStats = field(default_factory=ArmsStats)

    def merge(self, other: "MoveStats") -> None:
        self.births_proposed += other.births_proposed
        self.births_accepted += other.births_accepted
        self.deaths_proposed += other.deaths_proposed
        self.deaths_accepted += other.deaths_accepted
        self.arms.merge(other.arms)

    def as_dict(self) -> dict:
        proposed = self.births_proposed + self.deaths_proposed
        accepted = self.births_accepted + self.deaths_accepted
        return {
            "births_proposed": self.births_proposed,
            "births_accepted": self.births_accepted,
            "deaths_proposed": self.deaths_proposed,
            "deaths_accepted": self.deaths_accepted,
            "k_move_accept_rate": accepted / proposed if proposed else None,
            "arms": self.arms.as_dict(),
        }


# ---------------------------------------------------------------------------
# Log joint
# ---------------------------------------------------------------------------


def group_log_joint(state: GroupState, n: np.ndarray, N: int, hyper: Hyperparams) -> float:
    """Log joint of one group with accuracies integrated out (normalised proBeta)."""
    log_z = probeta_sampler(hyper).log_norm
    out = log_K_prior(state.K, hyper.lam)
    out += float(np.sum(log_proBeta(state.alpha, state.beta, hyper))) - state.K * log_z
    out += log_dirichlet(state.weights, group_gamma(state, hyper))
    if state.assignments.size:
        k = state.assignments
        out += float(np.sum(np.log(state.weights[k])))
        out += float(np.sum(log_betabinomial(n, N, state.alpha[k], state.beta[k])))
    return out


# ---------------------------------------------------------------------------
# Gibbs steps
# ---------------------------------------------------------------------------


def _assignment_logits(state: GroupState, n: np.ndarray, N: int) -> np.ndarray:
    logits = np.broadcast_to(np.log(state.weights), (n.size, state.K)).copy()
    if N > 0:
        a, b = state.alpha[None, :], state.beta[None, :]
        nn = n[:, None].astype(float)
        logits += (gammaln(a + nn) + gammaln(b + N - nn) - gammaln(a + b + N)
                   + gammaln(a + b) - gammaln(a) - gammaln(b))
    return logits


def assignment_probabilities(state: GroupState, n: np.ndarray, N: int) -> np.ndarray:
    logits = _assignment_logits(state, np.asarray(n), N)
    logits -= logits.max(axis=1, keepdims=True)
    prob = np.exp(logits)
    return prob / prob.sum(axis=1, keepdims=True)


def sample_assignment(u: int, state: GroupState, n: np.ndarray, N: int,
                      rng: np.random.Generator) -> int:
    """Draw student u's component with its accuracy integrated out."""
    if state.K == 1:
        return 0
    prob = assignment_probabilities(state, np.asarray(n)[u:u + 1], N)[0]
    return int(rng.choice(state.K, p=prob))


def sample_assignments(state: GroupState, n: np.ndarray, N: int, rng: np.random.Generator) -> None:
    """Redraw every assignment; students are conditionally independent, so this is a block draw."""
    if state.K == 1 or n.size == 0:
        state.assignments[:] = 0
        return
    logits = _assignment_logits(state, n, N)
    state.assignments[:] = np.argmax(logits + rng.gumbel(size=logits.shape), axis=1)


def sample_weights(state: GroupState, hyper: Hyperparams, rng: np.random.Generator) -> None:
    if state.K == 1:
        state.weights = np.ones(1)
        return
    state.weights = dirichlet_draw(rng, group_gamma(state, hyper) + state.counts())


def component_log_density(values: np.ndarray, counts: np.ndarray, N: int, hyper: Hyperparams):
    """Log conditional of one component's (alpha, beta) up to a constant.

    ``values``/``counts`` are the distinct marks of the students assigned to
    the component and how often each occurs.
    """
    kappa = hyper.kappa
    la, lb = math.log(hyper.a), math.log(hyper.b)
    lg = math.lgamma
    if N == 0 or counts.size == 0:
        pairs = ()
        total = 0
    else:
        pairs = tuple((float(v), int(c), float(N - v)) for v, c in zip(values, counts))
        total = int(counts.sum())
    weight = kappa + total

    def logf(alpha: float, beta: float) -> float:
        s = lg(alpha + beta) - lg(alpha) - lg(beta)
        out = weight * s + kappa * ((alpha - 1.0) * la + (beta - 1.0) * lb)
        if total:
            for v, c, rest in pairs:
                out += c * (lg(alpha + v) + lg(beta + rest))
            out -= total * lg(alpha + beta + N)
        return out

    return logf


def _theta_init(values: np.ndarray, counts: np.ndarray, N: int) -> list[float]:
    # abscissae from the pooled success rate; never from the current angle
    fixed = [0.02, 0.5, 0.98]
    if N > 0 and counts.size:
        total = counts.sum()
        rate = (float(np.dot(values, counts)) + 0.5) / (N * total + 1.0)
        se = math.sqrt(rate * (1.0 - rate) / (N * total + 1.0))
        fixed += [rate - 3 * se, rate, rate + 3 * se]
    xs = sorted({min(max(x, 1e-4), 1 - 1e-4) for x in fixed})
    return sorted(math.atan((1.0 - x) / x) for x in xs)


def sample_component(k: int, state: GroupState, n: np.ndarray, N: int, hyper: Hyperparams,
                     rng: np.random.Generator, max_points: int = 50,
                     stats: ArmsStats | None = None) -> tuple[float, float]:
    """Update component k: an ARMS draw of the scale, then one of the angle."""
    members = n[state.assignments == k]
    values, counts = np.unique(members, return_counts=True)
    logf = component_log_density(values, counts, N, hyper)
    alpha, beta = float(state.alpha[k]), float(state.beta[k])
    sigma = math.hypot(alpha, beta)
    rho = min(max(math.log(sigma), RHO_MIN + 1e-12), RHO_MAX - 1e-12)
    theta = min(max(math.atan2(beta, alpha), THETA_MIN + 1e-15), THETA_MAX - 1e-15)

    c, s = math.cos(theta), math.sin(theta)

    def radial(r):
        e = math.exp(r)
        return logf(e * c, e * s) + 2.0 * r

    rho = arms(radial, RHO_MIN, RHO_MAX, _RHO_INIT, rho, rng, max_points=max_points, stats=stats)
    sigma = math.exp(rho)

    def angular(t):
        return logf(sigma * math.cos(t), sigma * math.sin(t))

    theta = arms(angular, THETA_MIN, THETA_MAX, _theta_init(values, counts, N), theta, rng,
                 max_points=max_points, stats=stats)
    alpha, beta = sigma * math.cos(theta), sigma * math.sin(theta)
    state.alpha[k], state.beta[k] = alpha, beta
    return alpha, beta


def _birth_log_ratio(K: int, weights: np.ndarray, new_weights: np.ndarray, v: float,
                     n_students: int, n_empty_after: int, hyper: Hyperparams) -> float:
    """Log acceptance ratio for K -> K+1 with an empty newcomer.

    The newcomer's (alpha, beta) comes from its prior, which cancels.  Its
    weight v ~ Beta(1, K) and the old weights shrink by (1 - v); the
    Jacobian on surface measure is (1 - v)**(K-1) * sqrt((K+1)/K), and the
    Beta(1, K) density is K (1 - v)**(K-1).  Birth picks one of K+1 slots,
    death picks one of the empty components.
    """
    ratio = log_K_prior(K + 1, hyper.lam) - log_K_prior(K, hyper.lam)
    ratio += log_dirichlet(new_weights, np.full(K + 1, hyper.mu / (K + 1)))
    ratio -= log_dirichlet(weights, np.full(K, hyper.mu / K))
    ratio += n_students * math.log1p(-v)
    ratio += math.log(K + 1) - math.log(n_empty_after)
    ratio += -math.log(K) + 0.5 * math.log((K + 1) / K)
    return ratio


def sample_K(state: GroupState, hyper: Hyperparams, rng: np.random.Generator,
             k_max: int = 50, stats: MoveStats | None = None) -> bool:
    """Birth/death move on the number of components; returns True if accepted."""
    st = stats if stats is not None else MoveStats()
    K = state.K
    U = state.assignments.size
    if rng.random() < 0.5:
        st.births_proposed += 1
        if K >= k_max:
            return False
        slot = int(rng.integers(K + 1))
        a_new, b_new = probeta_sampler(hyper).draw(rng)
        v = float(rng.beta(1.0, K))
        if not 0.0 < v < 1.0:
            return False
        new_w = np.insert(state.weights * (1.0 - v), slot, v)
        new_w = np.maximum(new_w, np.finfo(float).tiny)
        new_w /= new_w.sum()
        n_empty_after = int(np.sum(state.counts() == 0)) + 1
        log_ratio = _birth_log_ratio(K, state.weights, new_w, v, U, n_empty_after, hyper)
        if math.log(rng.random()) < log_ratio:
            state.alpha = np.insert(state.alpha, slot, a_new)
            state.beta = np.insert(state.beta, slot, b_new)
            state.weights = new_w
            state.assignments[state.assignments >= slot] += 1
            state.K = K + 1
            st.births_accepted += 1
            return True
        return False

    st.deaths_proposed += 1
    if K == 1:
        return False
    empty = np.flatnonzero(state.counts() == 0)
    if empty.size == 0:
        return False
    j = int(empty[rng.integers(empty.size)])
    v = float(state.weights[j])
    kept = np.delete(state.weights, j)
    new_w = kept / kept.sum()
    log_ratio = -_birth_log_ratio(K - 1, new_w, state.weights, v, U, empty.size, hyper)
    if math.log(rng.random()) < log_ratio:
        state.alpha = np.delete(state.alpha, j)
        state.beta = np.delete(state.beta, j)
        state.weights = new_w
        state.assignments[state.assignments > j] -= 1
        state.K = K - 1
        st.deaths_accepted += 1
        return True
    return False


def resample_p(state: GroupState, n: np.ndarray, N: int, rng: np.random.Generator) -> None:
    """Draw each accuracy from Beta(alpha + n, beta + N - n) of its component."""
    if n.size == 0:
        state.p = np.empty(0)
        return
    k = state.assignments
    state.p = rng.beta(state.alpha[k] + n, state.beta[k] + (N - n))


def init_group(n: np.ndarray, N: int, rng: np.random.Generator) -> GroupState:
    """K = 1, (alpha, beta) = (1, 1), everyone in the single component."""
    n = np.asarray(n, dtype=np.int64)
    state = GroupState(1, np.ones(1), np.ones(1), np.ones(1), np.zeros(n.size, dtype=np.int64),
                       np.empty(0))
    resample_p(state, n, N, rng)
    return state


def sweep_group(state: GroupState, n: np.ndarray, N: int, hyper: Hyperparams,
                rng: np.random.Generator, k_max: int = 50, max_points: int = 50,
                stats: MoveStats | None = None) -> GroupState:
    """One palindromic pass: assignments, weights, components, K, then back."""
    st = stats if stats is not None else MoveStats()
    for step in ("assign", "weights", "components", "K", "K", "components", "weights", "assign"):
        if step == "assign":
            sample_assignments(state, n, N, rng)
        elif step == "weights":
            sample_weights(state, hyper, rng)
        elif step == "components":
            for k in range(state.K):
                sample_component(k, state, n, N, hyper, rng, max_points, st.arms)
        else:
            sample_K(state, hyper, rng, k_max, st)
    return state


# ---------------------------------------------------------------------------
# Whole-dataset chains
# ---------------------------------------------------------------------------

GroupKey = tuple  # (method, school, test)


def group_rng(seed: int, key: GroupKey) -> np.random.Generator:
    """Independent stream per group, so a group's draws do not depend on the others."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(x) for x in key)))


def init_state(dataset: Dataset, hyper: Hyperparams, seed: int) -> dict:
    return {key: init_group(n, N, group_rng(seed, key)) for key, n, N in dataset.groups()}


def sweep(state: dict, dataset: Dataset, hyper: Hyperparams, rng: np.random.Generator,
          k_max: int = 50, max_points: int = 50, stats: MoveStats | None = None) -> float:
    """Sweep every group in place with a shared generator; returns the total log joint."""
    total = 0.0
    for key, n, N in dataset.groups():
        sweep_group(state[key], n, N, hyper, rng, k_max, max_points, stats)
        total += group_log_joint(state[key], n, N, hyper)
    return total


@dataclass
class GroupSamples:
    key: GroupKey
    N: int
    n: np.ndarray
    K: np.ndarray
    alpha: list
    beta: list
    weights: list
    assignments: np.ndarray
    p: np.ndarray

    def state(self, i: int) -> GroupState:
        return GroupState(int(self.K[i]), np.asarray(self.alpha[i]), np.asarray(self.beta[i]),
                          np.asarray(self.weights[i]), self.assignments[i], self.p[i])


@dataclass
class SampleSet:
    """Stored post-burn-in states, one row per stored sweep."""

    groups: dict
    sweeps: np.ndarray
    log_joint: np.ndarray
    trace: np.ndarray
    config: ChainConfig
    hyper: Hyperparams
    diagnostics: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.sweeps.size)

    def state(self, i: int) -> dict:
        return {key: g.state(i) for key, g in self.groups.items()}

    def states(self):
        for i in range(len(self)):
            yield self.state(i)

    def p(self, method: int, school: int, test: int) -> np.ndarray:
        return self.groups[(method, school, test)].p

    def merge(self, other: "SampleSet") -> "SampleSet":
        """Combine sample sets fitted on disjoint groups (e.g. one per method)."""
        if len(self) != len(other):
            raise ValueError("sample sets must have the same number of samples")
        overlap = set(self.groups) & set(other.groups)
        if overlap:
            raise ValueError(f"groups fitted twice: {sorted(overlap)}")
        return replace(
            self,
            groups={**self.groups, **other.groups},
            log_joint=self.log_joint + other.log_joint,
            trace=self.trace + other.trace if self.trace.size == other.trace.size else self.trace,
            diagnostics={"merged": [self.diagnostics, other.diagnostics]},
        )


def run_group(n: np.ndarray, N: int, hyper: Hyperparams, config: ChainConfig,
              key: GroupKey = (1, 1, 1), stats: MoveStats | None = None):
    """Run one group's chain; returns (GroupSamples, per-sweep log-joint trace)."""
    n = np.asarray(n, dtype=np.int64)
    rng = group_rng(config.seed, key)
    state = init_group(n, N, rng)
    st = stats if stats is not None else MoveStats()
    total = config.burn_in + config.n_samples
    trace = np.empty(total)
    S = config.n_stored
    U = n.size
    K = np.empty(S, dtype=np.int64)
    alphas, betas, weights = [], [], []
    assignments = np.empty((S, U), dtype=np.int64)
    p = np.empty((S, U))
    stored = 0
    for it in range(total):
        sweep_group(state, n, N, hyper, rng, config.k_max, config.ars_max_points, st)
        trace[it] = group_log_joint(state, n, N, hyper)
        kept = it - config.burn_in
        if kept >= 0 and (kept + 1) % config.thin == 0 and stored < S:
            resample_p(state, n, N, rng)
            K[stored] = state.K
            alphas.append(state.alpha.copy())
            betas.append(state.beta.copy())
            weights.append(state.weights.copy())
            assignments[stored] = state.assignments
            p[stored] = state.p
            stored += 1
    return GroupSamples(key, int(N), n, K, alphas, betas, weights, assignments, p), trace


def run_chain(dataset: Dataset, hyper: Hyperparams, config: ChainConfig,
              groups=None) -> SampleSet:
    """Fit every group (or just ``groups``) and collect the stored samples."""
    total = config.burn_in + config.n_samples
    trace = np.zeros(total)
    out = {}
    stats = MoveStats()
    per_group_stats = {}
    for key, n, N in dataset.groups():
        if groups is not None and key not in groups:
            continue
        gst = MoveStats()
        gs, gtrace = run_group(n, N, hyper, config, key, gst)
        out[key] = gs
        trace += gtrace
        stats.merge(gst)
        per_group_stats[key] = gst.as_dict()
        logger.info("group %s: %s", key, gst.as_dict())
    S = config.n_stored
    sweeps = config.burn_in + config.thin * np.arange(1, S + 1) - 1
    log_joint = trace[sweeps] if S else np.empty(0)
    diagnostics = {
        "moves": stats.as_dict(),
        "groups": {",".join(map(str, k)): v for k, v in per_group_stats.items()},
        "probeta_bound_violations": probeta_sampler(hyper).bound_violations,
    }
    return SampleSet(out, sweeps, log_joint, trace, config, hyper, diagnostics)
