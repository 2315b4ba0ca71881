"""Hierarchical Beta-mixture model for marks out of N.

For each (method m, school s, test t) group the students' accuracies are
drawn from a mixture of K Beta distributions:

    K              ~ geometric:  P(K) = (1 - lam) * lam**(K - 1)
    (alpha, beta)  ~ proBeta(kappa, a, b)      for each component
    weights        ~ Dirichlet(mu/K, ..., mu/K)
    k_u            ~ Categorical(weights)
    p_u            ~ Beta(alpha_{k_u}, beta_{k_u})
    n_u            ~ Binomial(N_{s,t}, p_u)

Groups share no parameters, so they can be fitted one at a time.
All densities are in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import betaln, gammaln

# polar box for (alpha, beta) = sigma * (cos theta, sin theta), sigma = exp(rho);
# prior mass outside is below 1e-10 for the default constants
RHO_MIN = math.log(1e-6)
RHO_MAX = math.log(1e6)
THETA_MIN = 1e-9
THETA_MAX = math.pi / 2 - 1e-9


@dataclass(frozen=True)
class Hyperparams:
    kappa: float = 0.01
    a: float = 0.4525
    b: float = 0.4525
    lam: float = 0.5
    mu: float = 1.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not (self.a > 0 and self.b > 0 and self.a + self.b < 1):
            raise ValueError("need a > 0, b > 0 and a + b < 1")
        if not 0 < self.lam < 1:
            raise ValueError("lambda must lie in (0, 1)")
        if not self.mu > 0:
            raise ValueError("mu must be positive")

    def as_dict(self) -> dict:
        return {"kappa": self.kappa, "a": self.a, "b": self.b, "lambda": self.lam, "mu": self.mu}


@dataclass(frozen=True)
class TestDesign:
    """Marks available per (school, test)."""

    __test__ = False

    marks: dict = field(default_factory=dict)

    def __post_init__(self):
        for key, n in self.marks.items():
            if int(n) != n or n < 0:
                raise ValueError(f"marks for {key} must be a non-negative integer")

    def schools(self) -> list[int]:
        return sorted({s for s, _ in self.marks})

    def tests(self, school: int) -> list[int]:
        return sorted(t for s, t in self.marks if s == school)

    def N(self, school: int, test: int) -> int:
        return int(self.marks[(school, test)])


@dataclass
class Dataset:
    """Marks per (method, school) as a students-by-tests integer array.

    Columns follow ``design.tests(school)``; row ``u`` is the same physical
    student in every column.  ``student_ids`` keeps the original labels.
    """

    design: TestDesign
    scores: dict = field(default_factory=dict)
    student_ids: dict = field(default_factory=dict)

    def __post_init__(self):
        for (m, s), arr in list(self.scores.items()):
            arr = np.asarray(arr, dtype=np.int64).reshape(-1, len(self.design.tests(s)))
            self.scores[(m, s)] = arr
            for j, t in enumerate(self.design.tests(s)):
                N = self.design.N(s, t)
                if np.any(arr[:, j] < 0) or np.any(arr[:, j] > N):
                    raise ValueError(f"marks out of range for method {m}, school {s}, test {t}")
            self.student_ids.setdefault((m, s), list(range(1, arr.shape[0] + 1)))

    def methods(self, school: int) -> list[int]:
        return sorted(m for m, s in self.scores if s == school)

    def n_students(self, method: int, school: int) -> int:
        return self.scores[(method, school)].shape[0]

    def marks(self, method: int, school: int, test: int) -> np.ndarray:
        col = self.design.tests(school).index(test)
        return self.scores[(method, school)][:, col]

    def groups(self):
        """Yield ``((m, s, t), n, N)`` for every group, in sorted order."""
        for m, s in sorted(self.scores):
            for t in self.design.tests(s):
                yield (m, s, t), self.marks(m, s, t), self.design.N(s, t)


# ---------------------------------------------------------------------------
# Densities
# ---------------------------------------------------------------------------


def log_proBeta(alpha, beta, hyper: Hyperparams):
    """Unnormalised log proBeta density of (alpha, beta)."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if np.any(alpha <= 0) or np.any(beta <= 0):
        raise ValueError("alpha and beta must be positive")
    out = hyper.kappa * (
        gammaln(alpha + beta) - gammaln(alpha) - gammaln(beta)
        + (alpha - 1.0) * math.log(hyper.a) + (beta - 1.0) * math.log(hyper.b)
    )
    return out.item() if out.ndim == 0 else out


def log_K_prior(K: int, lam: float) -> float:
    """Geometric prior on the number of components, K = 1, 2, ..."""
    if K < 1 or int(K) != K:
        raise ValueError("K must be a positive integer")
    return math.log1p(-lam) + (K - 1) * math.log(lam)


def log_dirichlet(weights, gamma) -> float:
    """Dirichlet log density with the extra 1/sqrt(K) factor.

    1/sqrt(K) turns the usual density (with respect to K-1 free weights)
    into a density with respect to surface area on the simplex.  The
    component-count move works on that measure, see ``mcmc.sample_K``.
    """
    w = np.asarray(weights, dtype=float)
    g = np.asarray(gamma, dtype=float)
    if w.shape != g.shape or w.ndim != 1:
        raise ValueError("weights and gamma must be vectors of equal length")
    if np.any(g <= 0):
        raise ValueError("gamma entries must be positive")
    if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must lie on the open simplex")
    K = w.size
    return float(
        -0.5 * math.log(K) + gammaln(g.sum()) - gammaln(g).sum() + np.sum((g - 1.0) * np.log(w))
    )


def log_binomial(n, N, p):
    n = np.asarray(n)
    N = np.asarray(N)
    p = np.asarray(p, dtype=float)
    if np.any(n < 0) or np.any(n > N):
        raise ValueError("need 0 <= n <= N")
    if np.any(p <= 0) or np.any(p >= 1):
        raise ValueError("p must lie in (0, 1)")
    log_comb = gammaln(N + 1.0) - gammaln(n + 1.0) - gammaln(N - n + 1.0)
    with np.errstate(invalid="ignore"):
        out = log_comb + np.where(n > 0, n * np.log(p), 0.0) + np.where(N - n > 0, (N - n) * np.log1p(-p), 0.0)
    return out.item() if out.ndim == 0 else out


def log_betabinomial(n, N, alpha, beta):
    """log of C(N, n) B(alpha + n, beta + N - n) / B(alpha, beta)."""
    n = np.asarray(n)
    N = np.asarray(N)
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if np.any(n < 0) or np.any(n > N):
        raise ValueError("need 0 <= n <= N")
    if np.any(alpha <= 0) or np.any(beta <= 0):
        raise ValueError("alpha and beta must be positive")
    log_comb = gammaln(N + 1.0) - gammaln(n + 1.0) - gammaln(N - n + 1.0)
    out = log_comb + betaln(alpha + n, beta + N - n) - betaln(alpha, beta)
    return out.item() if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Exact proBeta draws
# ---------------------------------------------------------------------------


def polar_log_density(rho, theta, hyper: Hyperparams):
    """proBeta log density in (rho, theta) coordinates, Jacobian sigma**2 included."""
    sigma = np.exp(rho)
    return log_proBeta(sigma * np.cos(theta), sigma * np.sin(theta), hyper) + 2.0 * rho


class ProBetaSampler:
    """Rejection sampler for proBeta built on a polar grid.

    Each grid cell gets a constant bound on the density (corner maximum
    plus a margin from the local first and second differences); a cell is
    picked in proportion to its bound, a point uniformly inside it, and
    the point is accepted with probability density / bound.  Any draw that
    exceeds its bound is counted in ``bound_violations``.
    """

    def __init__(self, hyper: Hyperparams, n_rho: int = 1200, n_theta: int = 400):
        self.hyper = hyper
        rho = np.linspace(RHO_MIN, RHO_MAX, n_rho + 1)
        theta = np.linspace(THETA_MIN, THETA_MAX, n_theta + 1)
        ell = polar_log_density(rho[:, None], theta[None, :], hyper)
        self.rho, self.theta = rho, theta
        self.d_rho, self.d_theta = rho[1] - rho[0], theta[1] - theta[0]

        corners = np.stack([ell[:-1, :-1], ell[1:, :-1], ell[:-1, 1:], ell[1:, 1:]])
        top = corners.max(axis=0)
        spread = corners.max(axis=0) - corners.min(axis=0)
        curv_r = np.abs(np.diff(ell, n=2, axis=0))
        curv_t = np.abs(np.diff(ell, n=2, axis=1))
        curv = np.zeros_like(top)
        curv[:-1, :] = np.maximum(curv[:-1, :], curv_r[:, :-1])
        curv[1:, :] = np.maximum(curv[1:, :], curv_r[:, :-1])
        curv[:, :-1] = np.maximum(curv[:, :-1], curv_t[:-1, :])
        curv[:, 1:] = np.maximum(curv[:, 1:], curv_t[:-1, :])
        self.log_bound = top + 0.5 * spread + curv + 1e-3

        shift = self.log_bound.max()
        mass = np.exp(self.log_bound - shift).ravel()
        self._cdf = np.cumsum(mass)
        self._cdf /= self._cdf[-1]
        self.bound_violations = 0
        self.draws = 0

        # trapezoid estimate of the normalising constant, kept for log-joint traces
        w_r = np.full(rho.size, self.d_rho)
        w_r[[0, -1]] *= 0.5
        w_t = np.full(theta.size, self.d_theta)
        w_t[[0, -1]] *= 0.5
        peak = ell.max()
        self.log_norm = float(peak + np.log(np.sum(np.exp(ell - peak) * w_r[:, None] * w_t[None, :])))

    def draw(self, rng: np.random.Generator, size: int | None = None):
        """Return (alpha, beta) arrays of length ``size`` (scalars if None)."""
        n = 1 if size is None else int(size)
        alpha = np.empty(n)
        beta = np.empty(n)
        filled = 0
        n_theta = self.theta.size - 1
        while filled < n:
            batch = max(16, 2 * (n - filled))
            cells = np.searchsorted(self._cdf, rng.random(batch), side="right")
            cells = np.minimum(cells, self._cdf.size - 1)
            i, j = np.divmod(cells, n_theta)
            rho = self.rho[i] + self.d_rho * rng.random(batch)
            theta = self.theta[j] + self.d_theta * rng.random(batch)
            ell = polar_log_density(rho, theta, self.hyper)
            excess = ell - self.log_bound[i, j]
            self.bound_violations += int(np.sum(excess > 0))
            keep = np.log(rng.random(batch)) < excess
            rho, theta = rho[keep], theta[keep]
            take = min(rho.size, n - filled)
            sigma = np.exp(rho[:take])
            alpha[filled:filled + take] = sigma * np.cos(theta[:take])
            beta[filled:filled + take] = sigma * np.sin(theta[:take])
            filled += take
        self.draws += n
        if size is None:
            return float(alpha[0]), float(beta[0])
        return alpha, beta


@lru_cache(maxsize=8)
def probeta_sampler(hyper: Hyperparams) -> ProBetaSampler:
    return ProBetaSampler(hyper)


# ---------------------------------------------------------------------------
# Forward simulation
# ---------------------------------------------------------------------------


def dirichlet_draw(rng: np.random.Generator, shape) -> np.ndarray:
    """Dirichlet draw built from log-gamma variates so tiny shapes do not underflow."""
    shape = np.asarray(shape, dtype=float)
    # log Gamma(s) = log Gamma(s + 1) + log(U) / s
    log_g = np.log(rng.gamma(shape + 1.0)) + np.log(rng.random(shape.size)) / shape
    log_g -= log_g.max()
    w = np.exp(log_g)
    w /= w.sum()
    # keep every weight strictly positive
    w = np.maximum(w, np.finfo(float).tiny)
    return w / w.sum()


@dataclass
class GroupTruth:
    K: int
    alpha: np.ndarray
    beta: np.ndarray
    weights: np.ndarray
    assignments: np.ndarray
    p: np.ndarray


def draw_group_prior(hyper: Hyperparams, n_students: int, rng: np.random.Generator,
                     k_max: int | None = None) -> GroupTruth:
    """Top-down draw of one group's latent variables (no marks)."""
    K = int(rng.geometric(1.0 - hyper.lam))
    if k_max is not None:
        while K > k_max:
            K = int(rng.geometric(1.0 - hyper.lam))
    alpha, beta = probeta_sampler(hyper).draw(rng, K)
    weights = dirichlet_draw(rng, np.full(K, hyper.mu / K))
    assignments = rng.choice(K, size=n_students, p=weights)
    p = rng.beta(alpha[assignments], beta[assignments]) if n_students else np.empty(0)
    return GroupTruth(K, alpha, beta, weights, assignments, p)


def forward_simulate(hyper: Hyperparams, design: TestDesign, group_sizes: dict, seed: int):
    """Draw a dataset and its latent truth from the full hierarchy.

    ``group_sizes`` maps (method, school) to the number of students.
    Returns ``(dataset, truth)`` with ``truth`` keyed by (method, school, test).
    """
    rng = np.random.default_rng(seed)
    scores = {}
    truth = {}
    for (m, s) in sorted(group_sizes):
        U = int(group_sizes[(m, s)])
        tests = design.tests(s)
        block = np.zeros((U, len(tests)), dtype=np.int64)
        for j, t in enumerate(tests):
            gt = draw_group_prior(hyper, U, rng)
            block[:, j] = rng.binomial(design.N(s, t), gt.p) if U else 0
            truth[(m, s, t)] = gt
        scores[(m, s)] = block
    return Dataset(design, scores), truth
