"""Scoring functions for self-assessed confidence (SAC).

A student answers a question and reports a confidence ``q`` in ``[0, 1]``
that the answer is right.  A scoring rule is a pair of functions: ``f(q)``
is awarded for a right answer and ``g(q)`` for a wrong one.  If the answer
is right with probability ``p`` the expected score is

    h(p, q) = p * f(q) + (1 - p) * g(q).

A rule is *truthful* (condition C1) when ``q -> h(p, q)`` has its single
maximum at ``q = p``, and it *rewards accuracy* on ``J`` (condition C2)
when ``p -> h(p, p)`` is strictly increasing on ``J``.

Scores may be ``-inf`` (e.g. the log rule at ``q = 0`` for a right
answer).  Nothing here clips; clipping is only applied when a surface is
written out for plotting.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

ArrayFn = Callable[[np.ndarray], np.ndarray]

DEFAULT_QUAD_POINTS = 4097
DEFAULT_TOLERANCE = 1e-9
# closest approach to an endpoint when a family integral converges there
_ENDPOINT_EPS = 1e-16


@dataclass(frozen=True)
class ScoringRule:
    """Score ``f(q)`` for a right answer and ``g(q)`` for a wrong one.

    Both callables take and return numpy arrays.
    """

    name: str
    f: ArrayFn
    g: ArrayFn
    domain_note: str = ""
    symmetric: bool = False

    def right(self, q):
        return _apply(self.f, q)

    def wrong(self, q):
        return _apply(self.g, q)


def _apply(fn, q):
    arr = np.asarray(q, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.asarray(fn(arr), dtype=float)
    out = np.broadcast_to(out, arr.shape).copy() if out.shape != arr.shape else out
    return out.item() if out.ndim == 0 else out


def _check_confidence(q):
    arr = np.asarray(q, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("confidence must lie in [0, 1]")
    return arr


# ---------------------------------------------------------------------------
# Concrete rules
# ---------------------------------------------------------------------------


def foster_score(q: float, correct: bool) -> float:
    """+q for a right answer, -q for a wrong one."""
    q = float(_check_confidence(q))
    return q if correct else -q


def foster_rule() -> ScoringRule:
    return ScoringRule(
        name="foster",
        f=lambda q: q,
        g=lambda q: -q,
        domain_note="linear; not truthful (optimum at q=0 or q=1)",
    )


def log_rule() -> ScoringRule:
    """``log2(2q)`` right, ``log2(2(1-q))`` wrong."""
    return ScoringRule(
        name="log",
        f=lambda q: np.log2(2.0 * q),
        g=lambda q: np.log2(2.0 * (1.0 - q)),
        domain_note="f(0) = g(1) = -inf",
        symmetric=True,
    )


def quadratic_rule() -> ScoringRule:
    return ScoringRule(
        name="quadratic",
        f=lambda q: 2.0 * q - q**2,
        g=lambda q: 1.0 - q**2,
        domain_note="finite on [0, 1]",
        symmetric=True,
    )


def asymmetric_rule() -> ScoringRule:
    return ScoringRule(
        name="asymmetric",
        f=lambda q: 2.0 * q - q**2,
        g=lambda q: -(q**2),
        domain_note="finite on [0, 1]; h(p, p) = p**2",
    )


def scaled_asymmetric_rule() -> ScoringRule:
    return ScoringRule(
        name="scaled-asymmetric",
        f=lambda q: 2.0 * (2.0 * q - q**2) - 1.0,
        g=lambda q: -2.0 * q**2 - 1.0,
        domain_note="finite on [0, 1]; h(0, 1) = -3",
    )


def combined_rule() -> ScoringRule:
    """+1/-1 for correctness plus the log rule for the confidence."""
    return ScoringRule(
        name="combined",
        f=lambda q: 1.0 + np.log2(2.0 * q),
        g=lambda q: -1.0 + np.log2(2.0 * (1.0 - q)),
        domain_note="f(0) = g(1) = -inf",
    )


RULES: dict[str, Callable[[], ScoringRule]] = {
    "foster": foster_rule,
    "log": log_rule,
    "quadratic": quadratic_rule,
    "asymmetric": asymmetric_rule,
    "scaled-asymmetric": scaled_asymmetric_rule,
    "combined": combined_rule,
}


def get_rule(name: str) -> ScoringRule:
    try:
        return RULES[name]()
    except KeyError:
        raise KeyError(f"unknown rule {name!r}, try: " + ", ".join(RULES)) from None


# ---------------------------------------------------------------------------
# Expected score and optimal report
# ---------------------------------------------------------------------------


def expected_score(rule: ScoringRule, p, q):
    """``p f(q) + (1-p) g(q)``; a divergent branch only counts if its weight is positive."""
    p = np.asarray(p, dtype=float)
    q = _check_confidence(q)
    fq = np.asarray(rule.right(q), dtype=float)
    gq = np.asarray(rule.wrong(q), dtype=float)
    w_right, w_wrong = np.broadcast_arrays(p, 1.0 - p)
    with np.errstate(invalid="ignore"):
        right = np.where(w_right > 0, w_right * fq, 0.0)
        wrong = np.where(w_wrong > 0, w_wrong * gq, 0.0)
    out = right + wrong
    return out.item() if out.ndim == 0 else out


def report_grid(rule: ScoringRule, grid_size: int) -> np.ndarray:
    """Equally spaced reports on [0, 1], dropping endpoints where the rule diverges."""
    if grid_size < 3:
        raise ValueError("grid_size must be at least 3")
    q = np.linspace(0.0, 1.0, grid_size)
    ends = np.array([0.0, 1.0])
    finite = np.isfinite(rule.right(ends)) & np.isfinite(rule.wrong(ends))
    keep = np.ones(grid_size, dtype=bool)
    keep[0], keep[-1] = finite[0], finite[1]
    return q[keep]


def optimal_report(rule: ScoringRule, p: float, grid_size: int = 1001) -> float:
    """Grid argmax of the expected score over reports; ties go to the smallest q."""
    q = report_grid(rule, grid_size)
    h = np.asarray(expected_score(rule, p, q))
    return float(q[int(np.argmax(h))])


# ---------------------------------------------------------------------------
# Family constructors
# ---------------------------------------------------------------------------


def _simpson_weights(n: int) -> np.ndarray:
    if n < 3 or n % 2 == 0:
        raise ValueError("quad_points must be odd and at least 3")
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / 3.0


def _cumulative_simpson(fn: ArrayFn, lo: float, his: np.ndarray, quad_points: int) -> np.ndarray:
    """``int_lo^hi fn`` for every ``hi >= lo`` in one pass over the sorted targets.

    Each gap between consecutive targets gets its own Simpson rule with a
    step no larger than ``(max(his) - lo) / (quad_points - 1)``, so every
    integral is at least as fine as a dedicated ``quad_points`` rule.
    """
    order = np.argsort(his)
    edges = np.concatenate([[lo], his[order]])
    h_max = (edges[-1] - lo) / (quad_points - 1)
    lengths = np.diff(edges)
    if h_max <= 0:
        return np.zeros_like(his)
    n_int = np.maximum(2, 2 * np.ceil(lengths / (2 * h_max))).astype(np.int64)
    nodes = np.concatenate([np.linspace(a, b, k + 1) for a, b, k in zip(edges[:-1], edges[1:], n_int)])
    values = np.broadcast_to(np.asarray(fn(nodes), dtype=float), nodes.shape)
    weights = np.concatenate([_simpson_weights(k + 1) * (L / k) for L, k in zip(lengths, n_int)])
    starts = np.concatenate([[0], np.cumsum(n_int + 1)[:-1]])
    pieces = np.add.reduceat(values * weights, starts)
    pieces[lengths == 0] = 0.0
    out = np.empty_like(his)
    out[order] = np.cumsum(pieces)
    return out


def integrate_from_half(phi: ArrayFn, p, quad_points: int = DEFAULT_QUAD_POINTS):
    """``int_{1/2}^{p} phi(t) dt`` for each p in [0, 1], composite Simpson.

    Integrands may blow up like 1/t at 0 or 1/(1-t) at 1.  Below 1/2 the
    integral is taken in ``u = log t``, above 1/2 in ``v = -log(1-t)``,
    which keeps the transformed integrand bounded.  At an endpoint the
    integral is returned as +-inf when the transformed integrand does not
    vanish there.
    """
    p_arr = np.atleast_1d(np.asarray(p, dtype=float))
    out = np.zeros_like(p_arr)
    _simpson_weights(quad_points)

    def left(t):
        return phi(t) * t

    def right(t):
        return phi(t) * (1.0 - t)

    with np.errstate(divide="ignore", invalid="ignore"):
        for side, transformed, mask in (
            ("left", left, p_arr < 0.5),
            ("right", right, p_arr > 0.5),
        ):
            if not mask.any():
                continue
            targets = p_arr[mask].copy()
            vals = np.empty_like(targets)
            at_end = targets == (0.0 if side == "left" else 1.0)
            if at_end.any():
                if _converges_at_end(transformed, side):
                    targets[at_end] = _ENDPOINT_EPS if side == "left" else 1.0 - _ENDPOINT_EPS
                    at_end[:] = False
                else:
                    end = 1e-16 if side == "left" else 1.0 - 1e-16
                    sign = np.sign(float(np.asarray(transformed(np.array([end])))[0])) or 1.0
                    vals[at_end] = -sign * np.inf if side == "left" else sign * np.inf
            live = ~at_end
            if live.any():
                if side == "left":
                    lo, hi = np.log(0.5), np.log(targets[live])
                    vals[live] = -_cumulative_simpson(lambda x: transformed(np.exp(-x)), -lo, -hi,
                                                      quad_points)
                else:
                    lo, hi = np.log(2.0), -np.log1p(-targets[live])
                    vals[live] = _cumulative_simpson(lambda x: transformed(-np.expm1(-x)), lo, hi,
                                                     quad_points)
            out[mask] = vals
    return out.item() if np.ndim(p) == 0 else out


def _converges_at_end(transformed, side: str) -> bool:
    # the transformed integrand must decay towards the endpoint for a finite integral
    near, nearer = (1e-8, 1e-16) if side == "left" else (1.0 - 1e-8, 1.0 - 1e-16)
    a, b = np.abs(np.asarray(transformed(np.array([near, nearer])), dtype=float))
    if not (np.isfinite(a) and np.isfinite(b)):
        return False
    return b <= 1e-6 * max(a, 1e-300)


@dataclass(frozen=True)
class SymmetricWeight:
    """Positive weight ``m`` with ``m(x) = m(1 - x)``."""

    m: ArrayFn
    description: str = ""

    def __call__(self, x):
        return self.m(np.asarray(x, dtype=float))


def validate_weight(weight: SymmetricWeight, grid_size: int = 1001,
                    tolerance: float = DEFAULT_TOLERANCE) -> None:
    x = np.linspace(0.0, 1.0, grid_size)[1:-1]
    mx = np.broadcast_to(np.asarray(weight(x), dtype=float), x.shape)
    mrev = np.broadcast_to(np.asarray(weight(1.0 - x), dtype=float), x.shape)
    if not np.all(np.isfinite(mx)) or np.any(mx <= 0):
        bad = x[~(np.isfinite(mx) & (mx > 0))]
        raise ValueError(f"weight must be positive on (0, 1); fails at {bad[:5].tolist()}")
    gap = np.abs(mx - mrev)
    if np.any(gap > tolerance * np.maximum(1.0, np.abs(mx))):
        bad = x[gap > tolerance * np.maximum(1.0, np.abs(mx))]
        raise ValueError(f"weight is not symmetric about 1/2; fails at {bad[:5].tolist()}")


def build_symmetric_family(weight: SymmetricWeight | ArrayFn,
                           quad_points: int = DEFAULT_QUAD_POINTS,
                           name: str | None = None) -> ScoringRule:
    """Rule with ``f(p) = int_{1/2}^p m(t)/t dt`` and ``g(q) = f(1 - q)``.

    Any positive symmetric ``m`` gives a truthful rule that rewards accuracy
    for ``p > 1/2``; ``m = 1`` gives ``log(2p)``.
    """
    if not isinstance(weight, SymmetricWeight):
        weight = SymmetricWeight(weight)
    validate_weight(weight, grid_size=min(quad_points, 1001))

    def phi(t):
        return weight(t) / t

    def f(q):
        return integrate_from_half(phi, q, quad_points)

    def g(q):
        return integrate_from_half(phi, 1.0 - np.asarray(q, dtype=float), quad_points)

    return ScoringRule(
        name=name or f"symmetric[{weight.description or 'custom'}]",
        f=f,
        g=g,
        domain_note="f(1/2) = 0; integral of m(t)/t",
        symmetric=True,
    )


class FamilyError(ValueError):
    """Raised when a constructed (f, g) pair violates f > g."""

    def __init__(self, message: str, violations: np.ndarray):
        super().__init__(message)
        self.violations = violations


def build_asymmetric_family(f_deriv: ArrayFn, offset: float = 0.0,
                            quad_points: int = DEFAULT_QUAD_POINTS,
                            grid_size: int = 1001,
                            name: str | None = None) -> ScoringRule:
    """Pair with ``f' > 0`` and ``g'(t) = -t/(1-t) f'(t)``, both anchored at 1/2.

    ``f(p) = offset + int_{1/2}^p f'`` and ``g(p) = int_{1/2}^p g'``.  The
    offset has to be large enough that ``f > g`` everywhere on the grid.
    """
    x = np.linspace(0.0, 1.0, grid_size)[1:-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.broadcast_to(np.asarray(f_deriv(x), dtype=float), x.shape)
    if not np.all(np.isfinite(d)) or np.any(d <= 0):
        raise ValueError("f_deriv must be positive and finite on (0, 1)")

    def g_deriv(t):
        return -t / (1.0 - t) * f_deriv(t)

    def f(q):
        return offset + integrate_from_half(f_deriv, q, quad_points)

    def g(q):
        return integrate_from_half(g_deriv, q, quad_points)

    rule = ScoringRule(
        name=name or "asymmetric-family",
        f=f,
        g=g,
        domain_note=f"f(1/2) = {offset}, g(1/2) = 0",
    )
    fx, gx = np.asarray(rule.right(x)), np.asarray(rule.wrong(x))
    bad = x[~(fx > gx)]
    if bad.size:
        raise FamilyError(
            f"f <= g at {bad.size} grid points (first: {bad[:5].tolist()}); raise the offset",
            bad,
        )
    return rule


def min_asymmetric_offset(f_deriv: ArrayFn, quad_points: int = DEFAULT_QUAD_POINTS) -> float:
    """Infimum offset for which ``f > g`` on (0, 1): ``int_0^{1/2} f'(t)/(1-t) dt``.

    ``f - g`` is increasing, so only its limit at 0 matters.
    """
    return float(-integrate_from_half(lambda t: f_deriv(t) / (1.0 - t), 0.0, quad_points))


WEIGHT_KINDS = ("constant", "polynomial", "cosine")


def weight_function(kind: str, coefficients) -> ArrayFn:
    """Build ``x -> m(x)`` from a small declarative description.

    constant    m(x) = c0
    polynomial  m(x) = sum_k c_k x**k
    cosine      m(x) = sum_k c_k cos(2 pi k (x - 1/2)), symmetric by construction
    """
    c = np.asarray(coefficients, dtype=float)
    if c.ndim != 1 or c.size == 0:
        raise ValueError("coefficients must be a non-empty list of numbers")
    if kind == "constant":
        if c.size != 1:
            raise ValueError("a constant weight takes exactly one coefficient")
        return lambda x: np.full(np.shape(x), c[0])
    if kind == "polynomial":
        return lambda x: np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), c)
    if kind == "cosine":
        k = np.arange(c.size)
        return lambda x: np.cos(2 * np.pi * np.multiply.outer(np.asarray(x, dtype=float) - 0.5, k)) @ c
    raise ValueError(f"unknown weight kind {kind!r}; expected one of {', '.join(WEIGHT_KINDS)}")


def rule_from_spec(spec: dict, quad_points: int = DEFAULT_QUAD_POINTS) -> ScoringRule:
    """Construct a family member from a dict such as
    ``{"kind": "polynomial", "coefficients": [0, 1, -1]}``.

    ``"family"`` is ``"symmetric"`` (default; the function is the weight m)
    or ``"asymmetric"`` (the function is f' and ``"offset"`` sets f(1/2)).
    """
    family = spec.get("family", "symmetric")
    fn = weight_function(spec.get("kind", ""), spec.get("coefficients", []))
    label = f"{spec.get('kind')}{list(spec.get('coefficients', []))}"
    if family == "symmetric":
        return build_symmetric_family(SymmetricWeight(fn, label), quad_points)
    if family == "asymmetric":
        return build_asymmetric_family(fn, float(spec.get("offset", 0.0)), quad_points,
                                       name=f"asymmetric[{label}]")
    raise ValueError(f"unknown family {family!r}; expected symmetric or asymmetric")


# ---------------------------------------------------------------------------
# Condition checks
# ---------------------------------------------------------------------------


@dataclass
class CheckReport:
    passed: bool
    condition: str
    failures: list[float] = field(default_factory=list)
    detail: str = ""

    def __bool__(self) -> bool:
        return self.passed

    def summary(self) -> str:
        state = "pass" if self.passed else "fail"
        text = f"{self.condition}: {state}"
        if self.failures:
            shown = ", ".join(f"{v:.4g}" for v in self.failures[:8])
            more = "" if len(self.failures) <= 8 else f" (+{len(self.failures) - 8} more)"
            text += f" at p = {shown}{more}"
        if self.detail:
            text += f" [{self.detail}]"
        return text


def _count_local_maxima(h: np.ndarray, tolerance: float) -> int:
    # collapse runs of (near) equal values so plateaus count once
    vals = [h[0]]
    for v in h[1:]:
        if abs(v - vals[-1]) > tolerance:
            vals.append(v)
    if len(vals) == 1:
        return 0
    count = 0
    for i, v in enumerate(vals):
        left = vals[i - 1] if i > 0 else -np.inf
        right = vals[i + 1] if i + 1 < len(vals) else -np.inf
        if v > left and v > right:
            count += 1
    return count


def check_C1(rule: ScoringRule, grid_size: int = 501,
             tolerance: float = DEFAULT_TOLERANCE) -> CheckReport:
    """Check that each interior p has a single strict maximum of h(p, .) at q = p."""
    if grid_size < 101:
        raise ValueError("grid_size must be at least 101")
    grid = np.linspace(0.0, 1.0, grid_size)
    step = grid[1] - grid[0]
    q = grid[1:-1]
    fq, gq = np.asarray(rule.right(q)), np.asarray(rule.wrong(q))
    failures = []
    for p in q:
        h = p * fq + (1.0 - p) * gq
        best = q[int(np.argmax(h))]
        if abs(best - p) > step + tolerance or _count_local_maxima(h, tolerance) != 1:
            failures.append(float(p))
    return CheckReport(not failures, "C1", failures, f"grid={grid_size}")


def check_C2(rule: ScoringRule, j_lower: float = 0.5, grid_size: int = 501) -> CheckReport:
    """Check that p -> h(p, p) strictly increases over a grid on (j_lower, 1)."""
    if not 0.0 <= j_lower < 1.0:
        raise ValueError("j_lower must lie in [0, 1)")
    p = np.linspace(j_lower, 1.0, grid_size)[1:-1]
    hpp = p * np.asarray(rule.right(p)) + (1.0 - p) * np.asarray(rule.wrong(p))
    bad = np.nonzero(~(np.diff(hpp) > 0))[0]
    failures = [float(p[i + 1]) for i in bad]
    return CheckReport(not failures, f"C2 on ({j_lower:g}, 1)", failures, f"grid={grid_size}")


# ---------------------------------------------------------------------------
# Multiple choice and the sabotage incentive
# ---------------------------------------------------------------------------


def multichoice_log_score(probs, correct_index: int, tolerance: float = 1e-9) -> float:
    """Natural log of the probability placed on the right choice."""
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 1 or probs.size == 0:
        raise ValueError("probs must be a non-empty vector")
    if np.any(~np.isfinite(probs)) or np.any(probs < 0):
        raise ValueError("probabilities must be non-negative")
    if abs(probs.sum() - 1.0) > tolerance:
        raise ValueError(f"probabilities sum to {probs.sum()!r}, not 1")
    if not 0 <= correct_index < probs.size:
        raise IndexError("correct_index out of range")
    with np.errstate(divide="ignore"):
        return float(np.log(probs[correct_index]))


def multichoice_expected_score(truth, report) -> float:
    """``sum_k p_k log q_k`` with the 0 log 0 = 0 convention."""
    truth = np.asarray(truth, dtype=float)
    report = np.asarray(report, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(truth > 0, truth * np.log(report), 0.0)
    return float(terms.sum())


@dataclass
class SabotageReport:
    threshold: float
    stated: float
    sabotage_payoff: float
    grid_size: int

    @property
    def discrepancy(self) -> float:
        return self.threshold - self.stated

    def summary(self) -> str:
        return (
            f"computed threshold p* = {self.threshold:.4f} "
            f"(sabotage payoff {self.sabotage_payoff:+.4f}, grid {self.grid_size}); "
            f"stated value 0.2; DISCREPANCY = {self.discrepancy:+.4f}"
        )


STATED_SABOTAGE_THRESHOLD = 0.2


def sabotage_threshold(grid_size: int = 10001) -> SabotageReport:
    """Largest accuracy at which deliberately answering wrong pays under the combined rule.

    A saboteur gives a wrong answer and reports q = 0, scoring ``g(0)``.  A
    truthful student reports q = p and expects ``h(p, p)``.
    """
    if grid_size < 1001:
        raise ValueError("grid_size must be at least 1001")
    rule = combined_rule()
    p = np.linspace(0.0, 1.0, grid_size)[1:-1]
    truthful = np.asarray(expected_score(rule, p, p))
    sabotage = float(rule.wrong(0.0))
    winners = p[sabotage > truthful]
    threshold = float(winners.max()) if winners.size else 0.0
    return SabotageReport(threshold, STATED_SABOTAGE_THRESHOLD, sabotage, grid_size)


# ---------------------------------------------------------------------------
# Expected-score surfaces
# ---------------------------------------------------------------------------


@dataclass
class ExpectedScoreSurface:
    """``h`` on a p-by-q lattice; ``values[i, j] = h(p[i], q[j])``."""

    rule: ScoringRule
    p: np.ndarray
    q: np.ndarray
    values: np.ndarray

    @property
    def resolution(self) -> int:
        return self.p.size

    def to_csv(self, clip_floor: float | None = None) -> str:
        vals = self.values if clip_floor is None else np.maximum(self.values, clip_floor)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["p", "q", "h"])
        for i, p in enumerate(self.p):
            for j, q in enumerate(self.q):
                writer.writerow([repr(float(p)), repr(float(q)), repr(float(vals[i, j]))])
        return buf.getvalue()


def expected_score_surface(rule: ScoringRule, resolution: int = 101) -> ExpectedScoreSurface:
    """Lattice over [0, 1]^2 (accuracies on the open interval get the endpoints too)."""
    grid = np.linspace(0.0, 1.0, resolution)
    fq, gq = np.asarray(rule.right(grid)), np.asarray(rule.wrong(grid))
    pp = grid[:, None]
    with np.errstate(invalid="ignore"):
        right = np.where(pp > 0, pp * fq[None, :], 0.0)
        wrong = np.where(pp < 1, (1.0 - pp) * gq[None, :], 0.0)
    return ExpectedScoreSurface(rule, grid, grid.copy(), right + wrong)
