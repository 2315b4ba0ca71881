"""Posterior queries on fitted sample sets.

All quantities are functions of the stored accuracy vectors, so they are
unaffected by label switching among mixture components.  Gains are
differences of log-odds in nats; class averages weight students equally.
"""

from __future__ import annotations

import csv
import string
from dataclasses import dataclass

import numpy as np

EPS = 1e-12
WEIGHTING_NOTE = "class averages weight every student equally"
QUARTILE_NOTE = "when a class does not divide evenly the higher-ranked parts get the extra students"


def logit(p):
    p = np.clip(np.asarray(p, dtype=float), EPS, 1.0 - EPS)
    return np.log(p) - np.log1p(-p)


def _tests(samples, method: int, school: int) -> list[int]:
    return sorted(t for (m, s, t) in samples.groups if m == method and s == school)


def final_test(samples, method: int, school: int) -> int:
    tests = _tests(samples, method, school)
    if not tests:
        raise KeyError(f"no samples for method {method}, school {school}")
    return tests[-1]


def student_gains(samples, method: int, school: int, t_pre: int = 1, t_post: int | None = None) -> np.ndarray:
    """Per-sample, per-student log-odds gain from ``t_pre`` to ``t_post``.

    Returns an array of shape (samples, students).  ``t_post`` defaults to
    the last test of the school.
    """
    if t_post is None:
        t_post = final_test(samples, method, school)
    for t in (t_pre, t_post):
        if (method, school, t) not in samples.groups:
            raise KeyError(f"no samples for method {method}, school {school}, test {t}")
    pre = samples.p(method, school, t_pre)
    post = samples.p(method, school, t_post)
    if pre.shape != post.shape:
        raise ValueError(f"student sets differ between tests {t_pre} and {t_post} "
                         f"({pre.shape[1]} vs {post.shape[1]} students)")
    return logit(post) - logit(pre)


# ---------------------------------------------------------------------------
# Subsets by pretest mark
# ---------------------------------------------------------------------------


def partition_sizes(n: int, parts: int) -> list[int]:
    """Contiguous part sizes as equal as possible, larger parts first."""
    base, extra = divmod(n, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def partition_by_marks(marks, parts: int) -> dict[str, np.ndarray]:
    """Split student indices by mark, highest first; ties keep index order."""
    if parts < 1 or parts > 26:
        raise ValueError("parts must be between 1 and 26")
    marks = np.asarray(marks)
    # stable sort on the negated mark gives descending marks, ascending index
    order = np.argsort(-marks, kind="stable")
    out = {}
    start = 0
    for label, size in zip(string.ascii_lowercase, partition_sizes(marks.size, parts)):
        out[label] = np.sort(order[start:start + size])
        start += size
    return out


def pretest_marks(source, method: int, school: int, t_pre: int = 1) -> np.ndarray:
    """Pretest marks from a Dataset or a SampleSet."""
    if hasattr(source, "scores"):
        return source.marks(method, school, t_pre)
    return source.groups[(method, school, t_pre)].n


def subset_by_pretest(source, method: int, school: int, parts: int, t_pre: int = 1) -> dict[str, np.ndarray]:
    return partition_by_marks(pretest_marks(source, method, school, t_pre), parts)


# ---------------------------------------------------------------------------
# Method comparisons
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComparisonRow:
    school: int
    label: str
    prob_method2_better: float
    expected_gain_diff: float
    n_samples: int
    n_students: tuple

    def as_dict(self) -> dict:
        return {
            "school": self.school,
            "subset": self.label,
            "prob_method2_better": self.prob_method2_better,
            "expected_gain_diff_nats": self.expected_gain_diff,
            "n_method1": self.n_students[0],
            "n_method2": self.n_students[1],
        }


def exceedance_probability(diff) -> float:
    """Fraction of samples with diff > 0, ties counted as one half."""
    diff = np.asarray(diff, dtype=float)
    if diff.size == 0:
        raise ValueError("no samples")
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)


def compare_methods(samples1, samples2, school: int, subset=None, t_pre: int = 1,
                    t_post: int | None = None, label: str = "whole",
                    methods: tuple = (1, 2)) -> ComparisonRow:
    """Posterior comparison of mean class gains between two methods.

    ``subset`` is a pair of student index arrays (one per method), or None
    for the whole class.  ``methods`` names which method's group to read
    from ``samples1`` and ``samples2`` respectively.
    """
    m1, m2 = methods
    g1 = student_gains(samples1, m1, school, t_pre, t_post)
    g2 = student_gains(samples2, m2, school, t_pre, t_post)
    if g1.shape[0] != g2.shape[0]:
        raise ValueError(f"sample counts differ: {g1.shape[0]} vs {g2.shape[0]}")
    if subset is not None:
        i1, i2 = (np.asarray(s, dtype=np.int64) for s in subset)
        g1, g2 = g1[:, i1], g2[:, i2]
    if g1.shape[1] == 0 or g2.shape[1] == 0:
        raise ValueError(f"empty subset {label!r} for school {school}")
    diff = g2.mean(axis=1) - g1.mean(axis=1)
    return ComparisonRow(school, label, exceedance_probability(diff), float(diff.mean()),
                         int(diff.size), (g1.shape[1], g2.shape[1]))


QUERY_PARTS = {"whole": 1, "halves": 2, "quartiles": 4}


def comparison_rows(samples1, samples2, school: int, query: str = "whole", t_pre: int = 1,
                    t_post: int | None = None) -> list[ComparisonRow]:
    """Rows for one school: the whole class, halves a-b or quartiles a-d."""
    parts = QUERY_PARTS[query]
    if parts == 1:
        return [compare_methods(samples1, samples2, school, None, t_pre, t_post, "whole")]
    s1 = subset_by_pretest(samples1, 1, school, parts, t_pre)
    s2 = subset_by_pretest(samples2, 2, school, parts, t_pre)
    return [compare_methods(samples1, samples2, school, (s1[lab], s2[lab]), t_pre, t_post, lab)
            for lab in s1]


def comparison_table(samples1, samples2, schools, query: str = "whole", t_pre: int = 1,
                     posttest: int | None = None) -> list[list[ComparisonRow]]:
    return [comparison_rows(samples1, samples2, s, query, t_pre, posttest) for s in schools]


def table_header(labels) -> list[str]:
    return (["school"] + [f"prob_method2_better_{lab}" for lab in labels]
            + [f"expected_gain_diff_nats_{lab}" for lab in labels])


def write_comparison_csv(table, path) -> None:
    """Wide layout: one line per school, probabilities then expected differences."""
    labels = [r.label for r in table[0]] if table else ["whole"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table_header(labels))
        for rows in table:
            w.writerow([rows[0].school]
                       + [f"{r.prob_method2_better:.6f}" for r in rows]
                       + [f"{r.expected_gain_diff:+.6f}" for r in rows])


def format_comparison_table(table) -> str:
    """Plain-text rendering with the same columns as the CSV."""
    labels = [r.label for r in table[0]] if table else ["whole"]
    head = ["School"] + [f"P[{lab}]" for lab in labels] + [f"E[{lab}] (nats)" for lab in labels]
    lines = [" | ".join(head)]
    for rows in table:
        cells = ([str(rows[0].school)] + [f"{r.prob_method2_better:.3f}" for r in rows]
                 + [f"{r.expected_gain_diff:+.3f}" for r in rows])
        lines.append(" | ".join(cells))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Per-student summaries
# ---------------------------------------------------------------------------


def per_student_prob_gain(samples, method: int, school: int, t_post: int | None = None,
                          t_pre: int = 1):
    """(P(gain > 0) per student, pretest marks)."""
    g = student_gains(samples, method, school, t_pre, t_post)
    prob = (g > 0).mean(axis=0) if g.shape[0] else np.full(g.shape[1], np.nan)
    return prob, pretest_marks(samples, method, school, t_pre)


def per_student_expected_gain(samples, method: int, school: int, t_post: int | None = None,
                              t_pre: int = 1):
    """(posterior mean gain per student, pretest marks)."""
    g = student_gains(samples, method, school, t_pre, t_post)
    mean = g.mean(axis=0) if g.shape[0] else np.full(g.shape[1], np.nan)
    return mean, pretest_marks(samples, method, school, t_pre)


def write_per_student_csv(values, marks, path, column: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["student_index", "pretest_mark", column])
        for u, (mark, v) in enumerate(zip(marks, values)):
            w.writerow([u, int(mark), f"{v:.6f}"])


# ---------------------------------------------------------------------------
# Class CDF
# ---------------------------------------------------------------------------


def default_lattice(points: int = 101) -> np.ndarray:
    return np.linspace(0.0, 1.0, points)


def empirical_cdf(p, lattice) -> np.ndarray:
    """Class CDF at ``lattice`` for every row of ``p`` (samples x students)."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    if p.shape[1] == 0:
        return np.ones((p.shape[0], len(lattice)))
    sorted_p = np.sort(p, axis=1)
    counts = np.stack([np.searchsorted(row, lattice, side="right") for row in sorted_p])
    return counts / p.shape[1]


@dataclass
class CdfHeatmap:
    key: tuple
    lattice: np.ndarray
    levels: np.ndarray
    density: np.ndarray  # (lattice points, level bins)

    @property
    def bin_width(self) -> float:
        return 1.0 / self.levels.size

    def column_integrals(self) -> np.ndarray:
        return self.density.sum(axis=1) * self.bin_width

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["p", "level", "density"])
            for i, x in enumerate(self.lattice):
                for j, lev in enumerate(self.levels):
                    w.writerow([f"{x:.6g}", f"{lev:.6g}", f"{self.density[i, j]:.6g}"])


def read_heatmap_csv(path) -> CdfHeatmap:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    lattice = np.unique(data[:, 0])
    levels = np.unique(data[:, 1])
    density = data[:, 2].reshape(lattice.size, levels.size)
    return CdfHeatmap(None, lattice, levels, density)


def cdf_heatmap(samples, method: int, school: int, test: int, lattice=None,
                level_bins: int = 100) -> CdfHeatmap:
    """Posterior density of the class CDF level at each lattice point.

    Level bins are half-open [j/B, (j+1)/B) with the last bin closed, so
    the levels 0 and 1 are both counted.
    """
    lattice = default_lattice() if lattice is None else np.asarray(lattice, dtype=float)
    F = empirical_cdf(samples.p(method, school, test), lattice)
    idx = np.minimum((F * level_bins).astype(np.int64), level_bins - 1)
    density = np.zeros((lattice.size, level_bins))
    for i in range(lattice.size):
        density[i] = np.bincount(idx[:, i], minlength=level_bins)
    if F.shape[0]:
        density *= level_bins / F.shape[0]
    levels = (np.arange(level_bins) + 0.5) / level_bins
    return CdfHeatmap((method, school, test), lattice, levels, density)


def cdf_band(samples, method: int, school: int, test: int, lattice=None, mass: float = 0.95):
    """Central posterior band of the class CDF: (lattice, lower, upper)."""
    lattice = default_lattice() if lattice is None else np.asarray(lattice, dtype=float)
    F = empirical_cdf(samples.p(method, school, test), lattice)
    tail = (1.0 - mass) / 2.0
    lo, hi = np.quantile(F, [tail, 1.0 - tail], axis=0)
    return lattice, lo, hi


def band_coverage(truth_p, lattice, lower, upper) -> float:
    """Fraction of lattice points where the true class CDF lies inside the band."""
    true_cdf = empirical_cdf(truth_p, lattice)[0]
    inside = (true_cdf >= lower - 1e-12) & (true_cdf <= upper + 1e-12)
    return float(inside.mean())
