"""Reading and writing marks, test designs, prior constants and samples.

Formats
-------
marks CSV     ``school,method,student,test,score``
design CSV    ``school,test,marks``
hyperparams   ``key=value`` lines with keys kappa, a, b, lambda, mu
samples       JSON lines, one stored state per line
"""

from __future__ import annotations

import csv
import hashlib
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from .model import Dataset, Hyperparams, TestDesign

DATA_HEADER = ["school", "method", "student", "test", "score"]
DESIGN_HEADER = ["school", "test", "marks"]
HYPER_KEYS = {"kappa": "kappa", "a": "a", "b": "b", "lambda": "lam", "mu": "mu"}


class DataFormatError(ValueError):
    """Malformed input file; the message names the file and line."""


def _int_field(value: str, name: str, path, line: int) -> int:
    try:
        return int(value.strip())
    except (TypeError, ValueError):
        raise DataFormatError(f"{path}:{line}: {name} must be an integer, got {value!r}") from None


def _rows(path, header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}:1: empty file, expected header {','.join(header)}") from None
        if [h.strip() for h in first] != header:
            raise DataFormatError(f"{path}:1: expected header {','.join(header)}, got {','.join(first)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
            yield line, row


def read_design(path) -> TestDesign:
    marks = {}
    for line, row in _rows(path, DESIGN_HEADER):
        school, test, N = (_int_field(v, k, path, line) for v, k in zip(row, DESIGN_HEADER))
        if N < 0:
            raise DataFormatError(f"{path}:{line}: marks must be non-negative")
        if (school, test) in marks:
            raise DataFormatError(f"{path}:{line}: duplicate design row for school {school}, test {test}")
        marks[(school, test)] = N
    return TestDesign(marks)


def read_dataset(data_path, design_path) -> Dataset:
    """Parse and validate marks against the test design."""
    design = read_design(design_path)
    seen = {}
    for line, row in _rows(data_path, DATA_HEADER):
        school, method, student, test, score = (
            _int_field(v, k, data_path, line) for v, k in zip(row, DATA_HEADER)
        )
        if method not in (1, 2):
            raise DataFormatError(f"{data_path}:{line}: method must be 1 or 2, got {method}")
        if (school, test) not in design.marks:
            raise DataFormatError(f"{data_path}:{line}: no design entry for school {school}, test {test}")
        N = design.marks[(school, test)]
        if not 0 <= score <= N:
            raise DataFormatError(f"{data_path}:{line}: score {score} outside 0..{N} for school {school}, test {test}")
        key = (school, method, student, test)
        if key in seen:
            raise DataFormatError(f"{data_path}:{line}: duplicate row for school {school}, method {method}, "
                                  f"student {student}, test {test} (first on line {seen[key][1]})")
        seen[key] = (score, line)

    students = {}
    for (school, method, student, _), _ in seen.items():
        students.setdefault((method, school), set()).add(student)
    scores = {}
    ids = {}
    for (method, school), members in sorted(students.items()):
        tests = design.tests(school)
        order = sorted(members)
        block = np.zeros((len(order), len(tests)), dtype=np.int64)
        for u, student in enumerate(order):
            for j, test in enumerate(tests):
                entry = seen.get((school, method, student, test))
                if entry is None:
                    raise DataFormatError(f"{data_path}: student {student} (school {school}, method {method}) "
                                          f"has no score for test {test}")
                block[u, j] = entry[0]
        scores[(method, school)] = block
        ids[(method, school)] = order
    return Dataset(design, scores, ids)


def write_dataset(dataset: Dataset, data_path, design_path) -> None:
    with open(design_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DESIGN_HEADER)
        for (school, test) in sorted(dataset.design.marks):
            w.writerow([school, test, dataset.design.N(school, test)])
    with open(data_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATA_HEADER)
        for (method, school) in sorted(dataset.scores, key=lambda k: (k[1], k[0])):
            block = dataset.scores[(method, school)]
            tests = dataset.design.tests(school)
            for u, student in enumerate(dataset.student_ids[(method, school)]):
                for j, test in enumerate(tests):
                    w.writerow([school, method, student, test, int(block[u, j])])


def read_hyperparams(path) -> Hyperparams:
    values = {}
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataFormatError(f"{path}:{line_no}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in HYPER_KEYS:
            raise DataFormatError(f"{path}:{line_no}: unknown key {key!r}")
        try:
            values[HYPER_KEYS[key]] = float(value)
        except ValueError:
            raise DataFormatError(f"{path}:{line_no}: {key} must be a number") from None
    try:
        return Hyperparams(**values)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from None


def write_hyperparams(hyper: Hyperparams, path) -> None:
    Path(path).write_text("".join(f"{k}={v!r}\n" for k, v in hyper.as_dict().items()))


# ---------------------------------------------------------------------------
# Samples
# ---------------------------------------------------------------------------


def write_samples(samples, path) -> None:
    """One JSON object per stored state; assignments are 0-based component indices."""
    from .mcmc import SampleSet  # noqa: F401  (type reference only)

    keys = sorted(samples.groups)
    with open(path, "w") as fh:
        header = {
            "kind": "header",
            "config": samples.config.__dict__,
            "hyperparams": samples.hyper.as_dict(),
            "groups": [
                {"method": k[0], "school": k[1], "test": k[2], "N": samples.groups[k].N,
                 "marks": samples.groups[k].n.tolist()}
                for k in keys
            ],
            "diagnostics": samples.diagnostics,
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i in range(len(samples)):
            row = {
                "sweep": int(samples.sweeps[i]),
                "log_joint": float(samples.log_joint[i]),
                "groups": [],
            }
            for k in keys:
                g = samples.groups[k]
                row["groups"].append({
                    "method": k[0], "school": k[1], "test": k[2],
                    "K": int(g.K[i]),
                    "alpha": [float(x) for x in g.alpha[i]],
                    "beta": [float(x) for x in g.beta[i]],
                    "weights": [float(x) for x in g.weights[i]],
                    "assignments": g.assignments[i].tolist(),
                    "p": [float(x) for x in g.p[i]],
                })
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_samples(path):
    from .mcmc import ChainConfig, GroupSamples, SampleSet

    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("kind") != "header":
            raise DataFormatError(f"{path}:1: missing header line")
        rows = [json.loads(line) for line in fh if line.strip()]
    config = ChainConfig(**header["config"])
    hyper = Hyperparams(**{HYPER_KEYS[k]: v for k, v in header["hyperparams"].items()})
    groups = {}
    for gi, g in enumerate(header["groups"]):
        key = (g["method"], g["school"], g["test"])
        entries = [r["groups"][gi] for r in rows]
        n = np.asarray(g["marks"], dtype=np.int64)
        groups[key] = GroupSamples(
            key, int(g["N"]), n,
            np.array([e["K"] for e in entries], dtype=np.int64),
            [np.asarray(e["alpha"]) for e in entries],
            [np.asarray(e["beta"]) for e in entries],
            [np.asarray(e["weights"]) for e in entries],
            np.array([e["assignments"] for e in entries], dtype=np.int64).reshape(len(rows), n.size),
            np.array([e["p"] for e in entries], dtype=float).reshape(len(rows), n.size),
        )
    sweeps = np.array([r["sweep"] for r in rows], dtype=np.int64)
    log_joint = np.array([r["log_joint"] for r in rows], dtype=float)
    return SampleSet(groups, sweeps, log_joint, log_joint.copy(), config, hyper,
                     header.get("diagnostics", {}))


def concat_samples(parts):
    """Stack sample sets of the same groups (e.g. independent chains) end to end."""
    from dataclasses import replace

    first = parts[0]
    keys = set(first.groups)
    for other in parts[1:]:
        if set(other.groups) != keys:
            raise ValueError("chains must cover the same groups")
    groups = {}
    for key in sorted(keys):
        gs = [p.groups[key] for p in parts]
        g0 = gs[0]
        groups[key] = replace(
            g0,
            K=np.concatenate([g.K for g in gs]),
            alpha=[a for g in gs for a in g.alpha],
            beta=[b for g in gs for b in g.beta],
            weights=[w for g in gs for w in g.weights],
            assignments=np.concatenate([g.assignments for g in gs]),
            p=np.concatenate([g.p for g in gs]),
        )
    return replace(
        first,
        groups=groups,
        sweeps=np.concatenate([p.sweeps for p in parts]),
        log_joint=np.concatenate([p.log_joint for p in parts]),
        trace=np.concatenate([p.trace for p in parts]),
        diagnostics={"chains": [p.diagnostics for p in parts]},
    )


def read_sample_files(paths):
    """Read sample files and combine them.

    Files covering the same groups are treated as chains and stacked;
    files covering disjoint groups (e.g. one per method) are merged.
    """
    by_groups = {}
    for path in paths:
        s = read_samples(path)
        by_groups.setdefault(frozenset(s.groups), []).append(s)
    if not by_groups:
        raise ValueError("no sample files given")
    merged = None
    for parts in by_groups.values():
        s = parts[0] if len(parts) == 1 else concat_samples(parts)
        merged = s if merged is None else merged.merge(s)
    return merged


# ---------------------------------------------------------------------------
# Run manifest
# ---------------------------------------------------------------------------


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, argv, config: dict, seed, inputs=(), started: float | None = None) -> Path:
    """Write ``manifest.json`` into ``out_dir`` (replacing any earlier one)."""
    import scipy

    from . import __version__

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command_line": list(argv),
        "config": config,
        "seed": seed,
        "inputs": {str(p): file_digest(p) for p in inputs},
        "versions": {
            "sacbayes": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "platform": sys.platform,
        "wall_clock_seconds": None if started is None else round(time.time() - started, 3),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
