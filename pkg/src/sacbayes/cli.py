"""Command-line entry point: ``sacbayes <subcommand> ...``.

Exit status is 0 on success, 1 when a check or input validation fails and
2 on I/O errors.  Nothing is read from the environment.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import analysis, io, protocol, scoring
from .mcmc import ChainConfig
from .model import Hyperparams

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class ValidationFailure(Exception):
    """A check ran and failed; reported with exit status 1."""


class _Parser(argparse.ArgumentParser):
    # bad flags are invalid input, so they share exit status 1
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def _hyper(path) -> Hyperparams:
    return io.read_hyperparams(path) if path else Hyperparams()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def _manifest(args, out_dir, config, seed=None, inputs=()):
    io.write_manifest(out_dir, args.argv, _jsonable(config), seed, inputs, args.started)


# ---------------------------------------------------------------------------
# scoring subcommands
# ---------------------------------------------------------------------------


def cmd_score(args) -> int:
    q = args.q / 10.0 if args.ten_point else args.q
    if args.ten_point and (args.q != int(args.q) or not 0 <= args.q <= 10):
        raise ValidationFailure("--ten-point confidence must be an integer from 0 to 10")
    if not 0.0 <= q <= 1.0:
        raise ValidationFailure(f"confidence {args.q} outside [0, 1]")
    rule = scoring.get_rule(args.rule)
    value = rule.right(q) if args.correct else rule.wrong(q)
    print(repr(float(value)))
    return EXIT_OK


def cmd_validate_rule(args) -> int:
    if args.weight_spec:
        spec = json.loads(Path(args.weight_spec).read_text())
        try:
            rule = scoring.rule_from_spec(spec)
        except (scoring.FamilyError, ValueError) as exc:
            print(f"construction failed: {exc}")
            print("SUMMARY rule=weight-spec C1=fail C2_half=fail C2_full=fail result=fail constructed=false")
            return EXIT_INVALID
    else:
        rule = scoring.get_rule(args.rule)
    c1 = scoring.check_C1(rule, grid_size=args.grid)
    c2_half = scoring.check_C2(rule, 0.5, grid_size=args.grid)
    c2_full = scoring.check_C2(rule, 0.0, grid_size=args.grid)
    print(f"rule: {rule.name}")
    for rep in (c1, c2_half, c2_full):
        print("  " + rep.summary())
    if rule.symmetric and not c2_full.passed:
        print("  note: symmetric rules cannot satisfy C2 on the whole of (0, 1)")
    required = c2_half if rule.symmetric else c2_full
    ok = c1.passed and required.passed
    tag = {True: "pass", False: "fail"}
    print(f"SUMMARY rule={rule.name} C1={tag[c1.passed]} C2_half={tag[c2_half.passed]} "
          f"C2_full={tag[c2_full.passed]} symmetric={str(rule.symmetric).lower()} "
          f"result={tag[ok]}")
    return EXIT_OK if ok else EXIT_INVALID


def cmd_surface(args) -> int:
    rule = scoring.get_rule(args.rule)
    text = scoring.expected_score_surface(rule, args.resolution).to_csv(args.clip_floor)
    if args.out is None:
        sys.stdout.write(text)
        return EXIT_OK
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    _manifest(args, out.parent, {"rule": args.rule, "resolution": args.resolution,
                                 "clip_floor": args.clip_floor})
    return EXIT_OK


# ---------------------------------------------------------------------------
# model subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    hyper = _hyper(args.config)
    dataset, truth = protocol.simulate(hyper, args.seed, students=args.students, schools=args.schools,
                                       tests=args.tests, marks=args.marks,
                                       zero_questions=args.zero_questions)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_dataset(dataset, out / "data.csv", out / "design.csv")
    with open(out / "truth.jsonl", "w") as fh:
        for (m, s, t), gt in sorted(truth.items()):
            fh.write(json.dumps({
                "method": m, "school": s, "test": t, "K": gt.K,
                "alpha": gt.alpha.tolist(), "beta": gt.beta.tolist(),
                "weights": gt.weights.tolist(), "assignments": gt.assignments.tolist(),
                "p": gt.p.tolist(),
            }, sort_keys=True) + "\n")
    _manifest(args, out, {"hyperparams": hyper.as_dict(), "students": args.students,
                          "schools": args.schools, "tests": args.tests,
                          "marks": 0 if args.zero_questions else args.marks}, args.seed,
              [p for p in [args.config] if p])
    rows = sum(b.size for b in dataset.scores.values())
    print(f"wrote {rows} scores for {len(dataset.scores)} classes to {out}")
    return EXIT_OK


def _chain_path(path: Path, chain: int, chains: int) -> Path:
    return path if chains == 1 else path.with_name(f"{path.stem}.chain{chain}{path.suffix}")


def cmd_fit(args) -> int:
    dataset = io.read_dataset(args.data, args.design)
    hyper = _hyper(args.config)
    config = ChainConfig(n_samples=args.n_samples, burn_in=args.burn_in, thin=args.thin,
                         seed=args.seed, k_max=args.k_max)
    n_rows = sum(b.size for b in dataset.scores.values())
    print(f"ingested {n_rows} scores, {sum(1 for _ in dataset.groups())} (method, school, test) groups")
    chains = protocol.fit_chains(dataset, hyper, config, args.chains, args.workers)
    out = Path(args.samples_out)
    out.parent.mkdir(parents=True, exist_ok=True)
    paths = []
    for c, samples in enumerate(chains):
        path = _chain_path(out, c, args.chains)
        io.write_samples(samples, path)
        paths.append(str(path))
        moves = samples.diagnostics["moves"]
        print(f"chain {c}: {len(samples)} samples -> {path}; K-move acceptance "
              f"{moves['k_move_accept_rate']}, ARMS fallbacks {moves['arms']['fallbacks']}")
    summary = protocol.chain_summary(chains) if args.chains > 1 else None
    if summary:
        print(f"split R-hat (log joint): {summary['log_joint']['rhat']:.4f}")
    _manifest(args, out.parent, {"chain": asdict(config), "chains": args.chains,
                                 "hyperparams": hyper.as_dict(), "outputs": paths,
                                 "convergence": summary}, args.seed,
              [args.data, args.design] + ([args.config] if args.config else []))
    return EXIT_OK


# ---------------------------------------------------------------------------
# analysis subcommands
# ---------------------------------------------------------------------------


def _schools(samples, school):
    if school is not None:
        return [school]
    return sorted({s for (_, s, _) in samples.groups})


def cmd_analyze(args) -> int:
    samples = io.read_sample_files(args.samples)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    schools = _schools(samples, args.school)
    written = []
    if args.query in analysis.QUERY_PARTS:
        table = analysis.comparison_table(samples, samples, schools, args.query,
                                          posttest=args.posttest)
        path = out / f"table_{args.query}.csv"
        analysis.write_comparison_csv(table, path)
        print(analysis.format_comparison_table(table))
        written.append(path)
    else:
        methods = [args.method] if args.method else [1, 2]
        for s in schools:
            for m in methods:
                if not any(k[:2] == (m, s) for k in samples.groups):
                    continue
                if args.query == "per-student-prob":
                    vals, marks = analysis.per_student_prob_gain(samples, m, s, args.posttest)
                    path = out / f"per_student_prob_m{m}_s{s}.csv"
                    analysis.write_per_student_csv(vals, marks, path, "prob_gain_positive")
                elif args.query == "per-student-gain":
                    vals, marks = analysis.per_student_expected_gain(samples, m, s, args.posttest)
                    path = out / f"per_student_gain_m{m}_s{s}.csv"
                    analysis.write_per_student_csv(vals, marks, path, "expected_gain_nats")
                else:
                    hm = analysis.cdf_heatmap(samples, m, s, args.test)
                    path = out / f"cdf_m{m}_s{s}_t{args.test}.csv"
                    hm.to_csv(path)
                written.append(path)
                print(f"wrote {path}")
    _manifest(args, out, {"query": args.query, "school": args.school, "posttest": args.posttest,
                          "method": args.method, "test": args.test,
                          "outputs": [str(p) for p in written],
                          "notes": [analysis.WEIGHTING_NOTE, analysis.QUARTILE_NOTE]},
              None, args.samples)
    return EXIT_OK


def cmd_prior_check(args) -> int:
    report, samples = protocol.end_to_end_prior_check(
        _hyper(args.config), args.seed, students=args.students, n_samples=args.n_samples,
        burn_in=args.burn_in, workers=args.workers)
    for line in report.lines():
        print(line)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        io.write_samples(samples, out / "prior_check_samples.jsonl")
        _manifest(args, out, {"students": args.students, "n_samples": args.n_samples,
                              "burn_in": args.burn_in, "passed": report.passed,
                              "prob_method2_better": report.prob_method2_better,
                              "expected_gain_diff": report.expected_gain_diff}, args.seed)
    print("prior check: " + ("PASS" if report.passed else "FAIL"))
    return EXIT_OK if report.passed else EXIT_INVALID


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sacbayes", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    rules = sorted(scoring.RULES)

    p = sub.add_parser("score", help="score one answer")
    p.add_argument("--rule", choices=rules, required=True)
    p.add_argument("--q", type=float, required=True, help="reported confidence in [0, 1]")
    p.add_argument("--correct", type=_bool, required=True, help="true or false")
    p.add_argument("--ten-point", action="store_true",
                   help="read --q as an integer 0..10 and divide by 10")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("validate-rule", help="check truthfulness (C1) and reward for accuracy (C2)")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--rule", choices=rules)
    g.add_argument("--weight-spec", metavar="FILE",
                   help='JSON such as {"kind": "cosine", "coefficients": [1, 0.5]}; optional '
                        '"family" (symmetric|asymmetric) and "offset"')
    p.add_argument("--grid", type=int, default=501, help="grid points on [0, 1] (at least 101)")
    p.set_defaults(func=cmd_validate_rule)

    p = sub.add_parser("surface", help="expected score h(p, q) on a lattice as CSV")
    p.add_argument("--rule", choices=rules, required=True)
    p.add_argument("--resolution", type=int, default=101)
    p.add_argument("--clip-floor", type=float, default=None, help="replace values below this")
    p.add_argument("--out", default=None, help="output CSV (default: stdout)")
    p.set_defaults(func=cmd_surface)

    p = sub.add_parser("simulate", help="draw a synthetic dataset from the prior")
    p.add_argument("--config", help="hyperparameter file (key=value)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--students", type=int, default=70, help="students per class")
    p.add_argument("--schools", type=int, default=1)
    p.add_argument("--tests", type=int, default=2)
    p.add_argument("--marks", type=int, default=50, help="marks per test")
    p.add_argument("--zero-questions", action="store_true", help="every test has zero marks")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run the sampler and write JSON-lines samples")
    p.add_argument("--data", required=True)
    p.add_argument("--design", required=True)
    p.add_argument("--config", help="hyperparameter file (key=value)")
    p.add_argument("--samples-out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-samples", type=int, default=10_000)
    p.add_argument("--burn-in", type=int, default=1_000)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--k-max", type=int, default=50)
    p.add_argument("--chains", type=int, default=1, help="independent chains (R-hat reported)")
    p.add_argument("--workers", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("analyze", help="posterior queries on fitted samples")
    p.add_argument("--samples", nargs="+", required=True,
                   help="sample files; one per method or per chain")
    p.add_argument("--query", required=True,
                   choices=["whole", "halves", "quartiles", "per-student-prob", "per-student-gain", "cdf"])
    p.add_argument("--school", type=int, default=None, help="default: every school")
    p.add_argument("--posttest", type=int, default=None, help="default: the last test")
    p.add_argument("--method", type=int, choices=[1, 2], default=None, help="default: both")
    p.add_argument("--test", type=int, default=1, help="test for --query cdf")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("prior-check", help="zero-question induced-prior protocol")
    p.add_argument("--config", help="hyperparameter file (key=value)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--students", type=int, default=70)
    p.add_argument("--n-samples", type=int, default=10_000)
    p.add_argument("--burn-in", type=int, default=1_000)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None, help="optional directory for samples and manifest")
    p.set_defaults(func=cmd_prior_check)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = ["sacbayes"] + argv
    args.started = time.time()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationFailure, io.DataFormatError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
