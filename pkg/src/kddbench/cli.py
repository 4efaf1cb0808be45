"""``kddbench`` command line: count, sample, train, evaluate and bench.

Exit codes: 0 ok, 2 parse failure, 3 infeasible sampling plan, 4 training
failure, 5 schema digest mismatch, 64 usage error, 66 missing input.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .dataset import RecordError, SchemaError, census_file, load_schema
from .evaluate import EvaluationReport, evaluate_scores, render_report
from .model import ModelFormatError, SchemaDigestError, load_model, train_model
from .preprocess import (CATEGORIES, AttackTaxonomy, InfeasiblePlanError, LabelIndex, ManifestError,
                         gather, holdout_sample, load_plan, read_manifest, scale_plan,
                         stratified_sample, write_manifest)

log = logging.getLogger("kddbench")

EXIT_OK, EXIT_PARSE, EXIT_PLAN, EXIT_TRAIN, EXIT_DIGEST, EXIT_USAGE, EXIT_NOINPUT = 0, 2, 3, 4, 5, 64, 66

CLASSIFIERS = ("j48", "random-forest", "random-tree", "mlp", "naive-bayes", "bayes-net")
RESERVED = ("decision-table",)
DISPLAY = {"j48": "J48", "random-forest": "Random Forest", "random-tree": "Random Tree",
           "mlp": "MLP", "naive-bayes": "Naive Bayes", "bayes-net": "Bayes Net"}

ORDINAL_NOTE = ("train and test extracts are disjoint by record ordinal; the corpus repeats "
                "identical rows, so identical content may appear on both sides")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _hyperparameters(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("classifier settings")
    g.add_argument("--seed", type=int, default=1, help="classifier seed (forest, random tree, MLP)")
    g.add_argument("--confidence-factor", type=float, default=0.25)
    g.add_argument("--num-folds", type=int, default=3, help="only used with --reduced-error-pruning")
    g.add_argument("--reduced-error-pruning", action="store_true")
    g.add_argument("--unpruned", action="store_true")
    g.add_argument("--min-leaf", type=float, default=None)
    g.add_argument("--criterion", choices=("gain", "gain_ratio"), default="gain")
    g.add_argument("--num-trees", type=int, default=100)
    g.add_argument("--m-tries", type=int, default=None)
    g.add_argument("--min-gain", type=float, default=0.001)
    g.add_argument("--learning-rate", type=float, default=0.3)
    g.add_argument("--momentum", type=float, default=0.2)
    g.add_argument("--validation-threshold", type=int, default=20)
    g.add_argument("--validation-fraction", type=float, default=0.0)
    g.add_argument("--max-epochs", type=int, default=500)
    g.add_argument("--hidden", type=int, default=None)
    g.add_argument("--nb-alpha", type=float, default=1.0)
    g.add_argument("--bn-alpha", type=float, default=0.5)
    g.add_argument("--max-parents", type=int, default=1)
    g.add_argument("--bins", type=int, default=10)
    g.add_argument("--jobs", type=int, default=1, help="parallel workers for forest training")


def classifier_params(kind: str, a: argparse.Namespace) -> dict[str, Any]:
    if kind == "j48":
        p = {"confidence_factor": a.confidence_factor, "num_folds": a.num_folds,
             "reduced_error_pruning": a.reduced_error_pruning, "pruned": not a.unpruned,
             "criterion": a.criterion, "seed": a.seed}
        if a.min_leaf is not None:
            p["min_leaf"] = a.min_leaf
        return p
    if kind in ("random-tree", "random-forest"):
        p = {"m_tries": a.m_tries, "min_gain": a.min_gain, "seed": a.seed}
        if a.min_leaf is not None:
            p["min_leaf"] = a.min_leaf
        if kind == "random-forest":
            p.update(n_trees=a.num_trees, n_jobs=a.jobs)
        return p
    if kind == "mlp":
        return {"learning_rate": a.learning_rate, "momentum": a.momentum,
                "validation_threshold": a.validation_threshold,
                "validation_fraction": a.validation_fraction, "max_epochs": a.max_epochs,
                "hidden": a.hidden, "seed": a.seed}
    if kind == "naive-bayes":
        return {"alpha": a.nb_alpha}
    if kind == "bayes-net":
        return {"alpha": a.bn_alpha, "max_parents": a.max_parents, "bins": a.bins}
    raise CliError(EXIT_USAGE, f"unknown classifier {kind!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kddbench", description="KDD Cup 99 intrusion-detection benchmark.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--config", help="key = value file supplying defaults for any long option")
    sub = p.add_subparsers(dest="command", metavar="<count|sample|train|evaluate|bench>", parser_class=_Parser)

    def common(sp, corpus=True):
        if corpus:
            sp.add_argument("corpus", help="KDD text file (optionally gzip-compressed)")
        sp.add_argument("--schema", help="schema file (default: shipped KDD Cup 99 layout)")
        sp.add_argument("--skip-bad", action="store_true", help="skip malformed lines instead of aborting")

    c = sub.add_parser("count", help="per-label census as CSV")
    common(c)
    c.add_argument("-o", "--output", help="write CSV here instead of stdout")

    s = sub.add_parser("sample", help="draw the training extract and the hold-out test set")
    common(s)
    s.add_argument("--plan", help="sampling plan (default: shipped extract plan)")
    s.add_argument("--sample-seed", type=int, help="override the plan's seed")
    s.add_argument("--train-size", type=int, help="scale the plan's label mix to this many records")
    s.add_argument("--test-size", type=int, default=60000)
    s.add_argument("--train-manifest", default="train.manifest")
    s.add_argument("--test-manifest", default="test.manifest")

    t = sub.add_parser("train", help="train one classifier on a manifest")
    common(t)
    t.add_argument("--manifest", required=True)
    t.add_argument("--classifier", required=True, choices=CLASSIFIERS + RESERVED)
    t.add_argument("--model", required=True, help="output model file")
    t.add_argument("--log", help="training log path (default: <model>.log)")
    _hyperparameters(t)

    e = sub.add_parser("evaluate", help="score a model on a manifest")
    e.add_argument("model")
    common(e)
    e.add_argument("--manifest", required=True)
    e.add_argument("--report-dir", default=".")
    e.add_argument("--name", help="classifier name shown in the report")

    b = sub.add_parser("bench", help="sample, train every classifier, evaluate and report")
    common(b)
    b.add_argument("--out-dir", required=True)
    b.add_argument("--plan")
    b.add_argument("--sample-seed", type=int)
    b.add_argument("--train-size", type=int)
    b.add_argument("--test-size", type=int, default=60000)
    b.add_argument("--classifiers", default=",".join(CLASSIFIERS),
                   help="comma-separated subset, in report order")
    _hyperparameters(b)
    return p


_FLAGS = {"reduced_error_pruning", "unpruned", "skip_bad"}


def _read_config(path: str) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(EXIT_NOINPUT, f"cannot read config {path}: {exc.strerror}") from None
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(EXIT_USAGE, f"{path}:{lineno}: expected 'key = value'")
        k, v = (x.strip() for x in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def parse_args(argv: Sequence[str] | None) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        cfg = _read_config(known.config)
        sub = next((a for a in parser._subparsers._group_actions
                    if isinstance(a, argparse._SubParsersAction)), None)
        dests = {a.dest for sp in sub.choices.values() for a in sp._actions}
        unknown = set(cfg) - dests
        if unknown:
            raise CliError(EXIT_USAGE, f"unknown config keys: {', '.join(sorted(unknown))}")
        for k in _FLAGS & set(cfg):
            cfg[k] = cfg[k].lower() in ("1", "true", "yes", "on")
        for sp in sub.choices.values():
            sp.set_defaults(**{k: v for k, v in cfg.items()
                               if k in {a.dest for a in sp._actions}})
    args = parser.parse_args(argv)
    if args.command is None:
        parser.error("a command is required")
    return args


def _require(path: str | None, what: str) -> None:
    if path is not None and not os.path.exists(path):
        raise CliError(EXIT_NOINPUT, f"{what} not found: {path}")


def _schema(args):
    _require(args.schema, "schema file")
    return load_schema(args.schema)


def _errors(args) -> str:
    return "skip" if args.skip_bad else "raise"


def cmd_count(args) -> int:
    _require(args.corpus, "corpus")
    schema = _schema(args)
    result, stats = census_file(args.corpus, schema, _errors(args))
    text = result.to_csv()
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    if stats.bad_records:
        log.warning("skipped %d malformed lines", stats.bad_records)
    return EXIT_OK


def _draw(args, schema):
    index = LabelIndex.from_source(args.corpus, schema, _errors(args))
    _require(args.plan, "plan file")
    plan = load_plan(args.plan)
    if args.sample_seed is not None:
        plan.seed = args.sample_seed
    if args.train_size is not None:
        plan = scale_plan(plan, index.census(), args.train_size)
    train = stratified_sample(index, plan)
    split = holdout_sample(index, train, args.test_size, plan.seed, AttackTaxonomy.default())
    return split, plan


def cmd_sample(args) -> int:
    _require(args.corpus, "corpus")
    schema = _schema(args)
    split, _ = _draw(args, schema)
    write_manifest(args.train_manifest, split.train, "train")
    write_manifest(args.test_manifest, split.test, "test")
    log.info("train %d, test %d ordinals", len(split.train), len(split.test))
    return EXIT_OK


def _load_rows(corpus, schema, ordinals, errors):
    batch = gather(corpus, schema, ordinals, errors)
    y = AttackTaxonomy.default().class_indices(batch.label_names, batch.labels)
    keep = y >= 0
    if not keep.all():
        log.warning("dropping %d records whose label is outside the taxonomy", int((~keep).sum()))
    return batch.values[keep], y[keep]


def _train(kind: str, X, y, schema, args):
    if kind in RESERVED:
        raise CliError(EXIT_TRAIN, f"classifier {kind!r} is not implemented")
    if len(y) == 0:
        raise CliError(EXIT_TRAIN, "no training records")
    try:
        return train_model(kind, X, y, schema, classifier_params(kind, args))
    except CliError:
        raise
    except (ArithmeticError, ValueError, RuntimeError) as exc:
        raise CliError(EXIT_TRAIN, f"training {kind} failed: {exc}") from exc


def _training_log(model, X, y) -> str:
    est = model.estimator
    if hasattr(est, "log") and hasattr(est.log, "to_csv"):
        return est.log.to_csv()
    lines = ["key,value", f"classifier,{model.kind}", f"instances,{len(y)}"]
    lines += [f"{k},{v}" for k, v in sorted(model.meta.items()) if k != "classifier"]
    if model.kind == "random-forest":
        try:
            lines.append(f"oob_error,{est.oob_error(model.prepare(X), y):.17g}")
        except ValueError:
            lines.append("oob_error,undefined")
    return "\n".join(lines) + "\n"


def cmd_train(args) -> int:
    _require(args.corpus, "corpus")
    _require(args.manifest, "manifest")
    schema = _schema(args)
    if args.classifier in RESERVED:
        raise CliError(EXIT_TRAIN, f"classifier {args.classifier!r} is not implemented")
    _, ordinals = read_manifest(args.manifest)
    X, y = _load_rows(args.corpus, schema, ordinals, _errors(args))
    model = _train(args.classifier, X, y, schema, args)
    model.save(args.model)
    Path(args.log or args.model + ".log").write_text(_training_log(model, X, y))
    return EXIT_OK


def _evaluate(model, X, y, name: str) -> EvaluationReport:
    probs = model.predict_distribution(X) if len(y) else np.empty((0, len(CATEGORIES)))
    return evaluate_scores(name, y, probs, CATEGORIES, model.meta)


def _write_reports(reports, out_dir: Path, notes=()) -> None:
    text, csv = render_report(reports, notes)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.txt").write_text(text)
    (out_dir / "report.csv").write_text(csv)


def cmd_evaluate(args) -> int:
    _require(args.model, "model file")
    _require(args.corpus, "corpus")
    _require(args.manifest, "manifest")
    schema = _schema(args)
    model = load_model(args.model, schema)
    _, ordinals = read_manifest(args.manifest)
    X, y = _load_rows(args.corpus, schema, ordinals, _errors(args))
    if len(y) == 0:
        raise CliError(EXIT_PARSE, "manifest selects no evaluable records")
    name = args.name or DISPLAY.get(model.kind, model.kind)
    _write_reports([_evaluate(model, X, y, name)], Path(args.report_dir), [ORDINAL_NOTE])
    return EXIT_OK


def cmd_bench(args) -> int:
    _require(args.corpus, "corpus")
    schema = _schema(args)
    kinds = [k.strip() for k in args.classifiers.split(",") if k.strip()]
    bad = [k for k in kinds if k not in CLASSIFIERS + RESERVED]
    if bad or not kinds:
        raise CliError(EXIT_USAGE, f"unknown classifiers: {', '.join(bad) or '(none)'}")
    out = Path(args.out_dir)
    (out / "models").mkdir(parents=True, exist_ok=True)
    timings = []

    t0 = time.perf_counter()
    split, plan = _draw(args, schema)
    write_manifest(out / "train.manifest", split.train, "train")
    write_manifest(out / "test.manifest", split.test, "test")
    timings.append(("sample", time.perf_counter() - t0))

    t0 = time.perf_counter()
    X_train, y_train = _load_rows(args.corpus, schema, split.train, _errors(args))
    X_test, y_test = _load_rows(args.corpus, schema, split.test, _errors(args))
    timings.append(("load", time.perf_counter() - t0))
    if len(y_test) == 0:
        raise CliError(EXIT_PLAN, "the test extract is empty; raise --test-size")

    reports = []
    for kind in kinds:
        t0 = time.perf_counter()
        model = _train(kind, X_train, y_train, schema, args)
        model.save(out / "models" / f"{kind}.model")
        (out / "models" / f"{kind}.log").write_text(_training_log(model, X_train, y_train))
        t1 = time.perf_counter()
        reports.append(_evaluate(model, X_test, y_test, DISPLAY[kind]))
        timings.append((f"train:{kind}", t1 - t0))
        timings.append((f"evaluate:{kind}", time.perf_counter() - t1))

    notes = [f"training extract: {len(split.train)} records, sampling seed {plan.seed}",
             f"test extract: {len(split.test)} records", ORDINAL_NOTE]
    _write_reports(reports, out, notes)
    # Wall-clock numbers differ run to run, so they stay out of the reports.
    (out / "timings.csv").write_text(
        "stage,seconds\n" + "".join(f"{k},{v:.3f}\n" for k, v in timings))
    return EXIT_OK


COMMANDS = {"count": cmd_count, "sample": cmd_sample, "train": cmd_train,
            "evaluate": cmd_evaluate, "bench": cmd_bench}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except CliError as exc:
        print(f"kddbench: {exc}", file=sys.stderr)
        return exc.code
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        msg, code = str(exc), exc.code
    except (RecordError, SchemaError, ManifestError) as exc:
        msg, code = str(exc), EXIT_PARSE
    except InfeasiblePlanError as exc:
        msg, code = str(exc), EXIT_PLAN
    except SchemaDigestError as exc:
        msg, code = str(exc), EXIT_DIGEST
    except ModelFormatError as exc:
        msg, code = str(exc), EXIT_PARSE
    except FileNotFoundError as exc:
        msg, code = f"{exc.filename}: not found", EXIT_NOINPUT
    print(f"kddbench: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
