"""Command line front end.

Subcommands: train, predict, evaluate, check, synthesize, ablate and
report.  One exit-code convention everywhere: 0 success, 1 usage or
configuration problems, 2 data problems, 3 internal invariant
breaches.  Output files are byte deterministic for fixed inputs and
flags.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ENV_CONFIG, RunConfig, load_run_config
from .corpus import (apply_direction, build_instance, load_corpus,
                     read_score_records, save_corpus, write_score_records)
from .embeddings import resolve_embeddings
from .errors import (ConfigError, DataError, InternalError, SolverError,
                     TrainingError)
from .inference import Assignment, ConstraintSet, map_inference, validate_graph
from .labels import LabelScheme, load_scheme
from .metrics import EvalReport, build_report, temporal_awareness
from .model import init_params, score_instance
from .synthetic import synthesize_corpus
from .training import (LOCAL_DECODE, MetricsLog, _VectorCache, evaluate_model,
                       train_global, train_local)


class _UsageError(Exception):
    """Malformed command line; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad usage, which this tool reserves
    # for data problems; surface usage problems as exceptions instead.
    def error(self, message):
        raise _UsageError(message)


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def _write_tsv(path: Path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(row[c]) for c in columns) + "\n")


def _split_labels(text: str) -> tuple[str, ...]:
    return tuple(s for s in text.split(",") if s.strip() != "")


# ---------------------------------------------------------------------------
# configuration plumbing


def _config_from_args(args) -> RunConfig:
    overrides = list(args.set or [])
    for key in ("stage", "out_dir", "seeds", "jobs", "eval_direction"):
        value = getattr(args, key, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    cfg = load_run_config(args.config, overrides)
    _validate_choices(cfg)
    return cfg


def _validate_choices(cfg: RunConfig) -> None:
    checks = (
        ("stage", cfg.stage, ("local", "global", "both")),
        ("decode", cfg.decode, ("local", "global")),
        ("direction", cfg.direction, ("forward", "backward", "both")),
        ("eval_direction", cfg.eval_direction, ("forward", "both")),
    )
    for key, value, allowed in checks:
        if value not in allowed:
            raise ConfigError(
                f"config key {key!r} must be one of {', '.join(allowed)}; "
                f"got {value!r}"
            )
    if cfg.jobs < 1:
        raise ConfigError("jobs must be >= 1")


def _eval_instances(path: str, scheme: LabelScheme, direction: str,
                    window: int = 1) -> list:
    return [
        apply_direction(build_instance(doc, scheme, window=window),
                        scheme, direction)
        for doc in load_corpus(path, scheme)
    ]


# ---------------------------------------------------------------------------
# train


def _seed_run(cfg: RunConfig, seed: int) -> dict:
    """Train one seed end to end; returns its summary row."""
    scheme = load_scheme(cfg.scheme)
    source = resolve_embeddings(cfg.embeddings, cfg.d_word)
    train_insts = [build_instance(doc, scheme)
                   for doc in load_corpus(cfg.train_corpus, scheme)]
    dev_insts = []
    if cfg.dev_corpus:
        dev_insts = _eval_instances(cfg.dev_corpus, scheme, cfg.eval_direction)
    constraints = cfg.constraint_set()
    settings = cfg.train_settings(seed)
    sdir = Path(cfg.out_dir) / f"seed{seed}"
    sdir.mkdir(parents=True, exist_ok=True)
    meta = {"scheme": cfg.scheme, "embeddings": cfg.embeddings, "seed": seed}

    log = MetricsLog()
    if cfg.stage == "global":
        if not cfg.checkpoint:
            raise ConfigError(
                "stage=global resumes a stage-one model: set checkpoint="
            )
        params, _ = load_checkpoint(cfg.checkpoint, expect_scheme=cfg.scheme)
    else:
        params = init_params(cfg.model_config(scheme),
                             np.random.default_rng(seed))
        params, log = train_local(params, train_insts, dev_insts, scheme,
                                  source, settings, log)
        save_checkpoint(params, sdir / "local.ckpt", cfg.scheme,
                        extra=dict(meta, stage="local"))

    decode_with = LOCAL_DECODE
    if cfg.stage in ("global", "both"):
        params, log = train_global(params, train_insts, dev_insts, scheme,
                                   source, settings, constraints, log)
        save_checkpoint(params, sdir / "global.ckpt", cfg.scheme,
                        extra=dict(meta, stage="global"))
        decode_with = constraints
    log.write(sdir / "metrics.tsv")

    row: dict = {"seed": seed, "dev_p": 0.0, "dev_r": 0.0, "dev_f1": 0.0,
                 "dev_violations": 0}
    if dev_insts:
        p, r, f1, viol = evaluate_model(params, dev_insts, source, scheme,
                                        decode_with, exclude=settings.exclude)
        row.update(dev_p=p, dev_r=r, dev_f1=f1, dev_violations=viol)
    if cfg.test_corpus:
        test_insts = _eval_instances(cfg.test_corpus, scheme,
                                     cfg.eval_direction)
        p, r, f1, viol = evaluate_model(params, test_insts, source, scheme,
                                        decode_with, exclude=settings.exclude)
        row.update(test_p=p, test_r=r, test_f1=f1, test_violations=viol)
    return row


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    if not cfg.train_corpus:
        raise ConfigError(
            "train needs train_corpus (config file or --set train_corpus=...)"
        )
    seeds = cfg.seed_list()
    if not seeds:
        raise ConfigError("seeds is empty")

    if cfg.jobs > 1 and len(seeds) > 1:
        import concurrent.futures
        import functools

        workers = min(cfg.jobs, len(seeds))
        with concurrent.futures.ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(functools.partial(_seed_run, cfg), seeds))
    else:
        rows = [_seed_run(cfg, seed) for seed in seeds]

    columns = list(rows[0])
    mean = {"seed": "mean"}
    for col in columns[1:]:
        mean[col] = sum(row[col] for row in rows) / len(rows)
    rows.append(mean)

    out_root = Path(cfg.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    _write_tsv(out_root / "seeds_summary.tsv", columns, rows)
    for row in rows:
        print("  ".join(f"{c}={_fmt(row[c])}" for c in columns))
    return 0


# ---------------------------------------------------------------------------
# predict


def cmd_predict(args) -> int:
    params, extra = load_checkpoint(args.checkpoint,
                                    expect_scheme=args.scheme)
    scheme_name = args.scheme or extra.get("scheme")
    if not scheme_name:
        raise DataError(
            "checkpoint does not record its scheme; pass --scheme"
        )
    scheme = load_scheme(scheme_name)
    if params.config.n_labels != scheme.n:
        raise DataError(
            f"checkpoint scores {params.config.n_labels} labels but scheme "
            f"{scheme_name!r} defines {scheme.n}"
        )
    spec = args.embeddings or extra.get("embeddings", "hashed")
    source = resolve_embeddings(spec, params.config.d_word)

    if args.decode == "local":
        constraints = LOCAL_DECODE
    else:
        constraints = ConstraintSet(symmetry=not args.no_symmetry,
                                    transitivity=not args.no_transitivity,
                                    causal=args.causal)

    docs = load_corpus(args.corpus, scheme)
    rows = []
    leftover = 0
    leftover_docs = 0
    for doc in docs:
        inst = apply_direction(
            build_instance(doc, scheme, window=args.window),
            scheme, args.eval_direction)
        if not inst.pairs and not inst.causal_pairs:
            continue
        table, _ = score_instance(params, inst, source.vectors_for(doc))
        assign = map_inference(table, constraints, scheme, components=True)
        if constraints.any_active:
            broken = validate_graph(assign, scheme, constraints)
            if broken:
                # the decoder guarantees feasibility under its own
                # constraint set; a violation here is a solver bug
                raise InternalError(
                    f"decode left {len(broken)} violation(s) in document "
                    f"{doc.id!r}: {broken[0].message}"
                )
        remaining = validate_graph(assign, scheme)
        if remaining:
            leftover += len(remaining)
            leftover_docs += 1
        for pair in inst.pairs:
            rows.append((doc.id, pair[0], pair[1],
                         [float(x) for x in table.temporal[pair]],
                         assign.labels[pair]))
    write_score_records(rows, args.out)
    if leftover:
        print(
            f"warning: decoding left {leftover} constraint violation(s) "
            f"across {leftover_docs} document(s)",
            file=sys.stderr,
        )
    print(f"wrote {len(rows)} scored pairs from {len(docs)} documents "
          f"to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# evaluate


def _report_rows(report: EvalReport) -> list[dict]:
    rows = []
    for rec in report.to_records():
        rows.append({"label": rec["row"], "precision": rec["precision"],
                     "recall": rec["recall"], "f1": rec["f1"],
                     "support": rec["support"]})
    return rows


def cmd_evaluate(args) -> int:
    scheme = load_scheme(args.scheme)
    records = read_score_records(args.predictions, scheme)
    if not records:
        raise DataError(f"no prediction records in {args.predictions}")
    if any(rec[4] is None for rec in records):
        raise DataError(
            "prediction file carries scores only; rerun predict for labels"
        )
    pred: dict[tuple, str] = {}
    for doc_id, ev_i, ev_j, _, label in records:
        key = (doc_id, ev_i, ev_j)
        if key in pred:
            raise DataError(f"duplicate prediction for pair {key}")
        pred[key] = label

    docs = load_corpus(args.corpus, scheme)
    gold: dict[tuple, str] = {}
    for doc in docs:
        inst = apply_direction(build_instance(doc, scheme), scheme,
                               args.eval_direction)
        for pair in inst.pairs:
            gold[(doc.id, pair[0], pair[1])] = inst.gold[pair]

    missing = sorted(key for key in gold if key not in pred)
    unexpected = sorted(key for key in pred if key not in gold)
    if missing or unexpected:
        lines = [
            f"prediction and gold pair domains differ: {len(missing)} "
            f"missing, {len(unexpected)} unexpected"
        ]
        for key in missing[:10]:
            lines.append(f"  missing from predictions: {' '.join(key)}")
        for key in unexpected[:10]:
            lines.append(f"  absent from gold corpus:  {' '.join(key)}")
        raise DataError("\n".join(lines))

    pred_by_doc: dict[str, dict] = {}
    gold_by_doc: dict[str, dict] = {}
    for (doc_id, ev_i, ev_j), label in pred.items():
        pred_by_doc.setdefault(doc_id, {})[(ev_i, ev_j)] = label
    for (doc_id, ev_i, ev_j), label in gold.items():
        gold_by_doc.setdefault(doc_id, {})[(ev_i, ev_j)] = label
    violations = 0
    order = [doc.id for doc in docs if doc.id in pred_by_doc]
    for doc_id in order:
        violations += len(validate_graph(
            Assignment(labels=pred_by_doc[doc_id]), scheme))
    awareness = temporal_awareness([pred_by_doc[d] for d in order],
                                   [gold_by_doc[d] for d in order], scheme)

    report = build_report(pred, gold, scheme,
                          exclude=_split_labels(args.exclude),
                          violations=violations, awareness=awareness)
    print(report.to_text())
    if args.out:
        _write_tsv(Path(args.out),
                   ["label", "precision", "recall", "f1", "support"],
                   _report_rows(report))
    return 0


# ---------------------------------------------------------------------------
# check


_CHECK_LIMIT = 50  # listed violations; the total is always reported


def cmd_check(args) -> int:
    scheme = load_scheme(args.scheme)
    head = ""
    try:
        fh = open(args.input, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {args.input}: {exc}") from exc
    with fh:
        for line in fh:
            if line.strip():
                head = line.lstrip()[0]
                break

    docmaps: list[tuple[str, dict, dict]] = []
    if head == "{":
        for doc in load_corpus(args.input, scheme):
            inst = build_instance(doc, scheme)
            docmaps.append((doc.id, dict(inst.gold), dict(inst.causal_gold)))
    else:
        records = read_score_records(args.input, scheme)
        by_doc: dict[str, dict] = {}
        for doc_id, ev_i, ev_j, _, label in records:
            if label is None:
                raise DataError("cannot check an unlabelled score file")
            by_doc.setdefault(doc_id, {})[(ev_i, ev_j)] = label
        docmaps = [(doc_id, labels, {}) for doc_id, labels in by_doc.items()]

    total = 0
    bad_docs = 0
    listed = 0
    for doc_id, labels, causal in docmaps:
        broken = validate_graph(Assignment(labels=labels, causal=causal),
                                scheme)
        if not broken:
            continue
        bad_docs += 1
        total += len(broken)
        for violation in broken:
            if listed < _CHECK_LIMIT:
                print(f"{doc_id}\t{violation.kind}\t{violation.message}")
                listed += 1
    if total > listed:
        print(f"... {total - listed} further violation(s) not listed")
    print(f"{total} violation(s) across {bad_docs} of {len(docmaps)} "
          f"document(s)")
    return 2 if total else 0


# ---------------------------------------------------------------------------
# synthesize


def cmd_synthesize(args) -> int:
    if args.docs < 1:
        raise ConfigError("--docs must be >= 1")
    if args.events_per_doc < 1 or args.events_per_sentence < 1:
        raise ConfigError("event counts must be >= 1")
    if not 0.0 <= args.noise <= 1.0:
        raise ConfigError("--noise must lie in [0, 1]")
    if not 0.0 <= args.causal_rate <= 1.0:
        raise ConfigError("--causal-rate must lie in [0, 1]")
    if args.window < 0:
        raise ConfigError("--window must be >= 0")
    scheme = load_scheme(args.scheme)
    docs = synthesize_corpus(
        scheme, seed=args.seed, docs=args.docs,
        events_per_doc=args.events_per_doc, noise=args.noise,
        window=args.window, causal_rate=args.causal_rate,
        events_per_sentence=args.events_per_sentence,
        id_prefix=args.id_prefix)
    save_corpus(docs, args.out)
    pairs = sum(len(doc.relations) for doc in docs)
    print(f"wrote {len(docs)} documents ({pairs} annotated pairs) "
          f"to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# ablate


# grid cells with names from the standard ablation: local versus
# transitivity-constrained models over forward and both-way training,
# plus the full proposal
_CELL_NAMES = {
    ("forward", False, False): "M1",
    ("forward", False, True): "M2",
    ("both", False, False): "M3",
    ("both", False, True): "M4",
    ("both", True, True): "proposed",
}

_ABLATE_COLUMNS = ["model", "direction", "symmetry", "transitivity",
                   "fwd_p", "fwd_r", "fwd_f1",
                   "both_p", "both_r", "both_f1"]


def _cell_name(direction: str, symmetry: bool, transitivity: bool) -> str:
    name = _CELL_NAMES.get((direction, symmetry, transitivity))
    if name:
        return name
    tag = ("S" if symmetry else "") + ("T" if transitivity else "")
    return f"{'fwd' if direction == 'forward' else 'both'}+{tag}"


def cmd_ablate(args) -> int:
    cfg = _config_from_args(args)
    for need in ("train_corpus", "test_corpus"):
        if not getattr(cfg, need):
            raise ConfigError(f"ablate needs {need} (config file or --set)")
    scheme = load_scheme(cfg.scheme)
    source = resolve_embeddings(cfg.embeddings, cfg.d_word)
    seed = cfg.seed_list()[0]

    train_insts = [build_instance(doc, scheme)
                   for doc in load_corpus(cfg.train_corpus, scheme)]
    dev_insts = []
    if cfg.dev_corpus:
        dev_insts = _eval_instances(cfg.dev_corpus, scheme, "forward")
    test_fwd = _eval_instances(cfg.test_corpus, scheme, "forward")
    test_both = _eval_instances(cfg.test_corpus, scheme, "both")
    exclude = cfg.exclude_labels()
    cache = _VectorCache(source)

    started = time.perf_counter()
    local_models = {}
    for direction in ("forward", "both"):
        settings = cfg.train_settings(seed)
        settings.direction = direction
        params = init_params(cfg.model_config(scheme),
                             np.random.default_rng(seed))
        local, _ = train_local(params, train_insts, dev_insts, scheme,
                               source, settings)
        local_models[direction] = (local, settings)

    rows = []
    for direction in ("forward", "both"):
        local, settings = local_models[direction]
        for symmetry in (False, True):
            for transitivity in (False, True):
                cell = ConstraintSet(symmetry=symmetry,
                                     transitivity=transitivity, causal=False)
                if cell.any_active:
                    model, _ = train_global(local, train_insts, dev_insts,
                                            scheme, source, settings, cell)
                else:
                    model = local
                fwd = evaluate_model(model, test_fwd, source, scheme, cell,
                                     exclude=exclude, vectors=cache)
                two_way = evaluate_model(model, test_both, source, scheme,
                                         cell, exclude=exclude, vectors=cache)
                rows.append({
                    "model": _cell_name(direction, symmetry, transitivity),
                    "direction": direction,
                    "symmetry": int(symmetry),
                    "transitivity": int(transitivity),
                    "fwd_p": fwd[0], "fwd_r": fwd[1], "fwd_f1": fwd[2],
                    "both_p": two_way[0], "both_r": two_way[1],
                    "both_f1": two_way[2],
                })

    out_root = Path(cfg.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    _write_tsv(out_root / "ablate_matrix.tsv", _ABLATE_COLUMNS, rows)
    print("\t".join(_ABLATE_COLUMNS))
    for row in rows:
        print("\t".join(_fmt(row[c]) for c in _ABLATE_COLUMNS))
    print(f"ablation grid finished in {time.perf_counter() - started:.1f}s")
    return 0


# ---------------------------------------------------------------------------
# report


def cmd_report(args) -> int:
    # matplotlib import is slow; keep it off every other code path
    from .reporting import render_metrics_report

    log = MetricsLog.read(args.metrics)
    for path in render_metrics_report(log, args.out_dir, stem=args.stem):
        print(path)
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_config_args(parser) -> None:
    parser.add_argument("--config", default=None,
                        help=f"JSON run config (default: ${ENV_CONFIG})")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key")


def build_parser() -> _Parser:
    parser = _Parser(prog="temprel",
                     description="structured temporal relation models")
    sub = parser.add_subparsers(dest="command", metavar="command",
                                required=True)

    p = sub.add_parser("train", help="fit models for every configured seed")
    _add_config_args(p)
    p.add_argument("--stage", choices=("local", "global", "both"),
                   default=None)
    p.add_argument("--seeds", default=None, help="comma-separated seed list")
    p.add_argument("--out-dir", dest="out_dir", default=None)
    p.add_argument("--jobs", type=int, default=None,
                   help="train seeds in this many parallel processes")
    p.add_argument("--eval-direction", dest="eval_direction",
                   choices=("forward", "both"), default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score and decode a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--decode", choices=("local", "global"), default="global")
    p.add_argument("--no-symmetry", action="store_true")
    p.add_argument("--no-transitivity", action="store_true")
    p.add_argument("--causal", action="store_true")
    p.add_argument("--window", type=int, default=1,
                   help="candidate window for unannotated documents")
    p.add_argument("--eval-direction", dest="eval_direction",
                   choices=("forward", "both"), default="forward")
    p.add_argument("--scheme", default=None,
                   help="label scheme (default: recorded in the checkpoint)")
    p.add_argument("--embeddings", default=None,
                   help="embedding source (default: recorded in the checkpoint)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score a prediction file against gold")
    p.add_argument("--predictions", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--scheme", required=True)
    p.add_argument("--exclude", default="",
                   help="comma-separated labels excluded from the micro average")
    p.add_argument("--eval-direction", dest="eval_direction",
                   choices=("forward", "both"), default="forward")
    p.add_argument("--out", default=None, help="also write the table as TSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("check", help="list constraint violations in a file")
    p.add_argument("input", help="corpus JSONL or labelled prediction file")
    p.add_argument("--scheme", required=True)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("synthesize", help="generate a synthetic corpus")
    p.add_argument("--scheme", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--docs", type=int, required=True)
    p.add_argument("--events-per-doc", type=int, default=6)
    p.add_argument("--events-per-sentence", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--window", type=int, default=1)
    p.add_argument("--causal-rate", type=float, default=0.0)
    p.add_argument("--id-prefix", default="syn")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("ablate",
                       help="run the direction x constraint ablation grid")
    _add_config_args(p)
    p.add_argument("--out-dir", dest="out_dir", default=None)
    p.add_argument("--seeds", default=None,
                   help="the grid trains on the first listed seed")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report",
                       help="render figures and a summary from a metrics log")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--stem", default="training")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, TrainingError, InternalError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 3
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
