"""Command line: make-fixtures, train-target, serve, attack, report.

Exit codes: 0 ok, 2 validation, 3 I/O, 4 network, 5 rate limit exhausted,
6 training diverged, 7 unsupported in this mode.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from pathlib import Path

from . import __version__
from . import featurizer as fz
from . import pipeline
from .errors import ApiAttackError, ValidationError
from .oracle import DEFAULT_WINDOW, QueryBudget, TargetClassifier, train_mock_target

log = logging.getLogger("apiattack")


def _seed(args) -> int:
    if args.seed is None:
        args.seed = pipeline.random_seed()
        log.info("no --seed given, using %d", args.seed)
    return args.seed


def _record(out_dir: Path, command: str, args, outputs: dict) -> None:
    m = configparser.ConfigParser()
    m["run"] = {"command": command, "seed": str(args.seed), "tool_version": __version__}
    m["arguments"] = {k: str(v) for k, v in sorted(vars(args).items())
                      if k not in ("func", "seed") and v is not None}
    m["outputs"] = {k: str(v) for k, v in sorted(outputs.items())}
    pipeline.write_ini(m, out_dir / f"{command}.manifest.ini")


def cmd_make_fixtures(args) -> int:
    seed = _seed(args)
    corpora = None
    if args.label1_corpus or args.label2_corpus:
        if not (args.label1_corpus and args.label2_corpus):
            raise ValidationError("give both --label1-corpus and --label2-corpus")
        corpora = {1: fz.read_corpus(args.label1_corpus), 2: fz.read_corpus(args.label2_corpus)}
    split = pipeline.FixtureSplit(args.target_train, args.test, args.candidates)
    paths = pipeline.make_fixtures(args.output_dir, k=args.k, seed=seed, corpora=corpora,
                                   synthetic_docs=args.synthetic, split=split)
    _record(Path(args.output_dir), "make-fixtures", args,
            {k: p.name for k, p in paths.items()})
    for name, p in sorted(paths.items()):
        print(f"{name}\t{p}")
    return 0


def cmd_train_target(args) -> int:
    seed = _seed(args)
    data = fz.Dataset.load(args.train)
    cfg = None
    if args.implementation == "mlp":
        from .oracle import MLP_TARGET_CONFIG
        cfg = MLP_TARGET_CONFIG.replace(seed=seed)
    target = train_mock_target(data, args.implementation, cfg, threshold=args.threshold)
    target.save(args.output)
    acc = float((target.predict(data.features) == data.labels).mean())
    print(f"trained {args.implementation} target on {len(data)} samples "
          f"(training accuracy {acc:.4f}) -> {args.output}")
    return 0


def cmd_serve(args) -> int:
    from .service import resolve_limit, serve
    target = TargetClassifier.load(args.target)
    limit = resolve_limit(args.limit)
    print(f"serving {target.implementation} target on {args.host}:{args.port} "
          f"(limit {limit} per {args.window:g} s)", flush=True)
    serve(target, QueryBudget(limit, args.window), args.host, args.port)
    return 0


def cmd_attack(args) -> int:
    summary = pipeline.run_attack(args.manifest, seed=args.seed, output_dir=args.output_dir,
                                  endpoint=args.endpoint)
    print(pipeline.render_run_report(summary["output_dir"]))
    return 0


def cmd_report(args) -> int:
    if args.divergence:
        from .metrics import DivergenceReport, render_sweep_row, SWEEP_HEADER
        rep = DivergenceReport.from_text(Path(args.divergence).read_text(encoding="utf-8"))
        print(SWEEP_HEADER)
        print(render_sweep_row(args.n_real, args.n_synth, rep))
        return 0
    print(pipeline.render_run_report(args.run_dir))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="apiattack", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--seed", type=int, default=None,
                        help="random seed (a fresh one is drawn and recorded if omitted)")
        sp.set_defaults(func=func)
        return sp

    sp = add("make-fixtures", cmd_make_fixtures, "build corpora, vocabulary and datasets")
    sp.add_argument("--output-dir", required=True)
    sp.add_argument("--k", type=int, default=50, help="vocabulary size / feature dimension")
    sp.add_argument("--label1-corpus", help="subjective documents, one per line")
    sp.add_argument("--label2-corpus", help="objective documents, one per line")
    sp.add_argument("--synthetic", type=int, default=None, metavar="N",
                    help="generate N documents instead of reading corpora")
    sp.add_argument("--target-train", type=int, default=2000)
    sp.add_argument("--test", type=int, default=500)
    sp.add_argument("--candidates", type=int, default=1000)

    sp = add("train-target", cmd_train_target, "train the mock target classifier")
    sp.add_argument("--train", required=True, help="dataset file with ground-truth labels")
    sp.add_argument("--implementation", choices=("naive_bayes", "mlp"), default="naive_bayes")
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.add_argument("--output", required=True)

    sp = add("serve", cmd_serve, "serve a target over HTTP with a per-window call limit")
    sp.add_argument("--target", required=True)
    sp.add_argument("--limit", type=int, default=None,
                    help="calls per window (default: $APIATTACK_RATE_LIMIT or 1000)")
    sp.add_argument("--window", type=float, default=DEFAULT_WINDOW, help="window length in seconds")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)

    sp = add("attack", cmd_attack, "run an attack manifest")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--output-dir", default=None, help="overrides [run] output_dir")
    sp.add_argument("--endpoint", default=None, help="oracle URL; overrides [inputs] endpoint")

    sp = add("report", cmd_report, "render reports of a finished run")
    sp.add_argument("run_dir", nargs="?", default=".")
    sp.add_argument("--divergence", help="render a single divergence report file as a table row")
    sp.add_argument("--n-real", type=int, default=0)
    sp.add_argument("--n-synth", type=int, default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except pipeline.StageError as exc:
        print(f"error: stage={exc.stage} kind={exc.kind}: {exc.cause}", file=sys.stderr)
        return exc.exit_code
    except ApiAttackError as exc:
        print(f"error: kind={exc.kind}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
