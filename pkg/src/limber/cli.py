"""Command-line driver: one subcommand per pipeline stage, plus ``run-all``.

Failures print a single JSON object on stderr and exit nonzero:
2 for bad arguments or configuration, 3 for a missing artifact, 4 for an
integrity (hash, format or row-count) failure, 1 for anything else.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_USAGE, EXIT_MISSING, EXIT_INTEGRITY, EXIT_OTHER = 2, 3, 4, 1


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _emit_error(kind: str, exc: BaseException, command: str | None, code: int) -> int:
    payload = {"error": kind, "type": type(exc).__name__, "message": str(exc), "command": command, "exit_code": code}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="limber", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", type=Path, help="experiment config JSON (default: <out>/config.json or built-ins)")
        sp.add_argument("--seed", type=int, help="master seed, overrides the config")
        sp.add_argument("--out", type=Path, help="run directory (default: $LIMBER_OUT_DIR or ./run)")
        sp.add_argument("--threads", type=int, help="BLAS threads (default: $LIMBER_THREADS or 1)")
        return sp

    for name, helptext in (("world-gen", "sample the world and dataset splits"),
                           ("pretrain-lm", "pretrain the language model on text only"),
                           ("eval-caption", "caption held-out scenes and score them"),
                           ("eval-vqa", "few-shot question answering against the blind baseline"),
                           ("probe", "linear probes on frozen encoder features"),
                           ("run-all", "every stage in order, then the report")):
        common(sub.add_parser(name, help=helptext))
    for name, helptext in (("pretrain-encoder", "pretrain image encoders"),
                           ("train-limber", "fit projections with encoder and LM frozen")):
        sp = common(sub.add_parser(name, help=helptext))
        sp.add_argument("--variant", action="append", help="restrict to these encoder variants (repeatable)")
    sp = common(sub.add_parser("analyze", help="lexical, taxonomy, RSA and purity analyses"))
    sp.add_argument("--features", type=Path, help="external LIMB feature dump (enables bundle mode)")
    sp.add_argument("--captions", type=Path, help="external captions JSONL")
    sp.add_argument("--lexicon", type=Path, help="lexicon TSV: word, role, taxonomy node")
    sp.add_argument("--taxonomy", type=Path, help="taxonomy TSV: child, parent")
    sp = common(sub.add_parser("report", help="merge run directories into tables and figures"))
    sp.add_argument("runs", nargs="+", type=Path, help="completed run directories")
    return p


def _configure_threads(n: int | None) -> int:
    if n is None:
        n = int(os.environ.get("LIMBER_THREADS", "1"))
    if n < 1:
        raise _UsageError("--threads must be positive")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    return n


def _load_config(args):
    from .config import ExperimentConfig

    out = args.out
    if args.config is not None:
        if not args.config.exists():
            raise FileNotFoundError(f"config file {args.config} not found")
        cfg = ExperimentConfig.load(args.config)
    elif out is not None and (out / "config.json").exists():
        cfg = ExperimentConfig.load(out / "config.json")
    else:
        cfg = ExperimentConfig()
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 1 << 64:
            raise _UsageError("--seed must be an unsigned 64-bit integer")
        cfg.seed = args.seed
    return cfg


def _dispatch(args) -> int:
    from . import pipeline

    args.out = args.out or Path(os.environ.get("LIMBER_OUT_DIR", "run"))
    if args.command == "report":
        from .report import report

        path = report(args.runs, args.out)
        print(json.dumps({"manifest": str(path)}))
        return 0
    if args.command == "analyze" and args.features is not None:
        from .ingest import analyze_bundle, ingest_external

        for flag in ("captions", "lexicon", "taxonomy"):
            if getattr(args, flag) is None:
                raise _UsageError(f"--features needs --{flag} as well")
        bundle = ingest_external(args.features, args.captions, args.lexicon, args.taxonomy)
        path = analyze_bundle(bundle, args.out, seed=args.seed or 0)
        print(json.dumps({"manifest": str(path)}))
        return 0
    cfg = _load_config(args)
    run = pipeline.Run(args.out, cfg)
    run.out.mkdir(parents=True, exist_ok=True)
    if not run.path("config.json").exists() or args.config is not None or args.seed is not None:
        if args.command != "run-all":
            run.path("config.json").write_text(cfg.to_json(), encoding="utf-8")
    stages = {
        "world-gen": pipeline.world_gen,
        "pretrain-lm": pipeline.pretrain_language_model,
        "pretrain-encoder": lambda r: pipeline.pretrain_encoders(r, args.variant),
        "train-limber": lambda r: pipeline.train_limber(r, args.variant),
        "eval-caption": pipeline.eval_caption,
        "eval-vqa": pipeline.eval_vqa,
        "probe": pipeline.probe_stage,
        "analyze": pipeline.analyze,
        "run-all": lambda r: pipeline.run_all(r, log=lambda m: print(m, file=sys.stderr)),
    }
    path = stages[args.command](run)
    print(json.dumps({"manifest": str(path)}))
    return 0


def main(argv=None) -> int:
    command = None
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        _configure_threads(args.threads)
        return _dispatch(args)
    except _UsageError as exc:
        return _emit_error("usage", exc, command, EXIT_USAGE)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a JSON error
        from .config import SchemaError
        from .container import IntegrityError
        from .pipeline import MissingArtifactError

        if isinstance(exc, SchemaError):
            return _emit_error("schema", exc, command, EXIT_USAGE)
        if isinstance(exc, (MissingArtifactError, FileNotFoundError)):
            return _emit_error("missing-artifact", exc, command, EXIT_MISSING)
        if isinstance(exc, IntegrityError):
            return _emit_error("integrity", exc, command, EXIT_INTEGRITY)
        if isinstance(exc, ValueError):
            return _emit_error("config", exc, command, EXIT_USAGE)
        return _emit_error("error", exc, command, EXIT_OTHER)


if __name__ == "__main__":
    sys.exit(main())
