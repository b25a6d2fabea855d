"""Command-line entry point: ``run``, ``check`` and ``gen-env``.

Errors go to stderr as one JSON object ``{"error": ..., "message": ...,
"exit_code": ...}``; results go to stdout as JSON.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .envs import ENV_KINDS, GenerationError, build_env, env_params_from_spec, env_spec_for
from .harness import ExperimentConfig, check_env, resolve_workers, run_experiment
from .mdp import ConfigurationError

EXIT_CONFIG = 2
EXIT_CELLS_FAILED = 3
EXIT_IO = 4
EXIT_INTERNAL = 1


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int, **extra):
        super().__init__(message)
        self.kind, self.code, self.extra = kind, code, extra


def _load_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as e:
        raise CliError("io_error", f"cannot read {path}: {e}", EXIT_IO) from e
    except json.JSONDecodeError as e:
        raise CliError("config_error", f"{path}: invalid JSON: {e}", EXIT_CONFIG) from e


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def cmd_run(args) -> dict:
    config = ExperimentConfig.from_json(args.config).with_env_overrides()
    if args.output_dir:
        config = replace(config, output_dir=args.output_dir)
    if args.trace:
        config = replace(config, trace=True)
    workers = resolve_workers(args.workers)
    manifest = run_experiment(config, workers=workers, force=args.force)
    result = {
        "output_dir": config.output_dir,
        "n_ok": manifest["n_ok"],
        "n_failed": manifest["n_failed"],
        "aggregate": [{k: v for k, v in a.items() if k != "curve"} for a in manifest["aggregate"]],
    }
    if manifest["n_failed"]:
        failed = [c for c in manifest["cells"] if c["status"] != "ok"]
        raise CliError(
            "cells_failed", f"{len(failed)} of {len(manifest['cells'])} cells failed", EXIT_CELLS_FAILED, cells=failed, result=result
        )
    return result


def cmd_check(args) -> dict:
    mdp = build_env(_load_json(args.env))
    return check_env(mdp, args.eta, n_random_policies=args.samples, seed=args.seed)


def cmd_gen_env(args) -> dict:
    spec = {"kind": args.kind}
    for item in args.param or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise CliError("config_error", f"--param expects key=value, got {item!r}", EXIT_CONFIG)
        spec[key] = _parse_value(value)
    spec = env_spec_for(env_params_from_spec(spec))
    mdp = build_env(spec)  # fail early on bad parameters
    payload = {"kind": "tabular", **mdp.to_dict()} if args.tabular else spec
    try:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(payload, indent=1) + "\n")
    except OSError as e:
        raise CliError("io_error", f"cannot write {args.out}: {e}", EXIT_IO) from e
    return {"out": args.out, "S": mdp.S, "A": mdp.A, "H": mdp.H, "spec": spec}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="conservrl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment grid")
    run.add_argument("--config", required=True)
    run.add_argument("--trace", action="store_true", help="write per-step JSONL traces")
    run.add_argument("--force", action="store_true", help="run even if the ergodicity check fails")
    run.add_argument("--workers", type=int, default=None, help="process pool size (env CONSERVRL_WORKERS)")
    run.add_argument("--output-dir", default=None, help="overrides config and CONSERVRL_OUTPUT_DIR")
    run.set_defaults(func=cmd_run)

    check = sub.add_parser("check", help="report ergodicity and gap diagnostics for an environment")
    check.add_argument("--env", required=True)
    check.add_argument("--eta", type=float, default=None)
    check.add_argument("--samples", type=int, default=20, help="random policies to sample for the gap check")
    check.add_argument("--seed", type=int, default=0)
    check.set_defaults(func=cmd_check)

    gen = sub.add_parser("gen-env", help="write an environment spec")
    gen.add_argument("--kind", required=True, choices=sorted(ENV_KINDS))
    gen.add_argument("--out", required=True)
    gen.add_argument("--param", action="append", metavar="KEY=VALUE")
    gen.add_argument("--tabular", action="store_true", help="write the full transition and reward tables")
    gen.set_defaults(func=cmd_gen_env)
    return p


def _emit_error(kind: str, message: str, code: int, **extra) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code, **extra}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        result = args.func(args)
    except CliError as e:
        return _emit_error(e.kind, str(e), e.code, **e.extra)
    except (ConfigurationError, GenerationError) as e:
        return _emit_error("config_error", str(e), EXIT_CONFIG)
    except OSError as e:
        return _emit_error("io_error", str(e), EXIT_IO)
    except Exception as e:  # noqa: BLE001
        return _emit_error("internal_error", f"{type(e).__name__}: {e}", EXIT_INTERNAL)
    sys.stdout.write(json.dumps(result, indent=1, default=str) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
