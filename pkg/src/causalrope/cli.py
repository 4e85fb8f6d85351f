"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure,
3 constraint failure (residual cycle, failed property verdict).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .config import ConfigError, PipelineConfig, config_from_dict, load_config
from .embed import EmbeddingDiverged
from .graph import CausalGraph, ResidualCycleError
from .manifold import ManifoldError
from .numerics import NonFiniteError, read_csv

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_CONSTRAINT = 0, 1, 2, 3

log = logging.getLogger("causalrope")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", type=Path, default=default, help="JSON configuration file")
    p.add_argument("--seed", type=int, default=default, help="global seed (unsigned 64-bit)")
    p.add_argument("--out", type=Path, default=default, help="artifact directory")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="causalrope", description="Causal discovery to rotary attention pipeline.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        return p

    add("synth", "generate a ground-truth DAG and data")
    p = add("discover", "learn a DAG from data.csv")
    p.add_argument("--data", type=Path)
    p.add_argument("--truth", type=Path, help="true adjacency for SHD")
    _discovery_flags(p)
    p = add("embed", "embed the thresholded graph on the hyperboloid")
    p.add_argument("--graph", type=Path)
    p.add_argument("--dim", type=int)
    p.add_argument("--lambda-g", type=float)
    p.add_argument("--epochs", type=int)
    p = add("encode", "turn Poincare embeddings into rotary angles")
    p.add_argument("--embedding", type=Path)
    p = add("attend", "run the attention layer over every observation")
    p.add_argument("--data", type=Path)
    p.add_argument("--angles", type=Path)
    add("validate", "run the attention property bench")
    p = add("pipeline", "run every stage")
    p.add_argument("--skip", action="append", default=[], choices=pipeline.STAGES)
    p.add_argument("--data", type=Path)
    _discovery_flags(p)
    return parser


def _discovery_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda-s", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--rho0", type=float)
    p.add_argument("--low-rank", type=int, metavar="R")


def resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    raw = cfg.to_dict()
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out"] = str(args.out)
    overrides = {
        ("discovery", "lambda_s"): getattr(args, "lambda_s", None),
        ("discovery", "tau"): getattr(args, "tau", None),
        ("discovery", "rho0"): getattr(args, "rho0", None),
        ("discovery", "rank"): getattr(args, "low_rank", None),
        ("embedding", "lambda_g"): getattr(args, "lambda_g", None),
        ("embedding", "epochs"): getattr(args, "epochs", None),
    }
    for (section, key), value in overrides.items():
        if value is not None:
            raw[section][key] = value
    dim = getattr(args, "dim", None)
    if dim is not None:
        raw["embedding"]["d"] = dim
        raw["attention"]["D"] = 2 * dim
    return config_from_dict(raw)


def _cmd(args, cfg: PipelineConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cmd = args.command
    if cmd == "synth":
        pipeline.run_synth(cfg, out)
    elif cmd == "discover":
        X = read_csv(args.data or out / "data.csv")
        truth_path = args.truth or (out / "dag_true.csv" if args.data is None else None)
        truth = read_csv(truth_path) if truth_path and Path(truth_path).exists() else None
        graph = pipeline.run_discover(cfg, X, out, truth)
        print(f"{len(graph.edges)} edges kept at tau={cfg.discovery.tau}")
    elif cmd == "embed":
        graph = CausalGraph.from_adjacency(read_csv(args.graph or out / "A_thresholded.csv"))
        pipeline.run_embed(cfg, graph, out)
    elif cmd == "encode":
        pipeline.run_encode(cfg, read_csv(args.embedding or out / "embedding_poincare.csv"), out)
    elif cmd == "attend":
        X = read_csv(args.data or out / "data.csv")
        pipeline.run_attend(cfg, X, read_csv(args.angles or out / "rotary_angles.csv"), out)
    elif cmd == "validate":
        verdicts = pipeline.run_validate(cfg, out)
        return _report(verdicts)
    elif cmd == "pipeline":
        manifest = pipeline.run_pipeline(cfg, out, skip=args.skip, data_path=args.data)
        return _report(manifest.get("verdicts", {}))
    return EXIT_OK


def _report(verdicts: dict) -> int:
    for name, ok in verdicts.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return EXIT_OK if all(verdicts.values()) else EXIT_CONSTRAINT


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "pipeline" and "synth" in args.skip and args.data is None:
            parser.error("--skip synth needs --data")
        return _cmd(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        cause = exc.cause if isinstance(exc, pipeline.StageError) else exc
        code = _code_for(cause)
        if code is None:
            raise
        print(str(exc), file=sys.stderr)
        return code


def _code_for(exc: BaseException) -> int | None:
    if isinstance(exc, ResidualCycleError):
        return EXIT_CONSTRAINT
    if isinstance(exc, (NonFiniteError, EmbeddingDiverged, ManifoldError, FloatingPointError,
                        np.linalg.LinAlgError)):
        return EXIT_NUMERIC
    if isinstance(exc, (ValueError, FileNotFoundError)):
        return EXIT_USAGE
    return None


if __name__ == "__main__":
    sys.exit(main())
