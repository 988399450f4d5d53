"""
Command-line entry point.

    waveblur run experiment.toml
    waveblur build-theta experiment.toml -o theta.wbth
    waveblur apply -t theta.wbth -i in.pgm -o out.pgm
    waveblur deblur experiment.toml

``WAVEBLUR_THREADS`` caps the worker pool. Exit status is 0 on success,
2 on configuration errors and 1 on any other failure.
"""

import argparse
import asyncio
import dataclasses
import logging
from collections.abc import Sequence
from pathlib import Path

from .config import ExperimentConfig
from .errors import ConfigError, WaveblurError
from .experiments import ReportWriterHandler, Workspace, run_experiment
from .images import load_image, save_image
from .theta_builder import SparseTheta, apply_sparse
from .wavelet import DEFAULT_LEVELS, WaveletBasis

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def _execute(config: ExperimentConfig, workers: int | None = None) -> int:
    handler = asyncio.run(run_experiment(config, workers=workers))
    if isinstance(handler, ReportWriterHandler):
        logger.info("Wrote %d rows to %s", handler.rows_written, handler.report_path)
    return EXIT_OK


def run(config_path: str | Path, workers: int | None = None) -> int:
    """
    Run the experiment described by a configuration file.

    Returns:
        The exit status.
    """
    return _execute(ExperimentConfig.from_file(config_path), workers)


def deblur(config_path: str | Path, workers: int | None = None) -> int:
    """Run the deblurring suite of a configuration, whatever its ``kind``."""
    config = dataclasses.replace(ExperimentConfig.from_file(config_path), kind="deblur")
    return _execute(config, workers)


def build_theta_file(config_path: str | Path, output: str | Path) -> int:
    """
    Build the sparse operator of the first method, order and largest budget of a configuration.
    """
    config = ExperimentConfig.from_file(config_path)
    methods = config.methods.sparse_methods
    if not methods:
        raise ConfigError("build-theta needs a sparse method in [methods]")
    workspace = Workspace(config)
    method = methods[0]
    order = workspace.orders(method)[0]
    sparse = workspace.sparse(method, order, max(config.methods.budgets))
    sparse.save(output)
    logger.info("Wrote %s with %d entries (%s, M=%d)", output, sparse.nnz, method, order)
    return EXIT_OK


def apply_theta_file(
    theta_path: str | Path,
    image_path: str | Path,
    output: str | Path,
    *,
    vanishing_moments: int = 1,
    levels: int = DEFAULT_LEVELS,
    bit_depth: int = 8,
) -> int:
    """Blur an image with a stored operator."""
    image = load_image(image_path)
    basis = WaveletBasis(image.shape[0], levels, vanishing_moments)
    sparse = SparseTheta.load(theta_path, basis)
    save_image(output, apply_sparse(sparse, basis, image), bit_depth=bit_depth)
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="waveblur",
        description="Sparse wavelet approximations of spatially varying blur operators.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    run_parser = commands.add_parser("run", help="run an experiment")
    run_parser.add_argument("config", type=Path)
    run_parser.add_argument("-w", "--workers", type=int, default=None)

    build_parser = commands.add_parser("build-theta", help="build and store a sparse operator")
    build_parser.add_argument("config", type=Path)
    build_parser.add_argument("-o", "--output", type=Path, required=True)

    apply_parser = commands.add_parser("apply", help="blur an image with a stored operator")
    apply_parser.add_argument("-t", "--theta", type=Path, required=True)
    apply_parser.add_argument("-i", "--input", type=Path, required=True)
    apply_parser.add_argument("-o", "--output", type=Path, required=True)
    apply_parser.add_argument("-M", "--vanishing-moments", type=int, default=1)
    apply_parser.add_argument("-J", "--levels", type=int, default=DEFAULT_LEVELS)
    apply_parser.add_argument("--bit-depth", type=int, choices=(8, 16), default=8)

    deblur_parser = commands.add_parser("deblur", help="run the deblurring suite")
    deblur_parser.add_argument("config", type=Path)
    deblur_parser.add_argument("-w", "--workers", type=int, default=None)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    try:
        match args.command:
            case "run":
                return run(args.config, args.workers)
            case "deblur":
                return deblur(args.config, args.workers)
            case "build-theta":
                return build_theta_file(args.config, args.output)
            case "apply":
                return apply_theta_file(
                    args.theta,
                    args.input,
                    args.output,
                    vanishing_moments=args.vanishing_moments,
                    levels=args.levels,
                    bit_depth=args.bit_depth,
                )
    except ConfigError as error:
        logger.error("Configuration error: %s", error)
        return EXIT_CONFIG
    except (WaveblurError, RuntimeError, OSError) as error:
        logger.error("%s", error)
        return EXIT_FAILURE
    return EXIT_FAILURE


if __name__ == "__main__":
    raise SystemExit(main())
