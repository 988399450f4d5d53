"""
Experiment runner.

An experiment is split into grid points (one per vanishing-moment order,
method, window layout or image, depending on the kind). Points run in
worker threads bounded by a semaphore; their rows and artifacts flow
through a queue to a single writer task, which hands them to an
`ExperimentHandler` in grid order.
"""

import asyncio
import logging
import threading
import time
from collections import defaultdict
from collections.abc import Callable, Iterator
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .blur_kernel import DEFAULT_DENSE_BUDGET, KernelField, make_field
from .bounds_patterns import (
    DecayBoundParams,
    expand_pattern,
    greedy_neighborhood,
    project_theta,
    scaling_trend,
    verify_decay,
)
from .config import ExperimentConfig, worker_count
from .deblur import DegradationSpec, SolverParams, deblur_experiment
from .errors import ConfigError
from .images import load_image, save_image, synth_image
from .metrics import psnr, x_to_2_error
from .operators import (
    LinearApproximation,
    difference_norm,
    exact_operator,
    sparse_operator,
    wc_operator,
)
from .report import ReportRow, append_rows, average_over, library_versions, write_manifest
from .sparsification import greedy_weighted, make_sigma, wei_rule
from .theta_builder import (
    SparseTheta,
    ThetaMatrix,
    build_sparse_theta,
    build_theta,
    threshold_abs,
)
from .wavelet import WaveletBasis, dwt, scale_profile
from .wc_baseline import make_layout

logger = logging.getLogger(__name__)

REPORT_NAME = "report.csv"
MANIFEST_NAME = "manifest.json"
# entries per column kept from Theta when it is too large to hold densely
SUPERSET_MULTIPLIER = 256


@dataclass(frozen=True, eq=False)
class Artifact:
    """
    A file produced by an experiment.

    Args:
        kind: ``image`` (an array in [0, 1]) or ``operator`` (a `SparseTheta`).
        name: File stem.
        data: The payload.
    """

    kind: str
    name: str
    data: Any


Item = ReportRow | Artifact


class ExperimentHandler:
    """
    Receives the output of one experiment run.

    A new instance is created for every run. Override the hooks to collect
    rows, store artifacts or report progress.
    """

    config: ExperimentConfig
    """The configuration being run (set by the runner)"""

    async def on_experiment_started(self):
        """
        Called once before any grid point starts.
        """
        pass

    async def on_row(self, row: ReportRow):
        """
        Called for every report row, in grid order.

        Args:
            row: The measurement.
        """
        pass

    async def on_artifact(self, artifact: Artifact):
        """
        Called for every image or operator an experiment produces.
        """
        pass

    async def on_error(self, error: Exception):
        """
        Called when a grid point fails.

        Args:
            error: The error that occurred

        The remaining grid points still run. Once the experiment completes,
        the error of the earliest failing point in grid order is raised.
        """
        pass

    async def on_experiment_complete(self):
        """
        Called once after the last row and artifact were delivered.
        """
        pass


class ReportWriterHandler(ExperimentHandler):
    """
    Writes a run to its output directory.

    Rows are appended to ``report.csv``, images are written as 16-bit PNG
    under ``images/``, operators as WBTH1 files under ``operators/`` and a
    ``manifest.json`` records what is needed to reproduce the run.
    """

    def __init__(self):
        super().__init__()
        self.rows_written = 0
        self.artifacts: list[Path] = []
        self.errors: list[str] = []
        self._started = 0.0

    @property
    def report_path(self) -> Path:
        return self.config.output_dir / REPORT_NAME

    async def on_experiment_started(self):
        self._started = time.perf_counter()
        self.config.output_dir.mkdir(parents=True, exist_ok=True)
        self.report_path.unlink(missing_ok=True)

    async def on_row(self, row: ReportRow):
        append_rows(self.report_path, [row])
        self.rows_written += 1

    async def on_artifact(self, artifact: Artifact):
        match artifact.kind:
            case "image":
                path = self.config.output_dir / "images" / f"{artifact.name}.png"
                save_image(path, artifact.data, bit_depth=16)
            case "operator":
                path = self.config.output_dir / "operators" / f"{artifact.name}.wbth"
                path.parent.mkdir(parents=True, exist_ok=True)
                artifact.data.save(path)
            case _:
                raise ValueError(f"Unknown artifact kind: {artifact.kind!r}")
        self.artifacts.append(path)

    async def on_error(self, error: Exception):
        logger.error("Grid point failed: %s", error)
        self.errors.append(f"{type(error).__name__}: {error}")

    async def on_experiment_complete(self):
        write_manifest(
            self.config.output_dir / MANIFEST_NAME,
            {
                "kind": self.config.kind,
                "config": self.config.to_manifest(),
                "config_sha256": self.config.digest,
                "seeds": self.config.seeds,
                "versions": library_versions(),
                "rows": self.rows_written,
                "artifacts": [str(p.relative_to(self.config.output_dir)) for p in self.artifacts],
                "errors": self.errors,
                "wall_s": round(time.perf_counter() - self._started, 3),
            },
        )


class Workspace:
    """
    Objects shared by the grid points of one run.

    Theta matrices are built once per vanishing-moment order, whichever
    point asks first. Above the dense budget the shared matrix is the
    ``SUPERSET_MULTIPLIER * N`` largest entries of Theta instead, and every
    method but thresholding selects from it.
    """

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.field: KernelField = make_field(config.kernel)
        self.exact = exact_operator(self.field)
        self._thetas: dict[int, ThetaMatrix | SparseTheta] = {}
        self._locks: defaultdict[int, threading.Lock] = defaultdict(threading.Lock)
        self._guard = threading.Lock()
        self._images: list[tuple[str, np.ndarray]] | None = None

    @property
    def size(self) -> int:
        return self.config.grid_size

    @property
    def count(self) -> int:
        return self.size**2

    @property
    def dense(self) -> bool:
        return self.count <= DEFAULT_DENSE_BUDGET

    def basis(self, vanishing_moments: int) -> WaveletBasis:
        return WaveletBasis(self.size, self.config.wavelet.levels, vanishing_moments)

    def theta(self, vanishing_moments: int) -> ThetaMatrix | SparseTheta:
        """Dense Theta, or its largest entries when the grid is above the dense budget."""
        with self._guard:
            lock = self._locks[vanishing_moments]
        with lock:
            if vanishing_moments not in self._thetas:
                basis = self.basis(vanishing_moments)
                if self.dense:
                    theta = build_theta(self.field, basis, workers=1)
                else:
                    largest = max(SUPERSET_MULTIPLIER, *self.config.methods.budgets)
                    logger.info(
                        "Theta of N = %d kept as its %d largest entries",
                        self.count,
                        self.budget(largest),
                    )
                    theta = build_sparse_theta(self.field, basis, self.budget(largest))
                self._thetas[vanishing_moments] = theta
            return self._thetas[vanishing_moments]

    def images(self) -> list[tuple[str, np.ndarray]]:
        with self._guard:
            if self._images is None:
                self._images = self._load_images()
            return self._images

    def _load_images(self) -> list[tuple[str, np.ndarray]]:
        settings = self.config.images
        images = [(path.stem, load_image(path)) for path in settings.paths]
        images += [
            (kind, synth_image(kind, self.size, settings.seed)) for kind in settings.synthetic
        ]
        for name, image in images:
            if image.shape != (self.size, self.size):
                raise ConfigError(f"Image {name!r} is {image.shape}, the grid is {self.size}")
        return images

    def budget(self, multiplier: float) -> int:
        return min(int(round(multiplier * self.count)), self.count**2)

    def sparse(self, method: str, vanishing_moments: int, multiplier: float) -> SparseTheta:
        """The ``method`` approximation at ``K = multiplier * N``."""
        k = self.budget(multiplier)
        settings = self.config.methods
        if not self.dense and method == "threshold":
            return build_sparse_theta(self.field, self.basis(vanishing_moments), k)
        theta = self.theta(vanishing_moments)
        mapping = self.basis(vanishing_moments).index_map
        match method:
            case "threshold":
                return threshold_abs(theta, k=k)
            case "greedy":
                sigma = make_sigma(settings.sigma, mapping, settings.sigma_custom)
                return greedy_weighted(theta, sigma, k)
            case "greedy_uniform":
                return greedy_weighted(theta, make_sigma("uniform", mapping), k)
            case "greedy_dyadic":
                return greedy_weighted(theta, make_sigma("dyadic", mapping), k)
            case "wei":
                return wei_rule(theta, make_sigma("dyadic", mapping), k)
            case "neighborhood":
                params = DecayBoundParams(
                    settings.neighborhood_vanishing_moments or vanishing_moments
                )
                sigma = make_sigma(settings.sigma, mapping, settings.sigma_custom)
                nbh = greedy_neighborhood(params, sigma, k, mapping)
                return project_theta(theta, expand_pattern(nbh, mapping))
            case _:
                raise ConfigError(f"Unknown method: {method!r}")

    def orders(self, method: str) -> tuple[int, ...]:
        if method == "wei":
            return (self.config.methods.wei_vanishing_moments,)
        return self.config.wavelet.vanishing_moments

    def sparse_operators(
        self, method: str, vanishing_moments: int
    ) -> Iterator[tuple[float, SparseTheta, LinearApproximation]]:
        basis = self.basis(vanishing_moments)
        for multiplier in self.config.methods.budgets:
            sparse = self.sparse(method, vanishing_moments, multiplier)
            label = f"{method}[M={vanishing_moments}]"
            yield multiplier, sparse, sparse_operator(sparse, basis, label)

    def wc_operators(self) -> Iterator[LinearApproximation]:
        settings = self.config.methods
        if "wc" not in settings.names:
            return
        for level in settings.wc_levels:
            for overlap in settings.wc_overlaps:
                yield wc_operator(make_layout(self.size, level, overlap), self.field)


@dataclass(frozen=True)
class GridPoint:
    """One unit of work; ``run`` returns the rows and artifacts it produced."""

    label: str
    run: Callable[[], list[Item]]


def _timed_apply(operator: LinearApproximation, image: np.ndarray) -> tuple[np.ndarray, float]:
    start = time.perf_counter()
    out = operator.apply(image)
    return out, (time.perf_counter() - start) * 1000.0


def _difference_image(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a - b`` mapped to [0, 1] with zero at 0.5."""
    delta = a - b
    peak = float(np.abs(delta).max())
    if peak == 0:
        return np.full_like(delta, 0.5)
    return 0.5 + delta / (2.0 * peak)


def _stem(method: str, budget_over_n: float) -> str:
    return f"{method}_K{budget_over_n:.4g}N"


def _row(kind: str, operator: LinearApproximation, metric: str, value: float, wall_ms=0.0):
    return ReportRow(
        kind, operator.name, operator.budget_ops, operator.budget_over_n, metric, value, wall_ms
    )


def _build_points(ws: Workspace) -> Iterator[GridPoint]:
    def build(method: str, m: int) -> list[Item]:
        items: list[Item] = []
        start = time.perf_counter()
        for multiplier, sparse, operator in ws.sparse_operators(method, m):
            wall_ms = (time.perf_counter() - start) * 1000.0
            items.append(_row("build", operator, "nnz", float(sparse.nnz), wall_ms))
            items.append(Artifact("operator", f"{method}_M{m}_K{multiplier:g}N", sparse))
            start = time.perf_counter()
        return items

    for method in ws.config.methods.sparse_methods:
        for m in ws.orders(method):
            yield GridPoint(f"build {method} M={m}", lambda method=method, m=m: build(method, m))
    for operator in ws.wc_operators():
        yield GridPoint(
            f"build {operator.name}",
            lambda op=operator: [_row("build", op, "ops", op.budget_ops)],
        )


def _direct_error_points(ws: Workspace) -> Iterator[GridPoint]:
    probe = np.random.default_rng(ws.config.images.seed).random((ws.size, ws.size))

    def measure(operator: LinearApproximation) -> list[Item]:
        _, wall_ms = _timed_apply(operator, probe)
        error = difference_norm(ws.exact, operator, tol=1e-6, max_iter=300)
        return [_row("direct_error", operator, "spectral_error", error.value, wall_ms)]

    def sparse_errors(method: str, m: int) -> list[Item]:
        items: list[Item] = []
        settings = ws.config.methods
        for _, sparse, operator in ws.sparse_operators(method, m):
            items += measure(operator)
            if ws.dense:
                theta = ws.theta(m)
                sigma = make_sigma(settings.sigma, theta.basis.index_map, settings.sigma_custom)
                value = x_to_2_error(theta, sparse, sigma)
                items.append(_row("direct_error", operator, "x_to_2_error", value))
        return items

    for method in ws.config.methods.sparse_methods:
        for m in ws.orders(method):
            yield GridPoint(
                f"direct_error {method} M={m}", lambda method=method, m=m: sparse_errors(method, m)
            )
    for operator in ws.wc_operators():
        yield GridPoint(f"direct_error {operator.name}", lambda op=operator: measure(op))


def _direct_psnr_points(ws: Workspace) -> Iterator[GridPoint]:
    def compare(operators: Iterator[LinearApproximation]) -> list[Item]:
        items: list[Item] = []
        images = ws.images()
        references = [ws.exact.apply(image) for _, image in images]
        for operator in operators:
            for index, ((name, image), reference) in enumerate(zip(images, references)):
                approx, wall_ms = _timed_apply(operator, image)
                value = psnr(reference, approx)
                items.append(_row("direct_psnr", operator, f"psnr:{name}", value, wall_ms))
                if index == 0:
                    diff = _difference_image(reference, approx)
                    stem = _stem(operator.name, operator.budget_over_n)
                    items.append(Artifact("image", f"diff_{stem}_{name}", diff))
        return items

    for method in ws.config.methods.sparse_methods:
        for m in ws.orders(method):
            yield GridPoint(
                f"direct_psnr {method} M={m}",
                lambda method=method, m=m: compare(
                    operator for _, _, operator in ws.sparse_operators(method, m)
                ),
            )
    for operator in ws.wc_operators():
        yield GridPoint(f"direct_psnr {operator.name}", lambda op=operator: compare(iter([op])))


def _deblur_points(ws: Workspace) -> Iterator[GridPoint]:
    settings = ws.config.deblur
    degradation = DegradationSpec(settings.noise_std, settings.seed)
    params = SolverParams(
        epsilon=settings.epsilon, max_iter=settings.max_iter, tol=settings.tol
    )

    def restore(operators: Callable[[], list[LinearApproximation]], keep_degraded: bool):
        items: list[Item] = []
        approximations = operators()
        for index, (name, image) in enumerate(ws.images()):
            rows, images = deblur_experiment(image, ws.exact, approximations, degradation, params)
            for row in rows:
                if row.method == "degraded" and not keep_degraded:
                    continue
                items.append(
                    ReportRow(
                        row.experiment,
                        row.method,
                        row.budget_ops,
                        row.budget_over_N,
                        f"{row.metric_name}:{name}",
                        row.value,
                        row.wall_ms,
                    )
                )
            if index == 0:
                for row, restored in zip(rows, images):
                    if row.method != "degraded" or keep_degraded:
                        stem = _stem(row.method, row.budget_over_N)
                        items.append(Artifact("image", f"deblur_{stem}_{name}", restored))
        return items

    yield GridPoint("deblur exact", lambda: restore(lambda: [ws.exact], True))
    for method in ws.config.methods.sparse_methods:
        for m in ws.orders(method):
            yield GridPoint(
                f"deblur {method} M={m}",
                lambda method=method, m=m: restore(
                    lambda: [op for _, _, op in ws.sparse_operators(method, m)], False
                ),
            )
    for operator in ws.wc_operators():
        yield GridPoint(f"deblur {operator.name}", lambda op=operator: restore(lambda: [op], False))


def _verify_points(ws: Workspace) -> Iterator[GridPoint]:
    settings = ws.config.verify

    def verify(m: int) -> list[Item]:
        theta = ws.theta(m)
        method = f"theta[M={m}]"
        report = verify_decay(theta, radius=ws.field.truncation_radius)
        trend = scaling_trend(theta, decades=settings.decades, points=settings.points)
        values = {
            "decay_constant": report.constant,
            "decay_violations": float(report.violations),
            "max_beyond_radius": report.max_beyond_radius,
            "nnz_slope": trend.nnz_slope,
            "predicted_nnz_slope": trend.predicted_nnz_slope,
            "error_slope": trend.error_slope,
            "predicted_error_slope": trend.predicted_error_slope,
        }
        _, image = ws.images()[0]
        coeffs = dwt(image, ws.config.wavelet.levels, theta.basis.filter)
        for scale, (peak, mean) in scale_profile(coeffs).items():
            values[f"coeff_max:j={scale}"] = peak
            values[f"coeff_mean:j={scale}"] = mean
        return [
            ReportRow("verify_bounds", method, 0.0, 0.0, metric, float(value))
            for metric, value in values.items()
        ]

    for m in ws.config.wavelet.vanishing_moments:
        yield GridPoint(f"verify_bounds M={m}", lambda m=m: verify(m))


PLANNERS: dict[str, Callable[[Workspace], Iterator[GridPoint]]] = {
    "build": _build_points,
    "direct_error": _direct_error_points,
    "direct_psnr": _direct_psnr_points,
    "deblur": _deblur_points,
    "verify_bounds": _verify_points,
}


def plan_experiment(config: ExperimentConfig) -> list[GridPoint]:
    """Split an experiment into grid points, in the order their output is reported."""
    if config.kind == "verify_bounds" and config.grid_size**2 > DEFAULT_DENSE_BUDGET:
        raise ConfigError("verify_bounds needs a dense Theta; reduce grid_size")
    points = list(PLANNERS[config.kind](Workspace(config)))
    if not points:
        raise ConfigError(f"The {config.kind} experiment has nothing to run; check [methods]")
    return points


def summarize(rows: list[ReportRow]) -> list[ReportRow]:
    """Per-image ``metric:image`` rows averaged into one ``metric`` row per method and budget."""
    by_metric: defaultdict[str, list[ReportRow]] = defaultdict(list)
    for row in rows:
        if ":" in row.metric_name and not row.metric_name.startswith(("coeff_", "x_to")):
            by_metric[row.metric_name.split(":", 1)[0]].append(row)
    summary = []
    for metric, group in by_metric.items():
        summary += average_over(group, metric)
    return summary


async def run_experiment(
    config: ExperimentConfig,
    handler_builder: Callable[[], ExperimentHandler] = ReportWriterHandler,
    workers: int | None = None,
) -> ExperimentHandler:
    """
    Run every grid point of an experiment.

    Args:
        config: The experiment.
        handler_builder: A callable that returns a new instance of ExperimentHandler.
        workers: Concurrent grid points; ``WAVEBLUR_THREADS`` or the CPU count by default.

    Returns:
        The handler, after ``on_experiment_complete``.

    Raises:
        ConfigError: If the experiment cannot be planned.
        Exception: The error of the earliest failing grid point in plan order,
            after all points ran.
    """
    handler = handler_builder()
    handler.config = config
    points = plan_experiment(config)
    semaphore = asyncio.Semaphore(workers or worker_count())
    queue: asyncio.Queue[tuple[int, list[Item]] | None] = asyncio.Queue()
    errors: dict[int, Exception] = {}
    collected: list[ReportRow] = []

    async def writer():
        pending: dict[int, list[Item]] = {}
        next_index = 0
        while (message := await queue.get()) is not None:
            index, items = message
            pending[index] = items
            while next_index in pending:
                for item in pending.pop(next_index):
                    if isinstance(item, ReportRow):
                        collected.append(item)
                        await handler.on_row(item)
                    else:
                        await handler.on_artifact(item)
                next_index += 1
        for row in summarize(collected):
            await handler.on_row(row)

    async def run_point(index: int, point: GridPoint):
        items: list[Item] = []
        async with semaphore:
            logger.info("Running %s", point.label)
            try:
                items = await asyncio.to_thread(point.run)
            except Exception as error:
                errors[index] = error
                await handler.on_error(error)
        await queue.put((index, items))

    await handler.on_experiment_started()
    writer_task = asyncio.create_task(writer())
    await asyncio.gather(*(run_point(i, p) for i, p in enumerate(points)))
    await queue.put(None)
    await writer_task
    await handler.on_experiment_complete()
    if errors:
        raise errors[min(errors)]
    return handler
