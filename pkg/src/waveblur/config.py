"""
Experiment configuration files.

A configuration is a TOML document::

    kind = "direct_error"
    output_dir = "out"

    [kernel]
    kind = "gaussian_isotropic_field"
    grid_size = 64

    [wavelet]
    vanishing_moments = [1, 4]
    levels = 4

    [methods]
    names = ["threshold", "greedy_dyadic", "wc"]
    budgets = [1, 2, 4, 8]

Relative paths resolve against the directory of the file.
"""

import hashlib
import logging
import os
import tomllib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .blur_kernel import make_field
from .errors import ConfigError, WaveblurError
from .images import SYNTH_KINDS
from .sparsification import SIGMA_SCHEMES
from .wavelet import MAX_VANISHING_MOMENTS
from .wc_baseline import OVERLAPS

logger = logging.getLogger(__name__)

EXPERIMENT_KINDS = ("build", "direct_error", "direct_psnr", "deblur", "verify_bounds")
METHODS = (
    "threshold",
    "greedy",
    "greedy_uniform",
    "greedy_dyadic",
    "wei",
    "neighborhood",
    "wc",
)
POW2_BUDGETS = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0)
THREADS_ENV = "WAVEBLUR_THREADS"


def worker_count() -> int:
    """
    Worker pool size from ``WAVEBLUR_THREADS``, or the CPU count when unset.

    Raises:
        ConfigError: If the variable is not a positive integer.
    """
    value = os.environ.get(THREADS_ENV)
    if value is None or value == "":
        return os.cpu_count() or 1
    try:
        count = int(value)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {value!r}") from None
    if count < 1:
        raise ConfigError(f"{THREADS_ENV} must be positive, got {count}")
    return count


def _tuple(value: Any) -> tuple:
    if isinstance(value, (list, tuple)):
        return tuple(value)
    return (value,)


@dataclass(frozen=True)
class ImageConfig:
    """Test images: files and synthetic generators."""

    paths: tuple[Path, ...] = ()
    synthetic: tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self):
        for name in self.synthetic:
            if name not in SYNTH_KINDS:
                raise ConfigError(f"Unknown synthetic image: {name!r}")
        for path in self.paths:
            if not Path(path).is_file():
                raise ConfigError(f"Image not found: {path}")


@dataclass(frozen=True)
class WaveletConfig:
    vanishing_moments: tuple[int, ...] = (1,)
    levels: int = 4

    def __post_init__(self):
        for m in self.vanishing_moments:
            if not 1 <= m <= MAX_VANISHING_MOMENTS:
                raise ConfigError(f"Unsupported number of vanishing moments: {m!r}")
        if self.levels < 1:
            raise ConfigError(f"Invalid number of levels: {self.levels!r}")


@dataclass(frozen=True)
class MethodConfig:
    """
    Approximation methods and the budgets they are compared at.

    Args:
        names: Methods, see `METHODS`.
        budgets: Multipliers ``l`` of ``K = l N``.
        wc_levels: Window levels of the windowed-convolution baseline.
        wc_overlaps: Window overlaps (0 or 0.5).
        sigma: Weighting scheme of ``greedy`` and ``neighborhood``.
        sigma_custom: Per-scale weights for the ``custom`` scheme.
        wei_vanishing_moments: Vanishing moments of the basis used by ``wei``.
        neighborhood_vanishing_moments: ``M`` of the decay bound; the basis
            order when omitted.
    """

    names: tuple[str, ...] = ("threshold",)
    budgets: tuple[float, ...] = POW2_BUDGETS
    wc_levels: tuple[int, ...] = (1, 2, 3)
    wc_overlaps: tuple[float, ...] = (0.0, 0.5)
    sigma: str = "dyadic"
    sigma_custom: dict[int, float] | None = None
    wei_vanishing_moments: int = 1
    neighborhood_vanishing_moments: int | None = None

    def __post_init__(self):
        for name in self.names:
            if name not in METHODS:
                raise ConfigError(f"Unknown method: {name!r}")
        if not self.budgets or any(not budget > 0 for budget in self.budgets):
            raise ConfigError(f"Budgets must be positive, got {self.budgets!r}")
        if any(level < 0 for level in self.wc_levels):
            raise ConfigError(f"Invalid window levels: {self.wc_levels!r}")
        if any(overlap not in OVERLAPS for overlap in self.wc_overlaps):
            raise ConfigError(f"Unsupported window overlaps: {self.wc_overlaps!r}")
        if self.sigma not in SIGMA_SCHEMES:
            raise ConfigError(f"Unknown weighting scheme: {self.sigma!r}")

    @property
    def sparse_methods(self) -> tuple[str, ...]:
        return tuple(name for name in self.names if name != "wc")


@dataclass(frozen=True)
class DeblurConfig:
    noise_std: float = 0.02
    seed: int = 1
    epsilon: float = 0.05
    max_iter: int = 2000
    tol: float = 1e-6

    def __post_init__(self):
        if not self.noise_std >= 0:
            raise ConfigError(f"Invalid noise level: {self.noise_std!r}")
        if self.max_iter < 1 or not self.tol > 0 or self.epsilon < 0:
            raise ConfigError(f"Invalid solver settings: {self!r}")


@dataclass(frozen=True)
class VerifyConfig:
    """Settings of the ``verify_bounds`` suite."""

    decades: float = 4.0
    points: int = 9


@dataclass(frozen=True)
class ExperimentConfig:
    """
    A parsed experiment configuration.

    Use `ExperimentConfig.from_file` to load one; ``digest`` is the SHA-256
    of the file it came from.
    """

    kind: str
    kernel: dict[str, Any]
    wavelet: WaveletConfig = field(default_factory=WaveletConfig)
    images: ImageConfig = field(default_factory=ImageConfig)
    methods: MethodConfig = field(default_factory=MethodConfig)
    deblur: DeblurConfig = field(default_factory=DeblurConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    output_dir: Path = Path("out")
    source: Path | None = None
    digest: str = ""

    def __post_init__(self):
        if "wc" in self.methods.names:
            too_fine = [lvl for lvl in self.methods.wc_levels if 2**lvl > self.grid_size]
            if too_fine:
                raise ConfigError(
                    f"Window levels {too_fine} are too fine for grid_size {self.grid_size}"
                )

    @property
    def grid_size(self) -> int:
        return int(self.kernel["grid_size"])

    @property
    def seeds(self) -> dict[str, int]:
        return {"images": self.images.seed, "noise": self.deblur.seed}

    def to_manifest(self) -> dict[str, Any]:
        data = asdict(self)
        data["output_dir"] = str(self.output_dir)
        data["source"] = str(self.source) if self.source else None
        return data

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        """
        Load and validate a configuration file.

        Raises:
            ConfigError: If the file is missing, is not valid TOML or holds invalid values.
        """
        path = Path(path)
        try:
            raw = path.read_bytes()
        except OSError as error:
            raise ConfigError(f"Cannot read configuration {path}: {error}") from error
        try:
            data = tomllib.loads(raw.decode("utf-8"))
        except (tomllib.TOMLDecodeError, UnicodeDecodeError) as error:
            raise ConfigError(f"{path}: {error}") from error
        config = cls.from_dict(
            data,
            base_dir=path.parent,
            source=path,
            digest=hashlib.sha256(raw).hexdigest(),
        )
        logger.info("Loaded %s experiment from %s", config.kind, path)
        return config

    @classmethod
    def from_dict(
        cls,
        data: dict[str, Any],
        *,
        base_dir: str | Path = ".",
        source: Path | None = None,
        digest: str = "",
    ) -> "ExperimentConfig":
        """Validate a configuration already parsed into nested dictionaries."""
        base_dir = Path(base_dir)
        data = dict(data)
        kind = data.pop("kind", None)
        if kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"Unknown experiment kind: {kind!r}")
        kernel = _kernel_spec(data.pop("kernel", None), base_dir)
        images = _table(data, "images")
        if "paths" in images:
            images["paths"] = tuple(base_dir / p for p in _tuple(images["paths"]))
        if not images.get("paths") and not images.get("synthetic"):
            images["synthetic"] = SYNTH_KINDS
        methods = _table(data, "methods")
        if methods.get("budgets") == "pow2":
            methods["budgets"] = POW2_BUDGETS
        if isinstance(methods.get("sigma_custom"), dict):
            methods["sigma_custom"] = {
                int(scale): float(weight) for scale, weight in methods["sigma_custom"].items()
            }
        config = cls(
            kind=kind,
            kernel=kernel,
            wavelet=_section(WaveletConfig, _table(data, "wavelet"), "wavelet"),
            images=_section(ImageConfig, images, "images"),
            methods=_section(MethodConfig, methods, "methods"),
            deblur=_section(DeblurConfig, _table(data, "deblur"), "deblur"),
            verify=_section(VerifyConfig, _table(data, "verify"), "verify"),
            output_dir=base_dir / data.pop("output_dir", "out"),
            source=source,
            digest=digest,
        )
        if data:
            raise ConfigError(f"Unknown configuration keys: {sorted(data)}")
        return config


def _table(data: dict[str, Any], name: str) -> dict[str, Any]:
    table = data.pop(name, {})
    if not isinstance(table, dict):
        raise ConfigError(f"[{name}] must be a table")
    return dict(table)


def _section(cls, table: dict[str, Any], name: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(table) - set(known)
    if unknown:
        raise ConfigError(f"Unknown keys in [{name}]: {sorted(unknown)}")
    values = {
        key: _tuple(value) if str(known[key].type).startswith("tuple") else value
        for key, value in table.items()
    }
    try:
        return cls(**values)
    except (TypeError, ValueError) as error:
        if isinstance(error, ConfigError):
            raise
        raise ConfigError(f"Invalid [{name}]: {error}") from error


def _kernel_spec(table: Any, base_dir: Path) -> dict[str, Any]:
    if not isinstance(table, dict):
        raise ConfigError("Missing [kernel] table")
    spec = dict(table)
    n = spec.get("grid_size")
    if not isinstance(n, int) or n < 2 or n & (n - 1):
        raise ConfigError(f"grid_size must be a power of two, got {n!r}")
    if "path" in spec:
        spec["path"] = str(base_dir / spec["path"])
        if not Path(spec["path"]).is_file():
            raise ConfigError(f"PSF grid not found: {spec['path']}")
    try:
        make_field(spec)
    except WaveblurError as error:
        raise ConfigError(f"Invalid [kernel]: {error}") from error
    return spec
