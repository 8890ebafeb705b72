"""Line-oriented experiment configs: ``key = value`` with ``#`` comments and dotted keys."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path


class ConfigError(ValueError):
    pass


def parse_config_text(text: str) -> dict[str, str]:
    """Flat ``{dotted.key: raw string}`` mapping; later keys override earlier ones."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or any(not part for part in key.split(".")):
            raise ConfigError(f"line {lineno}: malformed key {key!r}")
        out[key] = value
    return out


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(v) for v in raw.split(",") if v.strip())


def _ints(raw: str) -> tuple[int, ...]:
    return tuple(int(v) for v in raw.split(",") if v.strip())


def _bool(raw: str) -> bool:
    key = raw.strip().lower()
    if key in ("true", "yes", "1", "on"):
        return True
    if key in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _optional_float(raw: str) -> float | None:
    return None if raw.strip().lower() in ("none", "") else float(raw)


def _names(raw: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in raw.split(",") if v.strip())


@dataclass(frozen=True)
class DatasetSection:
    kind: str = "two_gaussians"  # two_gaussians | toy_images | csv
    path: str | None = None
    test_path: str | None = None
    n: int = 200
    seed: int | None = None  # defaults to the experiment seed
    separation: float = 4.0
    island: bool = False
    island_center: tuple[float, ...] = (-2.0, 0.0)
    island_points: int = 5
    island_spread: float = 0.25
    grid_size: int = 8
    classes: int = 4
    noise: float = 0.1
    max_shift: int = 0
    test_fraction: float = 0.5
    test_samples: int | None = None
    box: tuple[float, ...] | None = None


@dataclass(frozen=True)
class ModelSection:
    path: str | None = None
    hidden: tuple[int, ...] = (16, 16)
    activation: str = "tanh"


@dataclass(frozen=True)
class TrainSection:
    mode: str = "standard"
    epochs: int = 50
    lr: float = 0.01
    batch_size: int = 32
    epsilon: float = 0.1
    inner_iterations: int = 7


@dataclass(frozen=True)
class DrqSection:
    alpha: float = 0.5
    # a number, "sample" (c = f(x) of the input) or "none"
    confidence_threshold: str = "0.5"
    # a number, "calibrate" (per-sample search) or "auto" (training-set mean of the search)
    epsilon_linf: str = "calibrate"
    epsilon_l2: str = "calibrate"
    top_k: int | None = None
    exploration_iterations: int = 20
    quantification_iterations: int = 20
    calibration_iterations: int = 100
    calibration_samples: int = 200
    step_factor: float = 2.5


@dataclass(frozen=True)
class AttackSection:
    epsilon: float = 0.1
    norm: str = "linf"
    iterations: int = 100
    suite: tuple[str, ...] = ("pgd", "pgd_noise", "pgd_attack", "random_noise")
    random_samples: int = 1000


@dataclass(frozen=True)
class EvalSection:
    corruptions: tuple[str, ...] = ()  # kind:magnitude entries
    corruption_seed: int = 0
    ablation: bool = False
    ablation_random_samples: int = 20
    cosine: bool = False


@dataclass(frozen=True)
class Figure1Section:
    region: tuple[float, ...] = (-6.0, 6.0, -6.0, 6.0)
    resolution: int = 128
    probe: tuple[float, ...] | None = None  # defaults to the island center
    norm: str = "l2"
    require_flip: bool = True


@dataclass(frozen=True)
class SweepSection:
    parameter: str = "iterations"
    values: tuple[float, ...] = ()
    samples: int | None = None


@dataclass(frozen=True)
class TheorySection:
    n_random: int = 200
    u0: float = 0.3
    negate_first: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out: str = "out"
    workers: int = 1
    chunk_size: int = 50
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    drq: DrqSection = field(default_factory=DrqSection)
    attack: AttackSection = field(default_factory=AttackSection)
    eval: EvalSection = field(default_factory=EvalSection)
    figure1: Figure1Section = field(default_factory=Figure1Section)
    sweep: SweepSection = field(default_factory=SweepSection)
    theory: TheorySection = field(default_factory=TheorySection)

    @property
    def data_seed(self) -> int:
        return self.seed if self.dataset.seed is None else self.dataset.seed

    @property
    def box(self) -> tuple[float, float] | None:
        if self.dataset.box is not None:
            return tuple(self.dataset.box)
        return (0.0, 1.0) if self.dataset.kind == "toy_images" else None


_CONVERTERS = {
    "int": int, "float": float, "str": str, "bool": _bool,
    "tuple[float, ...]": _floats, "tuple[int, ...]": _ints, "tuple[str, ...]": _names,
    "int | None": lambda r: None if r.strip().lower() == "none" else int(r),
    "float | None": _optional_float,
    "str | None": lambda r: None if r.strip().lower() == "none" else r,
    "tuple[float, ...] | None": lambda r: None if r.strip().lower() == "none" else _floats(r),
}


def _convert(section, name: str, raw: str):
    ftype = {f.name: f.type for f in fields(section)}.get(name)
    if ftype is None or ftype not in _CONVERTERS:
        raise ConfigError(f"unknown key {name!r} in {type(section).__name__}")
    try:
        return _CONVERTERS[ftype](raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r} ({exc})") from None


def config_from_mapping(mapping: dict[str, str], base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    top, sections = {}, {}
    for key, raw in mapping.items():
        head, _, rest = key.partition(".")
        if not rest:
            top[head] = _convert(cfg, head, raw)
            continue
        section = getattr(cfg, head, None)
        if section is None or not hasattr(section, "__dataclass_fields__") or "." in rest:
            raise ConfigError(f"unknown key {key!r}")
        sections.setdefault(head, {})[rest] = _convert(section, rest, raw)
    for head, changes in sections.items():
        top[head] = replace(getattr(cfg, head), **changes)
    return replace(cfg, **top)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_mapping(parse_config_text(text))
