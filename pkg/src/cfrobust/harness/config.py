"""
Experiment configuration.

A configuration is a TOML file (or the name of a shipped preset)::

    name = "mock3"
    seed = 0

    [dataset]
    kind = "mock"
    preset = "mock3"

    [noise]
    kind = "aleatoric"
    n_levels = 5

    [[models]]
    kind = "lr"

    [[methods]]
    kind = "milp"

    [[methods]]
    kind = "random_search"
    budget = 500            # CESearchConfig override for this method only

Keys of a ``[[models]]`` or ``[[methods]]`` table other than ``kind`` are hyperparameters,
except that method keys naming a :class:`~cfrobust.cfgen.CESearchConfig` field override the
shared ``[search]`` settings for that method.
"""
from __future__ import annotations

import hashlib
import json
import logging
import tomllib
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping

from cfrobust.cfgen.config import CESearchConfig
from cfrobust.datagen import MOCK_PRESETS, MockSpec
from cfrobust.errors import ConfigError, ParameterError
from cfrobust.ingest import INGEST_PRESETS, IngestConfig
from cfrobust.stats.bayes import MCMCConfig
from cfrobust.stats.compare import MIN_PAIRS
from cfrobust.tags import DatasetKind, Group, MethodKind, ModelKind, UncertaintyKind, applies_to

logger = logging.getLogger(__name__)

_SEARCH_FIELDS = frozenset(f.name for f in fields(CESearchConfig)) - {"target_class", "seed"}


def _reject_unknown(section: str, data: Mapping[str, Any], allowed: Iterable[str]) -> None:
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"[{section}]: unknown key(s) {', '.join(unknown)}")


# ---------------------------------------------------------------------------
# Sections
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetConfig:
    """Either a synthetic mock or a CSV file, plus overrides of the named preset."""
    kind: str
    preset: str | None = None
    options: Mapping[str, Any] = field(default_factory=dict)
    base_dir: str = "."

    def __post_init__(self) -> None:
        if self.kind not in DatasetKind:
            raise ConfigError(f"[dataset]: unknown kind {self.kind!r}")
        if "seed" in self.options:
            raise ConfigError("[dataset]: seeds come from the top-level 'seed' key")
        known = MOCK_PRESETS if self.kind == DatasetKind.MOCK else INGEST_PRESETS
        if self.preset is not None and self.preset not in known:
            raise ConfigError(f"[dataset]: unknown {self.kind} preset {self.preset!r}")

    def mock_spec(self, seed: int = 0) -> MockSpec:
        base = MOCK_PRESETS[self.preset] if self.preset else MockSpec()
        try:
            return replace(base, seed=seed, **self.options).validate()
        except (TypeError, ParameterError) as e:
            raise ConfigError(f"[dataset]: {e}") from None

    def ingest_config(self, seed: int = 0) -> IngestConfig:
        opts = dict(INGEST_PRESETS[self.preset]) if self.preset else {}
        opts.update(self.options)
        if "path" not in opts:
            raise ConfigError("[dataset]: a csv dataset needs a 'path'")
        path = Path(opts.pop("path"))
        if not path.is_absolute():
            path = Path(self.base_dir) / path
        try:
            return IngestConfig(path=str(path), seed=seed, **opts)
        except (TypeError, ParameterError) as e:
            raise ConfigError(f"[dataset]: {e}") from None

    def check(self) -> None:
        if self.kind == DatasetKind.MOCK:
            self.mock_spec()
        else:
            self.ingest_config()

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "preset": self.preset, **dict(self.options)}


@dataclass(frozen=True)
class NoiseConfig:
    """Parameters of the noise schedule.

    ``omit`` names continuous columns hidden from the models past level 0 (epistemic only);
    ``df = 0`` keeps Gaussian noise in an epistemic schedule that only omits columns.
    """
    kind: str = UncertaintyKind.ALEATORIC
    n_levels: int = 11
    max_sigma: float = 2.0
    max_flip: float = 0.3
    df: float = 3.0
    omit: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "omit", tuple(self.omit))
        if self.kind not in UncertaintyKind:
            raise ConfigError(f"[noise]: unknown kind {self.kind!r}")
        if self.n_levels < 2:
            raise ConfigError(f"[noise]: need at least 2 noise levels, got {self.n_levels}")
        if self.max_sigma < 0 or not 0 <= self.max_flip <= 1:
            raise ConfigError("[noise]: max_sigma must be >= 0 and max_flip in [0, 1]")
        if self.df < 0:
            raise ConfigError(f"[noise]: df must be nonnegative, got {self.df}")
        if self.omit and self.kind != UncertaintyKind.EPISTEMIC:
            raise ConfigError("[noise]: omitted columns need an epistemic schedule")


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in ModelKind:
            raise ConfigError(
                f"[[models]]: unknown kind {self.kind!r}; expected one of {list(ModelKind)}"
            )


@dataclass(frozen=True)
class MethodConfig:
    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)
    search: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in MethodKind:
            raise ConfigError(
                f"[[methods]]: unknown kind {self.kind!r}; expected one of {list(MethodKind)}"
            )

    def search_config(self, base: CESearchConfig) -> CESearchConfig:
        try:
            return replace(base, **self.search)
        except ParameterError as e:
            raise ConfigError(f"[[methods]] {self.kind}: {e}") from None


@dataclass(frozen=True)
class StatsConfig:
    bootstrap: int = 2000
    alpha: float = 0.05
    min_pairs: int = 5
    chains: int = 4
    draws: int = 2000
    warmup: int = 1000
    distance_field: str = "relative_distance"

    def __post_init__(self) -> None:
        if self.bootstrap < 1 or not 0 < self.alpha < 1:
            raise ConfigError("[stats]: need bootstrap >= 1 and alpha in (0, 1)")
        if self.min_pairs < MIN_PAIRS:
            raise ConfigError(
                f"[stats]: min_pairs must be at least {MIN_PAIRS}, got {self.min_pairs}"
            )
        if self.distance_field not in ("relative_distance", "distance"):
            raise ConfigError(
                "[stats]: distance_field must be relative_distance or distance, "
                f"got {self.distance_field!r}"
            )
        self.mcmc()

    def mcmc(self, seed: int = 0) -> MCMCConfig:
        try:
            return MCMCConfig(self.chains, self.draws, self.warmup, seed)
        except ParameterError as e:
            raise ConfigError(f"[stats]: {e}") from None


# ---------------------------------------------------------------------------
# Experiment
# ---------------------------------------------------------------------------

_TOP_LEVEL = {
    "name", "seed", "n_replicates", "test_fraction", "min_completeness", "groups",
    "max_instances", "explain_noisy_inputs", "mirror", "recompute_weights", "output_dir",
    "dataset", "noise", "models", "methods", "search", "stats",
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run depends on; the run is a pure function of this value."""
    name: str
    dataset: DatasetConfig
    noise: NoiseConfig
    models: tuple[ModelConfig, ...]
    methods: tuple[MethodConfig, ...]
    search: CESearchConfig = field(default_factory=CESearchConfig)
    stats: StatsConfig = field(default_factory=StatsConfig)
    seed: int = 0
    n_replicates: int = 1
    test_fraction: float = 0.3
    min_completeness: float = 0.9
    groups: tuple[str, ...] = tuple(Group)
    max_instances: int = 0
    explain_noisy_inputs: bool = False
    mirror: bool = False
    recompute_weights: bool = False
    output_dir: str = "runs"
    source: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "groups", tuple(self.groups))
        self.validate()

    def validate(self) -> None:
        if not self.models:
            raise ConfigError("at least one model is required")
        if not self.methods:
            raise ConfigError("at least one counterfactual method is required")
        for section, kinds in (("models", [m.kind for m in self.models]),
                               ("methods", [k.kind for k in self.methods])):
            if len(set(kinds)) != len(kinds):
                raise ConfigError(f"[[{section}]]: each kind may appear once, got {kinds}")
        for method in self.methods:
            if not any(applies_to(method.kind, m.kind) for m in self.models):
                raise ConfigError(
                    f"method {method.kind!r} applies to none of the configured models "
                    f"({', '.join(m.kind for m in self.models)})"
                )
        for g in self.groups:
            if g not in Group:
                raise ConfigError(f"unknown reporting group {g!r}")
        if self.n_replicates < 1:
            raise ConfigError(f"n_replicates must be at least 1, got {self.n_replicates}")
        if not 0 < self.test_fraction < 1:
            raise ConfigError(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        if not 0 <= self.min_completeness <= 1:
            raise ConfigError(f"min_completeness must be in [0, 1], got {self.min_completeness}")
        if self.max_instances < 0:
            raise ConfigError("max_instances must be nonnegative (0 explains every instance)")
        for method in self.methods:
            method.search_config(self.search)

    @property
    def target_class(self) -> int:
        return 0 if self.mirror else 1

    def combos(self) -> list[tuple[ModelConfig, MethodConfig]]:
        """Applicable (model, method) pairs in configuration order."""
        return [(m, k) for m in self.models for k in self.methods if applies_to(k.kind, m.kind)]

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "seed": self.seed,
            "n_replicates": self.n_replicates,
            "test_fraction": self.test_fraction,
            "min_completeness": self.min_completeness,
            "groups": list(self.groups),
            "max_instances": self.max_instances,
            "explain_noisy_inputs": self.explain_noisy_inputs,
            "mirror": self.mirror,
            "recompute_weights": self.recompute_weights,
            "output_dir": self.output_dir,
            "dataset": self.dataset.to_dict(),
            "noise": {**asdict(self.noise), "omit": list(self.noise.omit)},
            "search": {k: v for k, v in asdict(self.search).items() if k != "target_class"},
            "stats": asdict(self.stats),
            "models": [{"kind": m.kind, **dict(m.params)} for m in self.models],
            "methods": [{"kind": k.kind, **dict(k.params), **dict(k.search)} for k in self.methods],
        }

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(
        cls, data: Mapping[str, Any], *, base_dir: str | Path = ".", source: str = ""
    ) -> ExperimentConfig:
        _reject_unknown("top level", data, _TOP_LEVEL)
        try:
            dataset = dict(data["dataset"])
        except KeyError:
            raise ConfigError("missing [dataset] section") from None
        try:
            kind = dataset.pop("kind")
        except KeyError:
            raise ConfigError("[dataset]: missing 'kind'") from None
        preset = dataset.pop("preset", None)

        noise = dict(data.get("noise", {}))
        _reject_unknown("noise", noise, {f.name for f in fields(NoiseConfig)})
        search = dict(data.get("search", {}))
        _reject_unknown("search", search, _SEARCH_FIELDS | {"seed"})
        stats = dict(data.get("stats", {}))
        _reject_unknown("stats", stats, {f.name for f in fields(StatsConfig)})

        models = []
        for entry in data.get("models", []):
            params = dict(entry)
            if "kind" not in params:
                raise ConfigError("[[models]]: missing 'kind'")
            models.append(ModelConfig(params.pop("kind"), params))
        methods = []
        for entry in data.get("methods", []):
            params = dict(entry)
            if "kind" not in params:
                raise ConfigError("[[methods]]: missing 'kind'")
            overrides = {k: params.pop(k) for k in sorted(set(params) & _SEARCH_FIELDS)}
            methods.append(MethodConfig(params.pop("kind"), params, overrides))

        scalars = {
            k: data[k] for k in _TOP_LEVEL if k in data and not isinstance(data[k], (dict, list))
        }
        groups = tuple(data.get("groups", tuple(Group)))
        try:
            search_cfg = CESearchConfig(**search)
        except ParameterError as e:
            raise ConfigError(f"[search]: {e}") from None
        cfg = cls(
            name=str(scalars.pop("name", source or "experiment")),
            dataset=DatasetConfig(kind, preset, dataset, str(base_dir)),
            noise=NoiseConfig(**noise),
            models=tuple(models),
            methods=tuple(methods),
            search=search_cfg,
            stats=StatsConfig(**stats),
            groups=groups,
            source=source,
            **scalars,
        )
        cfg.dataset.check()
        return cfg


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def _presets_dir() -> Any:
    return resources.files("cfrobust") / "presets"


def preset_names() -> list[str]:
    names = (p.name for p in _presets_dir().iterdir())
    return sorted(n.removesuffix(".toml") for n in names if n.endswith(".toml"))


def load_config(source: str | Path) -> ExperimentConfig:
    """Read a configuration from a TOML path or a shipped preset name."""
    path = Path(source)
    if path.is_file():
        text = path.read_text(encoding="utf-8")
        base_dir: Path = path.parent
        label = str(path)
    elif str(source) in preset_names():
        text = (_presets_dir() / f"{source}.toml").read_text(encoding="utf-8")
        base_dir = Path.cwd()
        label = str(source)
    else:
        raise ConfigError(
            f"{source!s} is neither a file nor a preset; presets: {', '.join(preset_names())}"
        )
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{label}: {e}") from None
    logger.debug("loaded configuration %s", label)
    return ExperimentConfig.from_dict(data, base_dir=base_dir, source=label)
