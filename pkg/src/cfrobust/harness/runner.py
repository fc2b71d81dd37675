"""
Run one experiment configuration end to end.

For every replicate the clean dataset is split once; each noise level then perturbs the
training and evaluation rows, retrains every model from scratch, and explains the negatively
predicted clean test instances with every applicable method.  Counterfactuals of a level are
paired with the level-0 counterfactuals of the same instance and turned into distance
records.  Everything is a pure function of the configuration and its seeds; the run directory
gets the tables of :mod:`cfrobust.harness.tables` plus ``manifest.json``.
"""
from __future__ import annotations

import json
import logging
import os
import time
from collections import defaultdict
from concurrent.futures import Executor, ProcessPoolExecutor
from contextlib import contextmanager, nullcontext
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

import numpy as np
from scipy.stats import spearmanr

from cfrobust.cfgen import CESearchConfig, check_counterfactual, generate
from cfrobust.core import (
    Counterfactual,
    Dataset,
    FeatureSchema,
    NoiseSpec,
    WeightVector,
    pair_instances,
)
from cfrobust.datagen import (
    MockSpec,
    build_epistemic_schedule,
    build_noise_schedule,
    corrupt_categories,
    default_omission,
    encode_mock,
    inject_aleatoric,
    inject_epistemic,
    make_latent,
    omit_columns,
    rediscretize,
)
from cfrobust.errors import ConfigError, ExperimentError
from cfrobust.harness.config import ExperimentConfig
from cfrobust.ingest import load_dataset, train_test_split
from cfrobust.models import Classifier, accuracy, confusion_split, fit_model
from cfrobust.robustness import (
    PairedDistanceRecord,
    bucket_uncertainty,
    build_records,
    feature_weights,
)
from cfrobust.stats.bayes import metadata as posterior_metadata
from cfrobust.tags import (
    Bucket,
    DatasetKind,
    Group,
    ModelKind,
    NoiseKind,
    UncertaintyKind,
    applies_to,
    combo_tag,
)

logger = logging.getLogger(__name__)

WORKERS_ENV = "CFROBUST_WORKERS"
MONOTONICITY_LIMIT = -0.5
MANIFEST_NAME = "manifest.json"


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AccuracyRecord:
    replicate: int
    noise_level: int
    model: str
    accuracy: float
    n_train: int
    n_test: int


@dataclass(frozen=True)
class Attempt:
    """One counterfactual attempt, its vectors laid out like the clean schema.

    Columns hidden from the models at this level hold NaN.
    """
    replicate: int
    noise_level: int
    model: str
    group: str | None
    cf: Counterfactual

    @property
    def combo(self) -> str:
        return combo_tag(self.model, self.cf.method)


@dataclass(frozen=True)
class Exclusion:
    combo: str
    completeness: float
    threshold: float
    attempts: int


def level_buckets(n_levels: int) -> dict[int, str]:
    """Terciles of the levels; with two levels the clean one is Low and the other High."""
    if n_levels >= 3:
        return bucket_uncertainty(range(n_levels))
    return {0: Bucket.LOW, 1: Bucket.HIGH}


@dataclass
class ExperimentResults:
    config: ExperimentConfig
    schema: FeatureSchema
    records: list[PairedDistanceRecord] = field(default_factory=list)
    accuracy: list[AccuracyRecord] = field(default_factory=list)
    attempts: list[Attempt] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def buckets(self) -> dict[int, str]:
        return level_buckets(self.config.noise.n_levels)

    @property
    def combos(self) -> list[str]:
        return [combo_tag(m.kind, k.kind) for m, k in self.config.combos()]

    def completeness(self) -> dict[str, tuple[int, int]]:
        """``combo -> (valid, attempts)`` pooled over levels and replicates."""
        out = {c: (0, 0) for c in self.combos}
        for a in self.attempts:
            valid, total = out.get(a.combo, (0, 0))
            out[a.combo] = (valid + int(a.cf.valid), total + 1)
        return out

    def exclusions(self) -> list[Exclusion]:
        threshold = self.config.min_completeness
        out = []
        for combo, (valid, total) in self.completeness().items():
            if total and valid / total < threshold:
                out.append(Exclusion(combo, valid / total, threshold, total))
        return out

    @property
    def included_combos(self) -> list[str]:
        excluded = {e.combo for e in self.exclusions()}
        return [c for c in self.combos if c not in excluded]

    def accuracy_table(self) -> dict[str, list[float]]:
        """Mean accuracy per model and level (averaged over replicates)."""
        acc: dict[str, dict[int, list[float]]] = defaultdict(lambda: defaultdict(list))
        for r in self.accuracy:
            acc[r.model][r.noise_level].append(r.accuracy)
        return {
            model: [float(np.mean(by_level[k])) for k in sorted(by_level)]
            for model, by_level in acc.items()
        }


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

@dataclass
class RunManifest:
    name: str
    config_hash: str
    run_dir: str
    started: str
    version: str
    status: str = "running"
    seeds: list[dict[str, int]] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    accuracy: dict[str, list[float]] = field(default_factory=dict)
    completeness: dict[str, float] = field(default_factory=dict)
    exclusions: list[dict[str, Any]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    artifacts: list[str] = field(default_factory=list)
    error: dict[str, str] | None = None
    config: dict[str, Any] = field(default_factory=dict)
    posterior_model: dict[str, Any] = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        if self.status == "error":
            return 2
        return 1 if self.exclusions else 0

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RunManifest:
        return cls(**data)

    def write(self, run_dir: str | Path) -> Path:
        p = Path(run_dir) / MANIFEST_NAME
        p.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return p

    @classmethod
    def read(cls, run_dir: str | Path) -> RunManifest:
        text = (Path(run_dir) / MANIFEST_NAME).read_text(encoding="utf-8")
        return cls.from_dict(json.loads(text))


def _version() -> str:
    from cfrobust import __version__

    return __version__


# ---------------------------------------------------------------------------
# Stage bookkeeping and workers
# ---------------------------------------------------------------------------

class _Stages:
    def __init__(self) -> None:
        self.timings: dict[str, float] = {}
        self.current = "setup"

    @contextmanager
    def stage(self, name: str, detail: str = "") -> Iterator[None]:
        self.current = f"{name} ({detail})" if detail else name
        t0 = time.perf_counter()
        yield
        self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0


def resolve_workers(workers: int | None = None) -> int:
    """Worker count from the argument, else ``$CFROBUST_WORKERS``, else 1."""
    if workers is None:
        raw = os.environ.get(WORKERS_ENV, "1")
        try:
            workers = int(raw)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if workers < 1:
        raise ConfigError(f"worker count must be at least 1, got {workers}")
    return workers


@dataclass(frozen=True)
class _ExplainTask:
    method: str
    model: Classifier
    ids: tuple[int, ...]
    rows: np.ndarray
    w: WeightVector
    schema: FeatureSchema
    search: CESearchConfig
    train: Dataset | None
    params: Mapping[str, Any]


def _explain(task: _ExplainTask) -> list[Counterfactual]:
    return [
        generate(task.method, task.model, x, task.w, task.schema, task.search,
                 train=task.train, instance_id=i, params=task.params)
        for i, x in zip(task.ids, task.rows)
    ]


def _fan_out(pool: Executor | None, tasks: list[_ExplainTask]) -> list[Counterfactual]:
    if pool is None:
        chunks = map(_explain, tasks)
    else:
        chunks = pool.map(_explain, tasks)
    return [cf for chunk in chunks for cf in chunk]


# ---------------------------------------------------------------------------
# Data per level
# ---------------------------------------------------------------------------

def replicate_seeds(seed: int, replicate: int) -> dict[str, int]:
    state = np.random.SeedSequence([seed, replicate]).generate_state(4)
    data, split, noise, model = (int(s) for s in state)
    return {"replicate": replicate, "data": data, "split": split, "noise": noise, "model": model}


def _perturb(d: Dataset, spec: NoiseSpec) -> Dataset:
    kept = replace(spec, omitted_columns=frozenset())
    if kept.noise_kind == NoiseKind.STUDENT_T:
        return inject_epistemic(d, kept)
    return inject_aleatoric(d, kept)


def noisy_dataset(clean: Dataset, spec: NoiseSpec, latent: Dataset | None = None) -> Dataset:
    """The dataset seen by the models at one noise level.

    Synthetic data is perturbed in its latent space and re-binned with the clean bin edges;
    real data gets continuous noise plus category corruption.
    """
    if latent is not None:
        full = rediscretize(_perturb(latent, spec), clean.schema)
    else:
        full = corrupt_categories(_perturb(clean, spec), spec)
    return omit_columns(full, spec.omitted_columns) if spec.omitted_columns else full


def noise_schedule(
    cfg: ExperimentConfig, schema: FeatureSchema, mock: MockSpec | None, seed: int
) -> list[NoiseSpec]:
    n = cfg.noise
    if n.kind == UncertaintyKind.ALEATORIC:
        return build_noise_schedule(n.n_levels, n.max_sigma, n.max_flip, seed=seed)
    names = n.omit or (default_omission(mock, schema) if mock is not None else ())
    try:
        omit = [schema.index(name) for name in names]
    except KeyError as e:
        raise ConfigError(f"[noise]: cannot omit {e}") from None
    return build_epistemic_schedule(
        n.n_levels, n.max_sigma, n.max_flip, df=n.df or None, omit=omit, seed=seed
    )


def _lift(cf: Counterfactual, schema: FeatureSchema, base: FeatureSchema) -> Counterfactual:
    if schema.names == base.names:
        return cf
    idx = [base.index(name) for name in schema.names]
    original = np.full(base.d, np.nan)
    point = np.full(base.d, np.nan)
    original[idx] = cf.original
    point[idx] = cf.point
    return replace(cf, original=original, point=point)


def _model_params(kind: str, params: Mapping[str, Any], seed: int) -> dict[str, Any]:
    out = dict(params)
    if kind in (ModelKind.RF, ModelKind.MLP):
        out.setdefault("seed", seed)
    return out


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------

class _Sweep:
    def __init__(
        self, cfg: ExperimentConfig, stages: _Stages, pool: Executor | None, n_chunks: int
    ) -> None:
        self.cfg = cfg
        self.stages = stages
        self.pool = pool
        self.n_chunks = n_chunks
        self.results: ExperimentResults | None = None
        self.seeds: list[dict[str, int]] = []

    def _warn(self, msg: str) -> None:
        logger.warning(msg)
        assert self.results is not None
        self.results.warnings.append(msg)

    def run(self) -> ExperimentResults:
        for r in range(self.cfg.n_replicates):
            self._replicate(r)
        assert self.results is not None
        self._check_monotonicity()
        for e in self.results.exclusions():
            self._warn(
                f"{e.combo}: completeness {e.completeness:.3f} below {e.threshold:g}; "
                "excluded from the tables"
            )
        return self.results

    def _clean(self, seeds: dict[str, int]) -> tuple[Dataset, Dataset | None, MockSpec | None]:
        ds = self.cfg.dataset
        if ds.kind == DatasetKind.MOCK:
            spec = ds.mock_spec(seeds["data"])
            latent = make_latent(spec)
            return encode_mock(latent, spec), latent, spec
        ingest = ds.ingest_config(seeds["data"])
        clean = load_dataset(
            ingest, test_fraction=self.cfg.test_fraction, split_seed=seeds["split"]
        )
        return clean, None, None

    def _replicate(self, r: int) -> None:
        cfg = self.cfg
        seeds = replicate_seeds(cfg.seed, r)
        self.seeds.append(seeds)
        with self.stages.stage("data", f"replicate {r}"):
            clean, latent, mock = self._clean(seeds)
        if self.results is None:
            self.results = ExperimentResults(cfg, clean.schema)
        results = self.results
        base = clean.schema

        with self.stages.stage("split", f"replicate {r}"):
            train0, test0 = train_test_split(clean, cfg.test_fraction, seeds["split"])
            candidates = np.sort(test0.ids)
            if cfg.max_instances and len(candidates) > cfg.max_instances:
                rng = np.random.default_rng(seeds["split"])
                candidates = np.sort(rng.choice(candidates, cfg.max_instances, replace=False))
            explain_clean = test0.by_ids(candidates)
            labels = {int(i): int(y) for i, y in zip(explain_clean.ids, explain_clean.y)}
            w0 = feature_weights(train0, reference_split_id=f"train/replicate-{r}")
            schedule = noise_schedule(cfg, base, mock, seeds["noise"])

        baseline: dict[tuple[str, str], list[Counterfactual]] = {}
        for spec in schedule:
            level = spec.level
            with self.stages.stage("noise", f"replicate {r}, level {level}"):
                noisy = noisy_dataset(clean, spec, latent)
                train = noisy.by_ids(train0.ids)
                test = noisy.by_ids(test0.ids)
                if cfg.explain_noisy_inputs:
                    explain = noisy.by_ids(candidates)
                elif spec.omitted_columns:
                    explain = omit_columns(explain_clean, spec.omitted_columns)
                else:
                    explain = explain_clean
                if cfg.recompute_weights:
                    ref = f"train/replicate-{r}/level-{level}"
                    w = feature_weights(train, reference_split_id=ref)
                else:
                    w = w0.take([base.index(name) for name in noisy.schema.names])

            for model_cfg in cfg.models:
                kind = model_cfg.kind
                with self.stages.stage("fit", f"{kind}, replicate {r}, level {level}"):
                    params = _model_params(kind, model_cfg.params, seeds["model"])
                    model = fit_model(kind, train, params)
                    acc = accuracy(model, test)
                    results.accuracy.append(
                        AccuracyRecord(r, level, kind, acc, train.n, test.n)
                    )
                    logger.info("replicate %d level %d: %s accuracy %.4f", r, level, kind, acc)

                split = confusion_split(model, explain)
                if cfg.target_class == 1:
                    ids = split.ids(Group.ALL)
                    groups = {i: (Group.TN if labels[i] == 0 else Group.FN) for i in ids}
                else:
                    ids = sorted(split.tp | split.fp)
                    groups = {}
                rows = explain.x[explain.positions(ids)] if ids else np.empty((0, explain.d))

                for method_cfg in cfg.methods:
                    if not applies_to(method_cfg.kind, kind):
                        continue
                    method = method_cfg.kind
                    tag = combo_tag(kind, method)
                    search = replace(
                        method_cfg.search_config(cfg.search),
                        seed=cfg.search.seed + r,
                        target_class=cfg.target_class,
                    )
                    with self.stages.stage("explain", f"{tag}, replicate {r}, level {level}"):
                        cfs = self._generate(method, model, ids, rows, w, explain.schema, search,
                                             train, method_cfg.params)
                        cfs = self._audit(tag, level, model, cfs, explain.schema, w)
                    for cf in cfs:
                        results.attempts.append(
                            Attempt(r, level, kind, groups.get(cf.id),
                                    _lift(cf, explain.schema, base))
                        )
                    with self.stages.stage("pair", f"{tag}, replicate {r}, level {level}"):
                        if level == 0:
                            baseline[(kind, method)] = cfs
                        results.records.extend(
                            build_records(
                                pair_instances(baseline[(kind, method)], cfs),
                                noise_level=level,
                                model=kind,
                                method=method,
                                groups=groups,
                                w=w0,
                                base_schema=base,
                                noisy_schema=explain.schema,
                                replicate=r,
                            )
                        )

    def _generate(
        self,
        method: str,
        model: Classifier,
        ids: Sequence[int],
        rows: np.ndarray,
        w: WeightVector,
        schema: FeatureSchema,
        search: CESearchConfig,
        train: Dataset,
        params: Mapping[str, Any],
    ) -> list[Counterfactual]:
        if not len(ids):
            return []
        n_chunks = min(self.n_chunks, len(ids)) if self.pool is not None else 1
        bounds = np.linspace(0, len(ids), n_chunks + 1).astype(int)
        tasks = [
            _ExplainTask(method, model, tuple(int(i) for i in ids[a:b]), rows[a:b], w, schema,
                         search, train, params)
            for a, b in zip(bounds[:-1], bounds[1:])
            if b > a
        ]
        return _fan_out(self.pool, tasks)

    def _audit(
        self,
        tag: str,
        level: int,
        model: Classifier,
        cfs: Sequence[Counterfactual],
        schema: FeatureSchema,
        w: WeightVector,
    ) -> list[Counterfactual]:
        """*cfs* with every unsound "valid" counterfactual replaced by an invalid one."""
        out: list[Counterfactual] = []
        for cf in cfs:
            problems = check_counterfactual(model, cf, schema, self.cfg.target_class, w)
            if problems:
                reason = "; ".join(problems)
                self._warn(f"{tag} level {level} instance {cf.id}: {reason}; marked invalid")
                cf = Counterfactual.invalid(
                    cf.id, cf.original, cf.method, reason,
                    evaluations=cf.evaluations, original_class=cf.original_class,
                )
            out.append(cf)
        return out

    def _check_monotonicity(self) -> None:
        assert self.results is not None
        series: dict[tuple[int, str], list[tuple[int, float]]] = defaultdict(list)
        for a in self.results.accuracy:
            series[(a.replicate, a.model)].append((a.noise_level, a.accuracy))
        for (r, model), points in sorted(series.items()):
            levels, acc = zip(*sorted(points))
            rho = float(spearmanr(levels, acc).statistic) if len(set(acc)) > 1 else float("nan")
            if not rho <= MONOTONICITY_LIMIT:
                self._warn(
                    f"accuracy of {model} (replicate {r}) does not fall with the noise level "
                    f"(Spearman rho {rho:.2f} > {MONOTONICITY_LIMIT}); the schedule may be "
                    "mis-calibrated"
                )


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def default_run_dir(cfg: ExperimentConfig) -> Path:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    return Path(cfg.output_dir) / f"{cfg.name}-{stamp}"


def run_experiment(
    cfg: ExperimentConfig,
    out_dir: str | Path | None = None,
    *,
    workers: int | None = None,
) -> tuple[RunManifest, ExperimentResults]:
    """Run the sweep and write every artifact to *out_dir* (a timestamped directory by default).

    A failing stage still writes the tables it can and an error manifest naming the stage,
    then raises :class:`~cfrobust.errors.ExperimentError`.
    """
    from cfrobust.harness.tables import emit_tables

    n_workers = resolve_workers(workers)
    run_dir = Path(out_dir) if out_dir is not None else default_run_dir(cfg)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        name=cfg.name,
        config_hash=cfg.config_hash(),
        run_dir=str(run_dir),
        started=datetime.now(timezone.utc).replace(microsecond=0).isoformat(),
        version=_version(),
        config=cfg.to_dict(),
        posterior_model=posterior_metadata(),
    )
    stages = _Stages()
    logger.info("running %s into %s with %d worker(s)", cfg.name, run_dir, n_workers)

    pool_cm = ProcessPoolExecutor(n_workers) if n_workers > 1 else nullcontext(None)
    with pool_cm as pool:
        sweep = _Sweep(cfg, stages, pool, n_chunks=4 * n_workers)
        try:
            results = sweep.run()
            with stages.stage("tables"):
                artifacts = emit_tables(results, run_dir)
        except Exception as e:
            stage = stages.current
            logger.error("stage %s failed: %s", stage, e)
            manifest.status = "error"
            manifest.error = {"stage": stage, "type": type(e).__name__, "message": str(e)}
            manifest.seeds = sweep.seeds
            manifest.timings = stages.timings
            if sweep.results is not None and sweep.results.records:
                try:
                    manifest.artifacts = [p.name for p in emit_tables(sweep.results, run_dir)]
                except Exception:
                    logger.exception("could not write partial tables")
            manifest.write(run_dir)
            raise ExperimentError(stage, e) from e

    manifest.seeds = sweep.seeds
    manifest.timings = stages.timings
    manifest.accuracy = results.accuracy_table()
    manifest.completeness = {
        combo: (valid / total if total else float("nan"))
        for combo, (valid, total) in results.completeness().items()
    }
    manifest.exclusions = [asdict(e) for e in results.exclusions()]
    manifest.warnings = list(results.warnings)
    manifest.artifacts = [p.name for p in artifacts]
    manifest.status = "excluded" if manifest.exclusions else "ok"
    manifest.write(run_dir)
    logger.info("%s finished with status %s", cfg.name, manifest.status)
    return manifest, results
