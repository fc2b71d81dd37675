"""Tests for ``cfrobust.harness``: configuration, the experiment sweep, tables and the CLI."""
from __future__ import annotations

import copy
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import pytest

from cfrobust.core import Counterfactual
from cfrobust.errors import ConfigError, ExperimentError
from cfrobust.harness import (
    ExperimentConfig,
    RunManifest,
    emit_tables,
    load_config,
    load_results,
    preset_names,
    run_experiment,
)
from cfrobust.harness import runner
from cfrobust.harness.cli import main
from cfrobust.harness.runner import level_buckets, replicate_seeds, resolve_workers
from cfrobust.tags import Bucket, Group

TINY: dict[str, Any] = {
    "name": "tiny",
    "seed": 0,
    "dataset": {"kind": "mock", "preset": "mock1", "n_samples": 200},
    "noise": {"kind": "aleatoric", "n_levels": 3, "max_sigma": 1.0, "max_flip": 0.1},
    "models": [{"kind": "lr"}],
    "methods": [{"kind": "milp"}],
    "stats": {"bootstrap": 50, "chains": 2, "draws": 100, "warmup": 100},
}

TINY_TOML = """
name = "tiny"
seed = 0

[dataset]
kind = "mock"
preset = "mock1"
n_samples = 200

[noise]
kind = "aleatoric"
n_levels = 3
max_sigma = 1.0
max_flip = 0.1

[[models]]
kind = "lr"

[[methods]]
kind = "milp"

[stats]
bootstrap = 50
chains = 2
draws = 100
warmup = 100
"""

CSV_TABLES = ("records.csv", "accuracy.csv", "descriptive.csv", "comparison.csv",
              "completeness.csv", "ce_dump.csv", "trace_lr-milp.csv")


# ===================================================================
# Fixtures
# ===================================================================

def tiny(**overrides: Any) -> dict[str, Any]:
    data = copy.deepcopy(TINY)
    data.update(overrides)
    return data


def config(**overrides: Any) -> ExperimentConfig:
    return ExperimentConfig.from_dict(tiny(**overrides))


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("tiny") / "run"
    manifest, results = run_experiment(config(), run_dir, workers=1)
    return run_dir, manifest, results


# ===================================================================
# Configuration
# ===================================================================

class TestExperimentConfig:
    def test_defaults(self):
        cfg = config()
        assert cfg.target_class == 1
        assert cfg.n_replicates == 1 and cfg.min_completeness == 0.9
        assert cfg.groups == tuple(Group)
        assert [(m.kind, k.kind) for m, k in cfg.combos()] == [("lr", "milp")]
        assert cfg.dataset.mock_spec(7).n_samples == 200
        assert cfg.dataset.mock_spec(7).seed == 7

    def test_mirror_targets_class_zero(self):
        assert config(mirror=True).target_class == 0

    def test_dict_round_trip(self):
        cfg = config(methods=[{"kind": "milp"}, {"kind": "random_search", "budget": 10}])
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg

    def test_hash_tracks_content(self):
        assert config().config_hash() == config().config_hash()
        assert config().config_hash() != config(seed=1).config_hash()
        assert len(config().config_hash()) == 64

    def test_method_search_overrides(self):
        cfg = config(methods=[{"kind": "random_search", "budget": 10, "flip_probability": 0.5}])
        method = cfg.methods[0]
        assert method.search == {"budget": 10}
        assert method.params == {"flip_probability": 0.5}
        assert method.search_config(cfg.search).budget == 10
        assert cfg.search.budget == 2000

    @pytest.mark.parametrize(
        "overrides, message",
        [
            ({"colour": "red"}, r"unknown key\(s\) colour"),
            ({"models": []}, "at least one model"),
            ({"methods": []}, "at least one counterfactual method"),
            ({"models": [{"kind": "lr"}, {"kind": "lr"}]}, "each kind may appear once"),
            ({"models": [{"kind": "svm"}]}, "unknown kind 'svm'"),
            ({"methods": [{"kind": "milp_marg"}]}, "applies to none"),
            ({"methods": [{"kind": "random_search", "budget": 0}]}, "budget must be at least 1"),
            ({"groups": ["ALL", "TP"]}, "unknown reporting group 'TP'"),
            ({"n_replicates": 0}, "n_replicates"),
            ({"test_fraction": 1.0}, "test_fraction"),
            ({"min_completeness": 1.5}, "min_completeness"),
            ({"max_instances": -1}, "max_instances"),
            ({"search": {"budget": 0}}, r"\[search\]"),
            ({"stats": {"alpha": 0.0}}, r"\[stats\]"),
            ({"stats": {"chains": 1}}, "chains"),
            ({"stats": {"distance_field": "l2"}}, "distance_field"),
            ({"stats": {"min_pairs": 3}}, "min_pairs must be at least 5"),
        ],
    )
    def test_rejects(self, overrides, message):
        with pytest.raises(ConfigError, match=message):
            config(**overrides)

    @pytest.mark.parametrize(
        "noise, message",
        [
            ({"n_levels": 1}, "at least 2 noise levels"),
            ({"max_flip": 2.0}, "max_flip"),
            ({"df": -1.0}, "df must be nonnegative"),
            ({"omit": ["x0"]}, "epistemic"),
            ({"kind": "chaotic"}, "unknown kind 'chaotic'"),
            ({"sigma": 1.0}, r"\[noise\]: unknown key"),
        ],
    )
    def test_rejects_noise(self, noise, message):
        with pytest.raises(ConfigError, match=message):
            config(noise={**TINY["noise"], **noise})

    @pytest.mark.parametrize(
        "dataset, message",
        [
            ({"preset": "mock1", "seed": 3}, "seeds come from"),
            ({"preset": "mock9"}, "unknown mock preset 'mock9'"),
            ({"preset": "mock1", "n_samples": 1}, "n_samples"),
            ({"preset": "mock1", "colour": 1}, r"\[dataset\]"),
        ],
    )
    def test_rejects_dataset(self, dataset, message):
        with pytest.raises(ConfigError, match=message):
            config(dataset={"kind": "mock", **dataset})

    def test_missing_sections(self):
        data = tiny()
        del data["dataset"]
        with pytest.raises(ConfigError, match=r"missing \[dataset\]"):
            ExperimentConfig.from_dict(data)
        with pytest.raises(ConfigError, match="missing 'kind'"):
            config(models=[{"l2": 1.0}])

    def test_csv_path_resolves_against_base_dir(self, tmp_path):
        data = tiny(dataset={"kind": "csv", "preset": "adult_income", "path": "adult.csv"})
        cfg = ExperimentConfig.from_dict(data, base_dir=tmp_path)
        ingest = cfg.dataset.ingest_config(seed=4)
        assert ingest.path == str(tmp_path / "adult.csv")
        assert ingest.seed == 4 and ingest.positive_label == ">50K"

    def test_csv_needs_path(self):
        with pytest.raises(ConfigError, match="needs a 'path'"):
            config(dataset={"kind": "csv", "target_column": "y", "positive_label": "1"})


class TestLoadConfig:
    def test_presets_listed(self):
        names = preset_names()
        assert {"mock1", "mock3", "adult_income"} <= set(names)
        assert names == sorted(names)

    def test_preset(self):
        cfg = load_config("mock1")
        assert cfg.name == "mock1" and cfg.source == "mock1"
        assert [m.kind for m in cfg.models] == ["lr", "blr", "rf", "mlp"]
        assert cfg.noise.n_levels == 11

    def test_every_mock_preset_validates(self):
        for name in preset_names():
            if name.startswith("mock"):
                assert load_config(name).dataset.kind == "mock"

    def test_file(self, tmp_path):
        path = tmp_path / "tiny.toml"
        path.write_text(TINY_TOML)
        assert load_config(path) == ExperimentConfig.from_dict(tiny(), base_dir=tmp_path)

    def test_unknown_source(self):
        with pytest.raises(ConfigError, match="neither a file nor a preset"):
            load_config("no-such-experiment")

    def test_bad_toml(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("name = \n")
        with pytest.raises(ConfigError, match="bad.toml"):
            load_config(path)


# ===================================================================
# Runner helpers
# ===================================================================

class TestRunnerHelpers:
    def test_workers_from_environment(self, monkeypatch):
        monkeypatch.setenv(runner.WORKERS_ENV, "3")
        assert resolve_workers() == 3
        assert resolve_workers(2) == 2

    def test_workers_rejected(self, monkeypatch):
        monkeypatch.setenv(runner.WORKERS_ENV, "many")
        with pytest.raises(ConfigError, match="must be an integer"):
            resolve_workers()
        with pytest.raises(ConfigError, match="at least 1"):
            resolve_workers(0)

    def test_level_buckets(self):
        assert level_buckets(2) == {0: Bucket.LOW, 1: Bucket.HIGH}
        assert level_buckets(3) == {0: Bucket.LOW, 1: Bucket.MEDIUM, 2: Bucket.HIGH}

    def test_replicate_seeds(self):
        a = replicate_seeds(0, 0)
        assert a == replicate_seeds(0, 0)
        assert a != replicate_seeds(0, 1)
        assert set(a) == {"replicate", "data", "split", "noise", "model"}


# ===================================================================
# Experiment runs
# ===================================================================

class TestRunExperiment:
    def test_manifest(self, tiny_run):
        run_dir, manifest, _ = tiny_run
        assert manifest.status == "ok" and manifest.exit_code == 0
        assert manifest.config_hash == config().config_hash()
        assert manifest.completeness == {"lr-milp": 1.0}
        assert manifest.posterior_model["likelihood"] == "Student-t"
        assert set(CSV_TABLES) <= set(manifest.artifacts)
        assert {"data", "split", "fit", "explain", "tables"} <= set(manifest.timings)
        stored = RunManifest.read(run_dir)
        assert stored.config_hash == manifest.config_hash
        assert stored.artifacts == manifest.artifacts

    def test_accuracy_per_level(self, tiny_run):
        _, manifest, results = tiny_run
        assert [(a.noise_level, a.model) for a in results.accuracy] == [
            (0, "lr"), (1, "lr"), (2, "lr")
        ]
        assert len(manifest.accuracy["lr"]) == 3
        assert manifest.accuracy["lr"][0] > 0.6

    def test_clean_level_pairs_with_itself(self, tiny_run):
        _, _, results = tiny_run
        clean = [r for r in results.records if r.noise_level == 0]
        assert clean
        assert all(r.distance == 0.0 and r.relative_distance == 0.0 for r in clean)

    def test_descriptive_counts_baseline_pairs(self, tiny_run):
        run_dir, _, results = tiny_run
        table = pd.read_csv(run_dir / "descriptive.csv")
        row = table[table["group"] == "ALL"].iloc[0]
        clean = [r for r in results.records if r.noise_level == 0 and r.group == Group.ALL]
        assert row["N Baseline Pairs (Low)"] == len(clean) > 0
        assert "N Baseline Pairs (High)" not in table.columns

    def test_records_grouped(self, tiny_run):
        _, _, results = tiny_run
        groups = {r.group for r in results.records}
        assert Group.ALL in groups and groups <= set(Group)
        n_all = sum(r.group == Group.ALL for r in results.records)
        n_split = sum(r.group != Group.ALL for r in results.records)
        assert n_all == n_split

    def test_every_attempt_valid(self, tiny_run):
        _, _, results = tiny_run
        assert results.attempts
        assert all(a.cf.valid for a in results.attempts)
        assert {a.noise_level for a in results.attempts} == {0, 1, 2}

    def test_rerun_is_byte_identical(self, tiny_run, tmp_path):
        run_dir, _, _ = tiny_run
        run_experiment(config(), tmp_path, workers=1)
        for name in CSV_TABLES:
            assert (tmp_path / name).read_bytes() == (run_dir / name).read_bytes(), name

    def test_tables_reemitted_from_artifacts(self, tiny_run, tmp_path):
        run_dir, _, results = tiny_run
        reloaded = load_results(run_dir)
        assert reloaded.config == results.config
        assert len(reloaded.records) == len(results.records)
        assert set(reloaded.records) == set(results.records)
        emit_tables(reloaded, tmp_path)
        for name in ("records.csv", "accuracy.csv", "descriptive.csv", "comparison.csv"):
            assert (tmp_path / name).read_bytes() == (run_dir / name).read_bytes(), name

    def test_incomplete_method_excluded(self, tmp_path):
        cfg = config(methods=[{"kind": "milp"}, {"kind": "random_search", "budget": 1}])
        manifest, results = run_experiment(cfg, tmp_path, workers=1)
        assert manifest.status == "excluded" and manifest.exit_code == 1
        assert [e["combo"] for e in manifest.exclusions] == ["lr-random_search"]
        assert manifest.completeness["lr-random_search"] == 0.0
        assert results.included_combos == ["lr-milp"]
        descriptive = (tmp_path / "descriptive.csv").read_text()
        assert "lr-random_search" not in descriptive
        assert any("lr-random_search" in w for w in manifest.warnings)

    def test_unsound_counterfactual_marked_invalid(self, tmp_path, monkeypatch):
        real = runner.generate

        def unmoved(method, model, x, w, schema, search, **kwargs):
            if method != "nice":
                return real(method, model, x, w, schema, search, **kwargs)
            x = np.asarray(x, dtype=float)
            return Counterfactual(kwargs["instance_id"], x, x, method, True, 0.0)

        monkeypatch.setattr(runner, "generate", unmoved)
        cfg = config(methods=[{"kind": "milp"}, {"kind": "nice"}])
        manifest, results = run_experiment(cfg, tmp_path, workers=1)
        nice = [a.cf for a in results.attempts if a.cf.method == "nice"]
        assert nice and not any(cf.valid for cf in nice)
        assert all("predicts 0, not 1" in cf.reason for cf in nice)
        assert manifest.completeness["lr-nice"] == 0.0
        assert [e["combo"] for e in manifest.exclusions] == ["lr-nice"]
        assert not any(r.method == "nice" for r in results.records)
        assert any("marked invalid" in w for w in manifest.warnings)

    def test_mirror_reports_all_only(self, tmp_path):
        _, results = run_experiment(config(mirror=True), tmp_path, workers=1)
        assert {r.group for r in results.records} == {Group.ALL}
        assert all(a.group is None for a in results.attempts)

    def test_max_instances(self, tmp_path):
        _, results = run_experiment(config(max_instances=5), tmp_path, workers=1)
        assert len({a.cf.id for a in results.attempts}) <= 5

    def test_stage_failure_writes_error_manifest(self, tmp_path, monkeypatch):
        def broken(*args, **kwargs):
            raise RuntimeError("solver exploded")

        monkeypatch.setattr(runner, "fit_model", broken)
        with pytest.raises(ExperimentError, match="solver exploded") as info:
            run_experiment(config(), tmp_path, workers=1)
        assert info.value.stage.startswith("fit")
        manifest = RunManifest.read(tmp_path)
        assert manifest.status == "error" and manifest.exit_code == 2
        assert manifest.error["type"] == "RuntimeError"

    @pytest.mark.slow
    def test_epistemic_mixed_sweep(self, tmp_path):
        data = tiny(
            dataset={"kind": "mock", "preset": "mock3", "n_samples": 300},
            noise={"kind": "epistemic", "n_levels": 4, "max_sigma": 1.0, "max_flip": 0.1},
            models=[{"kind": "lr"}, {"kind": "blr"}],
            methods=[
                {"kind": "milp"},
                {"kind": "milp_mean"},
                {"kind": "milp_marg", "s": 4},
                {"kind": "nice"},
                {"kind": "random_search", "budget": 200},
            ],
            max_instances=10,
        )
        manifest, results = run_experiment(ExperimentConfig.from_dict(data), tmp_path)
        assert manifest.status in ("ok", "excluded")
        assert set(results.combos) == {
            "lr-milp", "lr-nice", "lr-random_search",
            "blr-milp", "blr-milp_mean", "blr-milp_marg", "blr-nice", "blr-random_search",
        }
        for combo in results.included_combos:
            assert any(r.combo == combo for r in results.records), combo

    @pytest.mark.slow
    def test_parallel_matches_serial(self, tiny_run, tmp_path):
        run_dir, _, _ = tiny_run
        run_experiment(config(), tmp_path, workers=2)
        for name in CSV_TABLES:
            assert (tmp_path / name).read_bytes() == (run_dir / name).read_bytes(), name


# ===================================================================
# Command line
# ===================================================================

def write_tiny(tmp_path: Path, text: str = TINY_TOML) -> Path:
    path = tmp_path / "tiny.toml"
    path.write_text(text)
    return path


class TestCli:
    def test_validate(self, tmp_path, capsys):
        assert main(["validate", str(write_tiny(tmp_path))]) == 0
        out = capsys.readouterr().out
        assert "tiny: OK (3 levels; lr-milp)" in out

    def test_validate_invalid(self, tmp_path, capsys):
        path = write_tiny(tmp_path, TINY_TOML.replace("n_levels = 3", "n_levels = 1"))
        assert main(["validate", str(path)]) == 2
        assert "Invalid configuration" in capsys.readouterr().out

    def test_run_then_tables(self, tmp_path, capsys):
        out_dir = tmp_path / "run"
        assert main(["run", str(write_tiny(tmp_path)), "--out", str(out_dir)]) == 0
        assert "status ok" in capsys.readouterr().out
        (out_dir / "descriptive.csv").unlink()
        assert main(["tables", str(out_dir)]) == 0
        assert (out_dir / "descriptive.csv").exists()

    def test_tables_missing_run_dir(self, tmp_path, capsys):
        assert main(["tables", str(tmp_path / "nowhere")]) == 2
        out = capsys.readouterr().out
        assert out.startswith("Cannot re-emit tables of")
        assert "manifest.json" in out
