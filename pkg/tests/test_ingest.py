"""Tests for ``cfrobust.ingest``: CSV loading, encoding and stratified splits."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from cfrobust.core import Dataset, continuous_schema, validate_dataset
from cfrobust.errors import DegenerateColumnError, IngestError, ParameterError, StratificationError
from cfrobust.ingest import (
    MISSING,
    OTHER,
    IngestConfig,
    ingest_preset,
    load_csv,
    load_dataset,
    merge_rare_categories,
    preprocess,
    subsample_rows,
    train_test_split,
)

FIXTURES = Path(__file__).parent / "fixtures"
ADULT = FIXTURES / "adult_sample.csv"


# ===================================================================
# Fixtures
# ===================================================================

def adult_config(**overrides) -> IngestConfig:
    options = {"min_category_frequency": 0, "subsample_fraction": 1.0, **overrides}
    return ingest_preset("adult_income", ADULT, **options)


def write(tmp_path: Path, text: str) -> Path:
    path = tmp_path / "table.csv"
    path.write_text(text)
    return path


def balanced(n0: int, n1: int) -> Dataset:
    n = n0 + n1
    y = np.array([0] * n0 + [1] * n1)
    return Dataset(np.arange(n, dtype=float)[:, None], y, np.arange(n), continuous_schema(["v"]))


# ===================================================================
# Configuration
# ===================================================================

class TestIngestConfig:
    def test_subsample_fraction_range(self):
        with pytest.raises(ParameterError, match="subsample_fraction"):
            IngestConfig("x.csv", "y", "1", subsample_fraction=0.0)

    def test_unknown_preset(self):
        with pytest.raises(ParameterError, match="unknown dataset preset 'iris'"):
            ingest_preset("iris", "x.csv")

    def test_overrides_win(self):
        cfg = ingest_preset("adult_income", "a.csv", subsample_fraction=0.5)
        assert cfg.subsample_fraction == 0.5
        assert cfg.min_category_frequency == 300
        assert cfg.positive_label == ">50K"


# ===================================================================
# Loading
# ===================================================================

class TestLoadCsv:
    def test_adult_columns(self):
        raw = load_csv(adult_config())
        assert raw.n_rows == 20
        assert raw.numeric_columns == ("age", "hours-per-week")
        assert "income" not in raw.feature_columns
        assert len(raw.feature_columns) == 10

    def test_question_mark_is_missing(self):
        raw = load_csv(adult_config())
        assert np.isnan(raw.frame["age"].iloc[17])
        assert pd.isna(raw.frame["workclass"].iloc[19])

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_csv(IngestConfig(str(tmp_path / "nope.csv"), "y", "1"))

    def test_missing_target(self, tmp_path):
        path = write(tmp_path, "a,b\n1,2\n")
        with pytest.raises(IngestError, match="target column 'y' not found"):
            load_csv(IngestConfig(str(path), "y", "1"))

    def test_missing_categorical(self, tmp_path):
        path = write(tmp_path, "a,y\n1,0\n")
        with pytest.raises(IngestError, match=r"categorical columns \['c'\] not found"):
            load_csv(IngestConfig(str(path), "y", "1", categorical_columns=("c",)))

    def test_unparseable_number(self, tmp_path):
        path = write(tmp_path, "a,y\n1,0\nabc,1\n")
        with pytest.raises(IngestError, match="row 1, column 'a': cannot parse 'abc'"):
            load_csv(IngestConfig(str(path), "y", "1"))


# ===================================================================
# Preprocessing
# ===================================================================

class TestPreprocess:
    def test_adult_encoding(self):
        cfg = adult_config()
        data = load_dataset(cfg)
        assert data.n == 20
        assert int(data.y.sum()) == 7
        assert data.ids.tolist() == list(range(20))
        assert len(data.schema.groups) == 8
        assert all(not g.drop_one for g in data.schema.groups)
        assert validate_dataset(data) == []

    def test_categories_by_frequency(self):
        data = load_dataset(adult_config())
        assert data.schema.group("workclass").categories == (
            "Private", "Self-emp-not-inc", "State-gov", MISSING,
        )
        assert data.schema.decode_group(data.row(19), "workclass") == MISSING

    def test_median_imputation_in_raw_units(self):
        data = load_dataset(adult_config())
        j = data.schema.index("age")
        assert data.schema.columns[j].decode(data.x[17, j]) == pytest.approx(38.0)

    def test_imputation_uses_fit_rows_only(self, tmp_path):
        path = write(tmp_path, "a,y\n1,0\n2,1\n3,0\n,1\n100,0\n200,1\n")
        cfg = IngestConfig(str(path), "y", "1", standardize=False)
        raw = load_csv(cfg)
        assert preprocess(raw, cfg).x[3, 0] == 3.0
        assert preprocess(raw, cfg, fit_rows=np.array([0, 1, 2, 3])).x[3, 0] == 2.0

    def test_scaling_uses_fit_rows_only(self, tmp_path):
        path = write(tmp_path, "a,y\n1,0\n2,1\n3,0\n100,1\n")
        cfg = IngestConfig(str(path), "y", "1")
        data = preprocess(load_csv(cfg), cfg, fit_rows=np.array([0, 1, 2]))
        column = data.schema.columns[0]
        assert column.center == pytest.approx(2.0)
        assert column.scale == pytest.approx(np.sqrt(2 / 3))
        assert column.decode(data.x[3, 0]) == pytest.approx(100.0)
        assert column.bounds[1] == pytest.approx(data.x[3, 0])

    def test_split_fitted_on_training_rows(self):
        data = load_dataset(adult_config(), test_fraction=0.3, split_seed=2)
        train, test = train_test_split(data, 0.3, seed=2)
        j = data.schema.index("hours-per-week")
        assert train.x[:, j].mean() == pytest.approx(0.0, abs=1e-12)
        assert train.x[:, j].std() == pytest.approx(1.0)
        assert test.n == 6
        assert validate_dataset(data) == []

    def test_standardized_columns(self):
        data = load_dataset(adult_config())
        j = data.schema.index("hours-per-week")
        assert data.x[:, j].mean() == pytest.approx(0.0, abs=1e-12)
        assert data.x[:, j].std() == pytest.approx(1.0)
        lo, hi = data.schema.columns[j].bounds
        assert lo == pytest.approx(data.x[:, j].min())
        assert hi == pytest.approx(data.x[:, j].max())

    def test_unstandardized_keeps_raw_values(self):
        data = load_dataset(adult_config(standardize=False))
        j = data.schema.index("hours-per-week")
        assert data.x[0, j] == 40.0

    def test_rare_categories_merged(self):
        data = load_dataset(adult_config(min_category_frequency=3))
        assert data.schema.group("workclass").categories == ("Private", "Self-emp-not-inc", OTHER)

    def test_single_category_rejected(self, tmp_path):
        path = write(tmp_path, "c,y\na,0\na,1\na,0\n")
        cfg = IngestConfig(str(path), "y", "1", categorical_columns=("c",))
        with pytest.raises(DegenerateColumnError, match="single category 'a'"):
            load_dataset(cfg)

    def test_numeric_positive_label(self, tmp_path):
        path = write(
            tmp_path,
            ",SeriousDlqin2yrs,RevolvingUtilization,age\n"
            "1,1,0.5,45\n2,0,0.2,40\n3,0,NA,33\n4,1,0.9,50\n",
        )
        cfg = ingest_preset("give_me_some_credit", path, subsample_fraction=1.0)
        data = load_dataset(cfg)
        assert data.schema.names == ("RevolvingUtilization", "age")
        assert data.y.tolist() == [0, 1, 1, 0]

    def test_rows_without_target_dropped(self, tmp_path):
        path = write(tmp_path, "a,y\n1,0\n2,\n3,1\n4,0\n")
        data = load_dataset(IngestConfig(str(path), "y", "1"))
        assert data.ids.tolist() == [0, 2, 3]

    def test_subsample_keeps_original_ids(self, tmp_path):
        rows = "".join(f"{i},{i % 2}\n" for i in range(20))
        path = write(tmp_path, "a,y\n" + rows)
        cfg = IngestConfig(str(path), "y", "1", subsample_fraction=0.5, seed=3, standardize=False)
        data = load_dataset(cfg)
        assert data.n == 10
        assert np.all(np.diff(data.ids) > 0)
        np.testing.assert_array_equal(data.x[:, 0], data.ids.astype(float))
        assert preprocess(load_csv(cfg), cfg).ids.tolist() == data.ids.tolist()


class TestHelpers:
    def test_merge_rare(self):
        s = pd.Series(["a", "a", "b", "c", "c"])
        assert merge_rare_categories(s, 2).tolist() == ["a", "a", OTHER, "c", "c"]
        assert merge_rare_categories(s, 0) is s

    def test_subsample_rows(self):
        rows = subsample_rows(10, 0.35, seed=0)
        assert len(rows) == 3
        assert rows.tolist() == sorted(rows.tolist())
        assert rows.tolist() == subsample_rows(10, 0.35, seed=0).tolist()
        assert subsample_rows(4, 1.0, seed=0).tolist() == [0, 1, 2, 3]

    def test_subsample_too_small(self):
        with pytest.raises(ParameterError, match="keeps no rows"):
            subsample_rows(10, 0.01, seed=0)


# ===================================================================
# Splitting
# ===================================================================

class TestTrainTestSplit:
    def test_stratified_sizes(self):
        train, test = train_test_split(balanced(60, 40), 0.3, seed=1)
        assert test.n == 30 and train.n == 70
        assert int((test.y == 0).sum()) == 18
        assert int((test.y == 1).sum()) == 12

    def test_partition(self):
        d = balanced(60, 40)
        train, test = train_test_split(d, 0.3, seed=1)
        assert set(train.ids).isdisjoint(test.ids)
        assert sorted([*train.ids, *test.ids]) == d.ids.tolist()

    def test_seeded(self):
        d = balanced(60, 40)
        a = train_test_split(d, 0.3, seed=5)[1].ids
        b = train_test_split(d, 0.3, seed=5)[1].ids
        c = train_test_split(d, 0.3, seed=6)[1].ids
        assert a.tolist() == b.tolist()
        assert a.tolist() != c.tolist()

    def test_fraction_range(self):
        with pytest.raises(ParameterError, match="test_fraction"):
            train_test_split(balanced(5, 5), 1.0)

    def test_singleton_class(self):
        with pytest.raises(StratificationError, match="class 1 has 1 row"):
            train_test_split(balanced(3, 1), 0.3)

    def test_too_few_rows(self):
        with pytest.raises(StratificationError, match="too few"):
            train_test_split(balanced(2, 2), 0.3)
