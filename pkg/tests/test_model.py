import io

import numpy as np
import pytest

from dcox.errors import ConfigError, EmptyDataset, MissingColumn, NonPositiveTime
from dcox.model import (
    ComputationPath, ModelSpec, Ties, concat_datasets, ingest_dataset, read_event_time_set,
    select_computation_path,
)
from support import example_spec, write_shards


def _spec(**kw):
    base = dict(dependent_var="week", censoring_var="arrest", independent_vars=("fin", "age", "prio"))
    base.update(kw)
    return ModelSpec(**base)


class TestModelSpec:
    def test_defaults(self):
        spec = _spec()
        assert spec.censoring_level == 0
        assert spec.strata_vars == ()
        assert spec.ties is Ties.BRESLOW
        assert spec.xconv == 1e-4
        assert spec.max_iter == 20
        assert spec.alpha == 0.05
        assert spec.groups == 10
        assert spec.min_count_per_grp_glob == 6
        assert spec.max_numb_of_grp == 10000
        assert spec.initial_estimates == (0.0, 0.0, 0.0)

    def test_ties_parsing_is_case_insensitive(self):
        assert _spec(ties="efron").ties is Ties.EFRON
        with pytest.raises(ConfigError):
            _spec(ties="exact")

    @pytest.mark.parametrize("kw", [
        dict(independent_vars=()),
        dict(independent_vars=("week", "age")),
        dict(independent_vars=("age", "age")),
        dict(xconv=0.0),
        dict(max_iter=0),
        dict(alpha=1.0),
        dict(groups=0),
        dict(initial_estimates=(0.0, 1.0)),
        dict(partner_ids=(1, 1)),
    ])
    def test_invalid_specs_rejected(self, kw):
        with pytest.raises(ConfigError):
            _spec(**kw)

    def test_referenced_columns_skip_partner_identifier(self):
        spec = _spec(strata_vars=("dp_cd", "sex"), weight_var="w")
        assert spec.referenced_columns() == ["week", "arrest", "fin", "age", "prio", "sex", "w"]


class TestComputationPath:
    def test_no_strata_is_center_aggregated(self):
        assert select_computation_path(_spec()) is ComputationPath.CENTER_AGGREGATED

    def test_partner_strata_is_site_aggregated(self):
        assert select_computation_path(_spec(strata_vars=("dp_cd",))) is ComputationPath.SITE_AGGREGATED

    def test_other_strata_is_center_aggregated(self):
        assert select_computation_path(_spec(strata_vars=("sex",))) is ComputationPath.CENTER_AGGREGATED


class TestIngestion:
    def test_shard_of_134_rows(self, tmp_path):
        paths = write_shards(tmp_path, event_counts=[36, 42, 36])
        ds = ingest_dataset(paths[0], example_spec(1), 1)
        assert ds.p == 3
        assert len(ds) == 134
        assert int(ds.event.sum()) == 36
        assert ds.dropped_rows == 0

    def test_header_only_is_empty(self):
        with pytest.raises(EmptyDataset):
            ingest_dataset(io.StringIO("week,arrest,fin,age,prio\n"), _spec())

    def test_blank_value_drops_row(self):
        text = "week,arrest,fin,age,prio\n20,1,0,27,3\n17,1,0,,8\n"
        ds = ingest_dataset(io.StringIO(text), _spec())
        assert len(ds) == 1
        assert ds.dropped_rows == 1

    def test_non_numeric_value_drops_row(self):
        text = "week,arrest,fin,age,prio\n20,1,0,27,3\n17,1,0,NA,8\n"
        assert ingest_dataset(io.StringIO(text), _spec()).dropped_rows == 1

    def test_missing_column_named(self):
        with pytest.raises(MissingColumn, match="prio"):
            ingest_dataset(io.StringIO("week,arrest,fin,age\n20,1,0,27\n"), _spec())

    def test_non_positive_time(self):
        with pytest.raises(NonPositiveTime):
            ingest_dataset(io.StringIO("week,arrest,fin,age,prio\n0,1,0,27,3\n"), _spec())

    def test_event_from_censoring_level(self):
        text = "week,arrest,fin,age,prio\n1,2,0,20,1\n2,9,0,20,1\n3,2,0,20,1\n"
        ds = ingest_dataset(io.StringIO(text), _spec(censoring_level=2))
        assert ds.event.tolist() == [0, 1, 0]

    def test_weight_and_freq_rules(self):
        text = "t,e,x,w,f\n1,1,0,1,1\n2,1,0,-1,1\n3,1,0,1,0\n4,1,0,1,1.5\n5,1,0,2,3\n"
        spec = ModelSpec(dependent_var="t", censoring_var="e", independent_vars=("x",), weight_var="w", freq_var="f")
        ds = ingest_dataset(io.StringIO(text), spec)
        assert ds.dropped_rows == 3
        assert ds.weight.tolist() == [1.0, 2.0]
        assert ds.freq.tolist() == [1, 3]

    def test_partner_stratum_from_column_or_id(self):
        spec = _spec(strata_vars=("dp_cd",))
        with_col = "week,arrest,fin,age,prio,dp_cd\n20,1,0,27,3,7\n"
        without = "week,arrest,fin,age,prio\n20,1,0,27,3\n"
        assert ingest_dataset(io.StringIO(with_col), spec, 2).strata == ((7.0,),)
        assert ingest_dataset(io.StringIO(without), spec, 2).strata == ((2.0,),)

    def test_deterministic(self, rossi_file):
        a = ingest_dataset(rossi_file, _spec())
        b = ingest_dataset(rossi_file, _spec())
        for col in ("time", "event", "covariates", "weight", "freq"):
            np.testing.assert_array_equal(getattr(a, col), getattr(b, col))
        assert a.strata == b.strata

    def test_shard_counts_add_up(self, tmp_path, rossi_file):
        spec = _spec()
        shards = [ingest_dataset(p, spec, k) for k, p in enumerate(write_shards(tmp_path, seed=4), start=1)]
        pooled = ingest_dataset(rossi_file, spec)
        assert sum(len(s) for s in shards) == len(pooled) == 432
        assert len(concat_datasets(shards)) == 432

    def test_stratum_keys_sorted(self):
        text = "week,arrest,fin,age,prio,sex\n1,1,0,1,1,2\n2,1,0,1,1,1\n3,0,0,1,1,2\n"
        ds = ingest_dataset(io.StringIO(text), _spec(strata_vars=("sex",)))
        assert ds.stratum_keys == ((1.0,), (2.0,))
        assert ds.stratum_indices()[(2.0,)].tolist() == [0, 2]


class TestEventTimeSet:
    def test_unstratified_list(self):
        grid = read_event_time_set(io.StringIO("week\n3\n1\n3\n2\n"), _spec())
        assert grid.times[()].tolist() == [1.0, 2.0, 3.0]

    def test_missing_dependent_column(self):
        with pytest.raises(MissingColumn):
            read_event_time_set(io.StringIO("time\n1\n"), _spec())
