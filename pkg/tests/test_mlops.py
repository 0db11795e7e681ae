"""Model workflow: dataset, exhaustive training, validation, catalog gates."""

import itertools
import math
import random

import pytest

from oranlab.errors import (
    EmptyInput, GridTooLarge, ImmutableEntry, NotPublished, NotValidated,
)
from oranlab.mlops import (
    Catalog, Dataset, best_split, collect, denormalize, deploy,
    monitor_and_retrain, observed_demand_cells, partition_count, partitions,
    prepare, train, train_pipeline, validate,
)
from oranlab.objectives import SLICE_IDS, SlicingObjectives, priority_weights
from oranlab.runner import run_scenario
from oranlab.scenario import load_scenario
from oranlab.xapps import PolicyModel, SlicingXapp, default_descriptor

OBJ = SlicingObjectives()
WEIGHTS = tuple(priority_weights(OBJ.priority)[s] for s in SLICE_IDS)


def oracle_split(demand, capacity, weights=WEIGHTS):
    """Independent re-implementation: search sum <= capacity, lexicographic
    tie-break, no trimming step."""
    best, best_cost = None, None
    for split in itertools.product(*(range(capacity + 1) for _ in demand)):
        if sum(split) > capacity:
            continue
        cost = sum(w * max(0, d - g) for w, d, g in zip(weights, demand, split))
        if best_cost is None or cost < best_cost:
            best, best_cost = split, cost
    return best


class TestPartitionSearch:
    def test_stars_and_bars_count(self):
        assert partition_count(10, 3) == math.comb(12, 2) == 66
        assert len(list(partitions(10, 3))) == 66

    def test_zero_demand_cell(self):
        assert best_split((0, 0, 0), 10, WEIGHTS) == (0, 0, 0)

    def test_demand_fits_capacity(self):
        assert best_split((3, 4, 2), 10, WEIGHTS) == (3, 4, 2)

    def test_matches_independent_oracle(self):
        rng = random.Random(17)
        for _ in range(60):
            capacity = rng.randrange(1, 13)
            demand = tuple(rng.randrange(0, 14) for _ in range(3))
            ours = best_split(demand, capacity, WEIGHTS)
            assert ours == oracle_split(demand, capacity)

    def test_never_overshoots_demand(self):
        rng = random.Random(18)
        for _ in range(100):
            capacity = rng.randrange(1, 20)
            demand = tuple(rng.randrange(0, 25) for _ in range(3))
            split = best_split(demand, capacity, WEIGHTS)
            assert all(g <= d for g, d in zip(split, demand))
            assert sum(split) <= capacity


@pytest.fixture(scope="module")
def training_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("runs")
    dirs = []
    for name in ("slicing-train-a", "slicing-train-b", "slicing-train-c"):
        out = base / name
        run_scenario(load_scenario(name), out_dir=str(out))
        dirs.append(str(out))
    return dirs


class TestCollect:
    def test_collect_is_deterministic(self, tmp_path):
        scenario = load_scenario("slicing-train-a")
        run_scenario(scenario, out_dir=str(tmp_path / "one"))
        run_scenario(scenario, out_dir=str(tmp_path / "two"))
        h1 = collect([str(tmp_path / "one")]).provenance_hash()
        h2 = collect([str(tmp_path / "two")]).provenance_hash()
        assert h1 == h2

    def test_zero_runs(self):
        with pytest.raises(EmptyInput):
            collect([])

    def test_overlapping_rows_deduplicated(self, training_runs):
        once = collect(training_runs[:1])
        twice = collect(training_runs[:1] + training_runs[:1])
        assert len(once.rows) == len(twice.rows)
        assert once.provenance_hash() == twice.provenance_hash()

    def test_corrupted_csv_error_names_the_file(self, tmp_path):
        run_dir = tmp_path / "bad-run"
        run_dir.mkdir()
        bad = run_dir / "kpm_monitor.csv"
        bad.write_text("time_ms,node,cell,slice,metric,value\n100,du-0,0,embb\n")
        with pytest.raises(EmptyInput) as exc:
            collect([str(run_dir)])
        assert "kpm_monitor.csv" in str(exc.value)
        assert "2" in str(exc.value)  # line number

    def test_window_inference(self, training_runs):
        dataset = collect(training_runs[:1])
        assert set(dataset.windows.values()) == {100}


class TestPrepare:
    def make_dataset(self, values, metric="prb_requested"):
        rows = [{"scenario": "s", "time_ms": 100 * (i + 1), "node": "du-0",
                 "cell": 0, "slice": "embb", "metric": metric, "value": v}
                for i, v in enumerate(values)]
        ds = Dataset(rows=rows)
        ds.windows = {("s", "du-0", 0, "embb", metric): 100}
        return ds

    def test_constant_column_maps_to_zero(self):
        prepared = prepare(self.make_dataset([7.0, 7.0, 7.0]))
        assert [r["value"] for r in prepared.rows] == [0.0, 0.0, 0.0]
        assert prepared.norm_params["prb_requested"] == (7.0, 7.0)

    def test_zero_fifty_maps_to_unit(self):
        prepared = prepare(self.make_dataset([0.0, 50.0]))
        assert [r["value"] for r in prepared.rows] == [0.0, 1.0]

    def test_denormalize_roundtrip(self):
        rng = random.Random(3)
        values = [rng.uniform(-100, 100) for _ in range(50)]
        ds = self.make_dataset(values)
        back = denormalize(prepare(ds))
        for row, v in zip(back.rows, values):
            assert row["value"] == pytest.approx(v, abs=1e-9)

    def test_empty_refused(self):
        with pytest.raises(EmptyInput):
            prepare(Dataset())


class TestTrain:
    def test_observed_cells_from_training_runs(self, training_runs):
        dataset = prepare(collect(training_runs))
        cells = observed_demand_cells(dataset, 5, 50)
        assert (10, 25, 5) in cells
        assert (20, 20, 5) in cells
        assert (5, 30, 10) in cells

    def test_table_matches_oracle_on_every_cell(self, training_runs):
        dataset = prepare(collect(training_runs))
        model = train(dataset, 50, OBJ)
        assert model.table
        for cell, split in model.table.items():
            expected = oracle_split(cell, 50)
            assert split == expected, f"cell {cell}"

    def test_training_is_deterministic(self, training_runs):
        dataset = prepare(collect(training_runs))
        m1 = train(dataset, 50, OBJ)
        m2 = train(dataset, 50, OBJ)
        assert m1.table == m2.table
        assert m1.model_id == m2.model_id
        assert m1.dataset_hash == m2.dataset_hash

    def test_grid_too_large(self, training_runs):
        dataset = prepare(collect(training_runs))
        with pytest.raises(GridTooLarge):
            train(dataset, 50, OBJ, full_grid=True, max_grid_cells=10)

    def test_full_grid_size(self, training_runs):
        dataset = prepare(collect(training_runs))
        model = train(dataset, 20, OBJ, full_grid=True)
        assert len(model.table) == 5 ** 3  # axis 0,5,10,15,20

    def test_empty_dataset(self):
        with pytest.raises(EmptyInput):
            train(Dataset(), 50, OBJ)


@pytest.fixture(scope="module")
def trained_model(training_runs):
    dataset = prepare(collect(training_runs))
    return train(dataset, 50, OBJ)


class TestValidate:
    def test_in_distribution_passes(self, trained_model):
        scenarios = [load_scenario("slicing-val-a"), load_scenario("slicing-val-b")]
        record = validate(trained_model, scenarios)
        assert record.pass_rate == 1.0
        assert record.passed
        assert trained_model.validation is not None

    def test_corrupted_table_fails(self, trained_model):
        corrupted = PolicyModel(
            model_id="corrupt", slice_ids=trained_model.slice_ids,
            capacity=trained_model.capacity, quant_step=trained_model.quant_step,
            table={cell: (0, 0, trained_model.capacity)
                   for cell in trained_model.table})
        record = validate(corrupted, [load_scenario("slicing-val-a")])
        assert record.pass_rate == 0.0
        assert not record.passed
        assert corrupted.validation is None  # stays trained

    def test_empty_scenario_list_refused(self, trained_model):
        with pytest.raises(EmptyInput):
            validate(trained_model, [])


class TestCatalog:
    def test_publish_requires_validation(self, tmp_path, trained_model):
        catalog = Catalog(str(tmp_path))
        unvalidated = PolicyModel(
            model_id="raw", slice_ids=SLICE_IDS, capacity=50,
            table=dict(trained_model.table))
        with pytest.raises(NotValidated):
            catalog.publish(unvalidated)

    def test_publish_writes_manifest(self, tmp_path, trained_model):
        catalog = Catalog(str(tmp_path))
        if trained_model.validation is None:
            trained_model.validation = {"pass_rate": 1.0, "scenarios": ["slicing-val-a"]}
        catalog.publish(trained_model)
        manifest = catalog.manifest(trained_model.model_id)
        assert manifest["model_id"] == trained_model.model_id
        assert manifest["dataset_hash"] == trained_model.dataset_hash
        assert float(manifest["pass_rate"]) == 1.0
        assert "created_at_ms" in manifest
        assert catalog.entries() == [trained_model.model_id]

    def test_republish_is_immutable(self, tmp_path, trained_model):
        catalog = Catalog(str(tmp_path))
        if trained_model.validation is None:
            trained_model.validation = {"pass_rate": 1.0, "scenarios": ["v"]}
        catalog.publish(trained_model)
        with pytest.raises(ImmutableEntry):
            catalog.publish(trained_model)

    def test_deploy_loads_into_xapp(self, tmp_path, trained_model):
        catalog = Catalog(str(tmp_path))
        if trained_model.validation is None:
            trained_model.validation = {"pass_rate": 1.0, "scenarios": ["v"]}
        catalog.publish(trained_model)
        xapp = SlicingXapp(default_descriptor("slicing-control"))
        deploy(catalog, trained_model.model_id, xapp)
        assert xapp.status()["model_id"] == trained_model.model_id

    def test_deploy_unknown_id(self, tmp_path):
        with pytest.raises(NotPublished):
            deploy(Catalog(str(tmp_path)), "ghost")


class TestMonitor:
    def test_no_events_when_clean(self):
        report = run_scenario(load_scenario("slicing-train-a"))
        assert monitor_and_retrain(report) == []

    def test_regime_shift_triggers_retrain(self, trained_model, tmp_path):
        scenario = load_scenario("regime-shift")
        out = tmp_path / "shift"
        report = run_scenario(scenario, out_dir=str(out),
                              model_override=trained_model)
        events = monitor_and_retrain(report, run_dir=str(out))
        assert events, "expected a retrain request after the load doubles"
        first = events[0]
        # shift at 10 s; detection within two 5 s rolling windows
        assert 10_000 < first["at_ms"] <= 20_000
        assert first["data_ref"]["run_dir"] == str(out)

    def test_event_data_ref_is_collectable(self, trained_model, tmp_path):
        scenario = load_scenario("regime-shift")
        out = tmp_path / "shift2"
        report = run_scenario(scenario, out_dir=str(out),
                              model_override=trained_model)
        events = monitor_and_retrain(report, run_dir=str(out))
        dataset = collect([events[0]["data_ref"]["run_dir"]])
        assert dataset.rows


class TestPipeline:
    def test_end_to_end_publish(self, tmp_path):
        trains = [load_scenario(f"slicing-train-{t}") for t in "abc"]
        vals = [load_scenario(f"slicing-val-{t}") for t in "ab"]
        model_id, record = train_pipeline(
            trains, vals, catalog_dir=str(tmp_path / "catalog"),
            workdir=str(tmp_path / "work"))
        assert record.passed
        catalog = Catalog(str(tmp_path / "catalog"))
        assert catalog.is_published(model_id)
        model = catalog.load(model_id)
        assert model.validation["pass_rate"] == 1.0

    def test_pipeline_determinism(self, tmp_path, training_runs):
        d1 = prepare(collect(training_runs))
        d2 = prepare(collect(training_runs))
        assert d1.provenance_hash() == d2.provenance_hash()
        assert train(d1, 50, OBJ).table == train(d2, 50, OBJ).table
