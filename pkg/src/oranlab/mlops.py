"""The offline model workflow for the slicing policy table.

Six stages: collect run outputs into a dataset, prepare (min-max
normalization), train (exhaustive search over integer PRB partitions per
quantized demand cell), validate against held-out scenarios in the
simulator, publish into an immutable catalog, and monitor deployed models
for retraining triggers. No stage may be skipped: publish requires a
validation record, deploy requires a published entry.
"""

from __future__ import annotations

import hashlib
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import (
    EmptyInput, GridTooLarge, ImmutableEntry, NotPublished, NotValidated,
)
from .objectives import SLICE_IDS, SlicingObjectives, priority_weights
from .runner import RunReport, run_scenario
from .scenario import Scenario
from .xapps import PolicyModel, SlicingXapp

DEFAULT_PASS_THRESHOLD = 0.95
DEFAULT_VIOLATION_BUDGET = 0.05
DEFAULT_QUANT_STEP = 5
DEFAULT_MAX_GRID_CELLS = 50_000


@dataclass
class Dataset:
    """Long-form telemetry rows plus normalization bookkeeping."""

    rows: list[dict] = field(default_factory=list)
    # per-(node, cell, slice, metric) report cadence in ms, inferred
    windows: dict[tuple, int] = field(default_factory=dict)
    norm_params: dict[str, tuple[float, float]] = field(default_factory=dict)
    normalized: bool = False

    def provenance_hash(self) -> str:
        h = hashlib.sha256()
        for row in sorted(self.rows, key=_row_key):
            h.update(
                f"{row['scenario']},{row['time_ms']},{row['node']},{row['cell']},"
                f"{row['slice']},{row['metric']},{row['value']!r};".encode())
        return h.hexdigest()


def _row_key(row: dict) -> tuple:
    return (row["scenario"], row["time_ms"], row["node"], row["cell"],
            row["slice"], row["metric"])


def _read_csv_rows(path: Path, scenario_id: str) -> list[dict]:
    rows = []
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        return rows
    if lines[0] != "time_ms,node,cell,slice,metric,value":
        raise EmptyInput(f"{path}: unexpected header {lines[0]!r}")
    for lineno, line in enumerate(lines[1:], 2):
        parts = line.split(",")
        if len(parts) != 6:
            raise EmptyInput(f"{path}:{lineno}: expected 6 columns")
        t, node, cell, slc, metric, value = parts
        try:
            rows.append({"scenario": scenario_id, "time_ms": int(t), "node": node,
                         "cell": int(cell) if cell else -1, "slice": slc,
                         "metric": metric, "value": float(value)})
        except ValueError as exc:
            raise EmptyInput(f"{path}:{lineno}: {exc}") from exc
    return rows


def collect(run_dirs: list[str]) -> Dataset:
    """Merge kpm-monitor CSVs (preferred) and O1 PM files from completed
    runs into one deduplicated dataset keyed (scenario, time, scope)."""
    dataset = Dataset()
    seen: dict[tuple, dict] = {}
    if not run_dirs:
        raise EmptyInput("no run outputs to collect")
    for run_dir in run_dirs:
        base = Path(run_dir)
        report_path = base / "report.json"
        scenario_id = base.name
        if report_path.exists():
            import json
            scenario_id = json.loads(report_path.read_text())["scenario"]
        sources = []
        kpm = base / "kpm_monitor.csv"
        if kpm.exists():
            sources.append(kpm)
        pm_dir = base / "pm"
        if not sources and pm_dir.is_dir():
            sources.extend(sorted(pm_dir.glob("*.csv")))
        for source in sources:
            for row in _read_csv_rows(source, scenario_id):
                seen[(_row_key(row))] = row
    if not seen:
        raise EmptyInput("collected zero rows")
    dataset.rows = [seen[k] for k in sorted(seen)]
    _infer_windows(dataset)
    return dataset


def _infer_windows(dataset: Dataset) -> None:
    series: dict[tuple, list[int]] = {}
    for row in dataset.rows:
        key = (row["scenario"], row["node"], row["cell"], row["slice"], row["metric"])
        series.setdefault(key, []).append(row["time_ms"])
    for key, times in series.items():
        times.sort()
        deltas = [b - a for a, b in zip(times, times[1:]) if b > a]
        dataset.windows[key] = min(deltas) if deltas else times[0] or 1


def prepare(dataset: Dataset) -> Dataset:
    """Min-max normalize the value column per metric to [0, 1]; constant
    columns map to 0. Parameters stay with the dataset."""
    if not dataset.rows:
        raise EmptyInput("cannot prepare an empty dataset")
    by_metric: dict[str, list[float]] = {}
    for row in dataset.rows:
        by_metric.setdefault(row["metric"], []).append(row["value"])
    params = {m: (min(vs), max(vs)) for m, vs in by_metric.items()}
    out_rows = []
    for row in dataset.rows:
        mn, mx = params[row["metric"]]
        value = 0.0 if mx == mn else (row["value"] - mn) / (mx - mn)
        out_rows.append({**row, "value": value})
    return Dataset(rows=out_rows, windows=dict(dataset.windows),
                   norm_params=params, normalized=True)


def denormalize(dataset: Dataset) -> Dataset:
    if not dataset.normalized:
        return dataset
    out_rows = []
    for row in dataset.rows:
        mn, mx = dataset.norm_params[row["metric"]]
        out_rows.append({**row, "value": mn if mx == mn else row["value"] * (mx - mn) + mn})
    return Dataset(rows=out_rows, windows=dict(dataset.windows))


def observed_demand_cells(dataset: Dataset, quant_step: int,
                          capacity: int) -> set[tuple[int, ...]]:
    """Quantized per-slice demand vectors visited by the dataset."""
    raw = denormalize(dataset)
    per_time: dict[tuple, dict[str, float]] = {}
    for row in raw.rows:
        if row["metric"] != "prb_requested":
            continue
        window_key = (row["scenario"], row["node"], row["cell"], row["slice"],
                      row["metric"])
        window_ms = raw.windows.get(window_key, 100)
        demand = row["value"] / max(window_ms, 1)
        key = (row["scenario"], row["time_ms"], row["node"], row["cell"])
        per_time.setdefault(key, {})[row["slice"]] = demand
    probe = PolicyModel("probe", SLICE_IDS, capacity, quant_step)
    cells = set()
    for _, demand in sorted(per_time.items()):
        vector = tuple(probe.quantize(round(demand.get(s, 0.0))) for s in SLICE_IDS)
        cells.add(vector)
    return cells


def partitions(capacity: int, parts: int):
    """All integer splits of exactly `capacity` into `parts` non-negative
    parts, in lexicographic order."""
    if parts == 1:
        yield (capacity,)
        return
    for head in range(capacity + 1):
        for tail in partitions(capacity - head, parts - 1):
            yield (head,) + tail


def partition_count(capacity: int, parts: int) -> int:
    # stars and bars: C(capacity + parts - 1, parts - 1)
    import math
    return math.comb(capacity + parts - 1, parts - 1)


def best_split(demand: tuple[int, ...], capacity: int,
               weights: tuple[float, ...]) -> tuple[int, ...]:
    """Exhaustive argmin of the weighted shortfall over all partitions of
    `capacity`, lexicographically first on ties, trimmed to the demand."""
    best = None
    best_cost = None
    for split in partitions(capacity, len(demand)):
        cost = sum(w * max(0, d - g) for w, d, g in zip(weights, demand, split))
        if best_cost is None or cost < best_cost:
            best, best_cost = split, cost
    return tuple(min(g, d) for g, d in zip(best, demand))


def train(dataset: Dataset, capacity: int,
          objectives: SlicingObjectives = SlicingObjectives(),
          quant_step: int = DEFAULT_QUANT_STEP,
          full_grid: bool = False,
          max_grid_cells: int = DEFAULT_MAX_GRID_CELLS) -> PolicyModel:
    """Offline training: one exhaustive-search table entry per demand cell
    (observed cells by default, the full grid when full_grid is set)."""
    if not dataset.rows:
        raise EmptyInput("cannot train on an empty dataset")
    if full_grid:
        axis = list(range(0, capacity + 1, quant_step))
        if capacity % quant_step:
            axis.append(capacity)
        cells = {(a, b, c) for a in axis for b in axis for c in axis}
    else:
        cells = observed_demand_cells(dataset, quant_step, capacity)
    if len(cells) > max_grid_cells:
        raise GridTooLarge(
            f"{len(cells)} grid cells exceed the cap {max_grid_cells}; "
            f"raise the quantization step")
    weight_by_slice = priority_weights(objectives.priority)
    weights = tuple(weight_by_slice.get(s, 1.0) for s in SLICE_IDS)
    table = {}
    for cell in sorted(cells):
        table[cell] = best_split(cell, capacity, weights)
    dataset_hash = dataset.provenance_hash()
    scenarios = tuple(sorted({row["scenario"] for row in dataset.rows}))
    model = PolicyModel(
        model_id=f"slicing-{dataset_hash[:12]}",
        slice_ids=SLICE_IDS, capacity=capacity, quant_step=quant_step,
        table=table, dataset_hash=dataset_hash, scenarios=scenarios)
    model.check()
    return model


@dataclass
class ValidationRecord:
    pass_rate: float
    scenarios: list[str]
    per_scenario: dict[str, float]
    passed: bool


def validate(model: PolicyModel, scenarios: list[Scenario],
             violation_budget: float = DEFAULT_VIOLATION_BUDGET,
             pass_threshold: float = DEFAULT_PASS_THRESHOLD) -> ValidationRecord:
    """Run each held-out scenario with the model driving the slicing xApp;
    a scenario passes when post-warmup violation windows stay within the
    budget. Success attaches the validation record to the model."""
    if not scenarios:
        raise EmptyInput("validation refused: no scenarios")
    per_scenario = {}
    passed = 0
    for scenario in scenarios:
        report = run_scenario(scenario, model_override=model)
        per_scenario[scenario.name] = report.violation_rate
        if report.violation_rate <= violation_budget:
            passed += 1
    pass_rate = passed / len(scenarios)
    record = ValidationRecord(
        pass_rate=pass_rate, scenarios=[s.name for s in scenarios],
        per_scenario=per_scenario, passed=pass_rate >= pass_threshold)
    if record.passed:
        model.validation = {"pass_rate": pass_rate, "scenarios": record.scenarios}
    return record


class Catalog:
    """Immutable model catalog: catalog/<model_id>/{model.tbl, manifest.txt}."""

    def __init__(self, root: str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def entry_dir(self, model_id: str) -> Path:
        return self.root / model_id

    def is_published(self, model_id: str) -> bool:
        base = self.entry_dir(model_id)
        return (base / "model.tbl").exists() and (base / "manifest.txt").exists()

    def publish(self, model: PolicyModel,
                pass_threshold: float = DEFAULT_PASS_THRESHOLD) -> Path:
        if model.validation is None or \
                model.validation["pass_rate"] < pass_threshold:
            raise NotValidated(
                f"model {model.model_id} lacks a passing validation record")
        target = self.entry_dir(model.model_id)
        if target.exists():
            raise ImmutableEntry(f"catalog entry {model.model_id} already exists")
        # created_at marks the end of the training data in simulated time
        created_at_ms = 0
        tmp = Path(tempfile.mkdtemp(dir=self.root, prefix=".publish-"))
        try:
            (tmp / "model.tbl").write_text(model.to_text(), encoding="utf-8")
            manifest = (
                f"model_id={model.model_id}\n"
                f"dataset_hash={model.dataset_hash}\n"
                f"pass_rate={model.validation['pass_rate']:.6f}\n"
                f"created_at_ms={created_at_ms}\n"
            )
            (tmp / "manifest.txt").write_text(manifest, encoding="utf-8")
            os.rename(tmp, target)
        finally:
            if tmp.exists() and tmp != target:
                for leftover in tmp.iterdir():
                    leftover.unlink()
                tmp.rmdir()
        return target

    def manifest(self, model_id: str) -> dict:
        if not self.is_published(model_id):
            raise NotPublished(f"model {model_id} is not in the catalog")
        out = {}
        for line in (self.entry_dir(model_id) / "manifest.txt").read_text().splitlines():
            key, _, value = line.partition("=")
            out[key] = value
        return out

    def model_path(self, model_id: str) -> str:
        if not self.is_published(model_id):
            raise NotPublished(f"model {model_id} is not in the catalog")
        return str(self.entry_dir(model_id) / "model.tbl")

    def load(self, model_id: str) -> PolicyModel:
        path = self.model_path(model_id)
        model = PolicyModel.from_text(Path(path).read_text(encoding="utf-8"))
        return model

    def entries(self) -> list[str]:
        return sorted(p.name for p in self.root.iterdir()
                      if p.is_dir() and not p.name.startswith("."))


def deploy(catalog: Catalog, model_id: str,
           target: Optional[SlicingXapp] = None) -> str:
    """File-based deployment: resolve the published model file and, when a
    live slicing xApp is given, load it there (gated on the validation
    record inside the file)."""
    path = catalog.model_path(model_id)
    if target is not None:
        target.load_model(path)
    return path


def monitor_and_retrain(report: RunReport, run_dir: Optional[str] = None,
                        roll_ms: int = 5000,
                        threshold: float = 0.10) -> list[dict]:
    """Continuous operations: rolling objective-violation rate over the run
    report's windows; a rising edge above the threshold emits one
    RetrainRequested event referencing the offending data slice."""
    events = []
    windows = report.per_window
    if not windows:
        return events
    if len(windows) >= 2:
        window_ms = windows[1]["t_end_ms"] - windows[0]["t_end_ms"]
    else:
        window_ms = max(windows[0]["t_end_ms"], 1)
    span = max(1, roll_ms // max(window_ms, 1))
    above = False
    for i in range(len(windows)):
        chunk = windows[max(0, i - span + 1):i + 1]
        rate = sum(1 for w in chunk if any(w["violated"].values())) / len(chunk)
        if rate > threshold and not above:
            above = True
            events.append({
                "kind": "retrain_requested",
                "at_ms": windows[i]["t_end_ms"],
                "violation_rate": round(rate, 6),
                "data_ref": {
                    "run_dir": run_dir,
                    "scenario": report.scenario,
                    "from_ms": chunk[0]["t_end_ms"] - window_ms,
                    "to_ms": windows[i]["t_end_ms"],
                },
            })
        elif rate <= threshold:
            above = False
    return events


def train_pipeline(train_scenarios: list[Scenario],
                   validate_scenarios: list[Scenario],
                   catalog_dir: str, workdir: str,
                   quant_step: int = DEFAULT_QUANT_STEP) -> tuple[str, ValidationRecord]:
    """collect -> prepare -> train -> validate -> publish, end to end.
    Returns (model_id, validation record); publishing only happens when the
    record passes."""
    if not train_scenarios:
        raise EmptyInput("no training scenarios")
    run_dirs = []
    for scenario in train_scenarios:
        out = Path(workdir) / f"train-{scenario.name}"
        run_scenario(scenario, out_dir=str(out))
        run_dirs.append(str(out))
    dataset = prepare(collect(run_dirs))
    capacity = min(cell.total_prb
                   for node in train_scenarios[0].sim_config.nodes
                   for cell in node.cells)
    objectives = train_scenarios[0].objectives
    model = train(dataset, capacity, objectives, quant_step=quant_step)
    record = validate(model, validate_scenarios or train_scenarios)
    if record.passed:
        Catalog(catalog_dir).publish(model)
    return model.model_id, record
