from __future__ import annotations

import json
import statistics

import pytest

from conftest import benchmark_dir
from seevo.bench import (
    DMU_SPT_MEAN,
    DMU_SPT_REFERENCE,
    UPPER_BOUNDS,
    BenchmarkLoadError,
    BenchReport,
    DynamicGenParams,
    StaticGenParams,
    generate_dynamic_case,
    generate_dynamic_sidecar,
    generate_static_case,
    instance_from_sidecar,
    load_benchmark_set,
    run_baselines,
)
from seevo.core import Instance
from seevo.rulelang import parse_rule


def test_static_generator():
    a = generate_static_case(StaticGenParams(seed=4))
    assert a == generate_static_case(StaticGenParams(seed=4))
    assert 20 <= a.job_count <= 100 and 10 <= a.machine_count <= 20
    assert all(50 <= op.processing_time <= 100 for op in a.operations())
    for route in a.jobs:
        assert sorted(op.machine_id for op in route) == list(range(a.machine_count))
    assert a.is_static


def test_dynamic_generator_windows():
    seen_batches = set()
    for seed in range(200):
        doc = generate_dynamic_sidecar(DynamicGenParams(seed=seed))
        arrivals = [b["arrival"] for b in doc["batches"]]
        seen_batches.add(len(arrivals))
        assert arrivals[0] == 0 and 1 <= arrivals[1] <= 500
        if len(arrivals) == 3:
            assert 501 <= arrivals[2] <= 1000
        inst = instance_from_sidecar(doc)
        assert 40 <= inst.job_count <= 150 and inst.machine_count == 10
        assert set(inst.arrival_times) == set(arrivals)
        assert "time 0" in doc["first_batch_policy"]
    assert seen_batches == {2, 3}


def test_dynamic_batch_statistics():
    sizes, counts = [], set()
    for seed in range(1000):
        doc = generate_dynamic_sidecar(DynamicGenParams(seed=seed))
        counts.add(len(doc["batches"]))
        sizes.extend(len(b["jobs"]) for b in doc["batches"])
    assert counts <= {2, 3}
    assert 33 <= statistics.mean(sizes) <= 37


def test_dynamic_sidecar_is_json_round_trippable():
    doc = generate_dynamic_sidecar(DynamicGenParams(seed=3))
    assert instance_from_sidecar(json.loads(json.dumps(doc)), "d") == generate_dynamic_case(DynamicGenParams(seed=3), "d")


def test_generator_params_validated():
    with pytest.raises(ValueError):
        StaticGenParams(job_count_range=(5, 2))
    with pytest.raises(ValueError):
        DynamicGenParams(arrival_window_1=(1, 600), arrival_window_2=(501, 1000))


def test_gap_definition():
    inst = Instance.from_routes([[(0, 3), (1, 2)], [(1, 4), (0, 1)]], name="c")
    report = BenchReport(["c"], ["a", "b"], {("c", "a"): 6, ("c", "b"): 9})
    assert report.gap("c", "a") == 0 and report.gap("c", "b") == 0.5
    single = run_baselines([inst], ["SPT"])
    assert single.gap("c", "SPT") == 0


def test_failed_cells_are_excluded():
    inst = Instance.from_routes([[(0, 3)], [(0, 5)]], name="c")
    report = run_baselines([inst], {"ok": parse_rule("-PT"), "boom": parse_rule("exp(exp(exp(PT)))")})
    assert report.makespans[("c", "boom")] is None and report.failed
    assert report.best("c") == 8 and report.gap("c", "ok") == 0


def test_report_exports(tmp_path):
    insts = [generate_dynamic_case(DynamicGenParams(seed=s)) for s in range(3)]
    report = run_baselines(insts, ["SPT", "LPT", "SRM"])
    csv_path, plot_path = report.export(tmp_path)
    rows = csv_path.read_text().splitlines()
    assert rows[0] == "case,method,makespan,best,gap" and len(rows) == 1 + 9
    plot = json.loads(plot_path.read_text())
    assert set(plot["gaps"]) == {"SPT", "LPT", "SRM"} and len(plot["gaps"]["SPT"]) == 3
    assert "mean" in report.table()


def test_published_reference_values():
    assert UPPER_BOUNDS["ta01"] == 1231 and UPPER_BOUNDS["dmu03"] == 2731 and len(UPPER_BOUNDS) == 32
    assert abs(sum(DMU_SPT_REFERENCE.values()) / 16 - DMU_SPT_MEAN) < 0.0051


def test_load_benchmark_set(tmp_path):
    (tmp_path / "b.txt").write_text("1 1\n0 5\n")
    (tmp_path / "a.txt").write_text("2 2\n0 3 1 2\n1 4 0 1\n")
    names = [inst.name for inst in load_benchmark_set(tmp_path)]
    assert names == ["a", "b"]
    assert [i.name for i in load_benchmark_set(tmp_path, "b")] == ["b"]
    (tmp_path / "c.txt").write_text("2 2\n0 3 9 2\n1 4 0 1\n")
    (tmp_path / "d.txt").write_text("oops\n")
    with pytest.raises(BenchmarkLoadError) as info:
        load_benchmark_set(tmp_path)
    assert set(info.value.failures) == {"c.txt", "d.txt"}


def test_empty_directory_warns(tmp_path):
    with pytest.warns(UserWarning):
        assert load_benchmark_set(tmp_path) == []


@pytest.mark.skipif(not (benchmark_dir() / "ta01.txt").exists(), reason="benchmark files not present")
def test_published_sizes():
    sizes = {inst.name: (inst.job_count, inst.machine_count) for inst in load_benchmark_set(benchmark_dir())}
    assert sizes["ta01"] == (15, 15)
    if "dmu08" in sizes:
        assert sizes["dmu08"] == (20, 20)
