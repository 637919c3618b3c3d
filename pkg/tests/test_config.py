import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from servesim import metrics
from servesim.config import (
    ConfigError,
    RunConfig,
    dumps,
    load,
    loads,
    simulate,
    with_overrides,
)
from servesim.scenarios import SCENARIOS, scenario
from servesim.sweep import Axis, SweepSpec, load_sweep, run_sweep

MINIMAL = """
workload:
  num_requests: 10
  qps: 4.0
  prompt_len: {kind: uniform, lo: 8, hi: 64}
  output_len: {kind: uniform, lo: 2, hi: 16}
"""


def test_minimal_config_fills_defaults():
    cfg = loads(MINIMAL)
    assert cfg.model.name == "llama2-7b"
    assert cfg.hardware[0].hardware == "a100"
    assert cfg.workload.num_requests == 10
    assert cfg.slo == metrics.SloSpec(15.0, 0.3)


def test_round_trip():
    cfg = loads(MINIMAL)
    assert loads(dumps(cfg)) == cfg
    assert dumps(loads(dumps(cfg))) == dumps(cfg)


@pytest.mark.parametrize("name", sorted(SCENARIOS))
def test_presets_round_trip_and_validate(name):
    preset = scenario(name)
    base = preset.base if isinstance(preset, SweepSpec) else preset
    assert loads(dumps(base)) == base
    if isinstance(preset, SweepSpec):
        assert len(preset.configs()) == len(preset.points()) >= 2


def test_scientific_notation_is_a_float():
    cfg = loads("hardware:\n- hardware: a100\n  overrides: {mem_capacity: 1e11}\n")
    assert cfg.hardware[0].overrides["mem_capacity"] == 1e11


@pytest.mark.parametrize(
    "text, needle",
    [
        ("workload:\n  qpss: 3\n", "workload.qpss"),
        ("scheduler:\n  local_policy: fifo\n", "scheduler.local_policy"),
        ("workload:\n  qps: fast\n", "workload.qps"),
        ("hardware:\n- hardware: a100\n  overrides: {mem_capacity: 5.0e9}\n", "lower than the model weight bytes"),
        ("links:\n- {src: w0, dst: w7, bandwidth: 1.0e9}\n", "links[0].dst"),
        ("hardware:\n- {hardware: a100, role: prefill}\n", "role 'prefill'"),
        ("memory:\n  max_mem_ratio: 1.5\n", "memory.max_mem_ratio"),
        ("model:\n  name: gpt-99\n", "gpt-99"),
    ],
)
def test_validation_errors_name_the_path(text, needle):
    with pytest.raises(ConfigError) as e:
        loads(text)
    assert needle in str(e.value)


def test_disaggregated_needs_both_roles():
    text = "scheduler: {local_policy: disaggregated}\nhardware:\n- {hardware: a100, role: prefill}\n"
    with pytest.raises(ConfigError, match="both prefill and decode"):
        loads(text)


def test_overrides_and_paths():
    cfg = loads(MINIMAL)
    new = with_overrides(cfg, {"workload.qps": 9.0, "hardware.0.overrides.peak_flops": 1e14})
    assert new.workload.qps == 9.0 and new.hardware[0].overrides == {"peak_flops": 1e14}
    assert cfg.workload.qps == 4.0  # original untouched
    with pytest.raises(ConfigError, match="does not resolve"):
        with_overrides(cfg, {"workload.qpz": 1.0})
    with pytest.raises(ConfigError, match="no such list element"):
        with_overrides(cfg, {"hardware.3.count": 1})


def test_load_reports_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load(tmp_path / "nope.yaml")


def test_same_seed_same_summary():
    cfg = loads(MINIMAL)
    a = metrics.summary(simulate(cfg))
    b = metrics.summary(simulate(cfg))
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_one_point_sweep_equals_run(tmp_path):
    cfg = loads(MINIMAL)
    spec = SweepSpec(cfg, [Axis([4.0], path="workload.qps")], "one")
    run_sweep(spec, tmp_path / "sweep")
    metrics.export(simulate(cfg), tmp_path / "run", cfg.slo)
    for name in ("requests.csv", "footprint.csv", "cdf.csv", "summary.json"):
        assert (tmp_path / "sweep" / "000" / name).read_bytes() == (tmp_path / "run" / name).read_bytes()


def test_sweep_results_do_not_depend_on_parallelism(tmp_path):
    spec = SweepSpec(loads(MINIMAL), [Axis([2.0, 4.0, 8.0], path="workload.qps")], "par")
    one = run_sweep(spec, tmp_path / "p1", parallel=1)
    two = run_sweep(spec, tmp_path / "p2", parallel=2)
    assert one == two
    for i in range(3):
        for name in ("requests.csv", "summary.json"):
            a = (tmp_path / "p1" / f"{i:03d}" / name).read_bytes()
            assert a == (tmp_path / "p2" / f"{i:03d}" / name).read_bytes()


def test_joint_axis_makes_seven_pd_points():
    spec = scenario("pd-ratio")
    pts = spec.points()
    assert len(pts) == 7
    assert [p["hardware.0.count"] + p["hardware.1.count"] for p in pts] == [8] * 7


def test_sweep_file_with_relative_base(tmp_path):
    (tmp_path / "base.yaml").write_text(MINIMAL)
    (tmp_path / "sweep.yaml").write_text(
        "name: demo\nbase: base.yaml\naxes:\n"
        "- {path: workload.qps, values: [1.0, 2.0]}\n"
        "- {paths: [scheduler.local_policy, scheduler.max_batch_size], values: [[static, 4], [continuous, inf]]}\n"
    )
    spec = load_sweep(tmp_path / "sweep.yaml")
    assert len(spec.points()) == 4
    with pytest.raises(ConfigError):
        (tmp_path / "bad.yaml").write_text("base: base.yaml\naxes:\n- {path: workload.nope, values: [1]}\n")
        load_sweep(tmp_path / "bad.yaml")


def test_failed_point_is_recorded(tmp_path):
    # a point whose trace file is missing fails at run time; the others finish
    cfg = loads(MINIMAL)
    spec = SweepSpec(cfg, [Axis(["synthetic", "trace"], path="workload.source")], "mixed")
    spec.base.workload.trace_path = str(tmp_path / "missing.csv")
    index = run_sweep(spec, tmp_path / "out")
    status = [p["status"] for p in index["points"]]
    assert status == ["ok", "error"]
    assert "missing.csv" in index["points"][1]["error"]


@settings(max_examples=40, deadline=None)
@given(
    qps=st.floats(0.1, 100, allow_nan=False),
    n=st.integers(1, 10_000),
    seed=st.integers(0, 2**31),
    ratio=st.floats(0.05, 1.0),
    batch=st.one_of(st.just("inf"), st.integers(1, 512)),
)
def test_round_trip_property(qps, n, seed, ratio, batch):
    cfg = RunConfig(seed=seed)
    cfg.workload.qps = qps
    cfg.workload.num_requests = n
    cfg.memory.max_mem_ratio = ratio
    cfg.scheduler.max_batch_size = batch
    assert loads(dumps(cfg)) == cfg
