import csv
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from servesim import metrics
from servesim.config import RunConfig, simulate
from servesim.engine import RunReport
from servesim.metrics import (
    BOTH,
    DECODE_ONLY,
    RequestRecord,
    SloSpec,
    fmt_s,
    goodput,
    percentile,
    time_average,
)
from servesim.workload import FINISHED, REJECTED, Dist

S = 1_000_000_000


def _rec(i, arrival_s, ttft_s, e2e_s, gap_s, state=FINISHED, output_len=10):
    ns = lambda x: None if x is None else round(x * S)  # noqa: E731
    return RequestRecord(
        i, i, 0, state, ns(arrival_s), 16, output_len, output_len, 0, 0, 0, 0,
        first_token=ns(arrival_s + ttft_s) if ttft_s is not None else None,
        finish=ns(arrival_s + e2e_s) if e2e_s is not None else None,
        ttft=ns(ttft_s), e2e=ns(e2e_s), max_inter_token=ns(gap_s),
    )


def test_percentile_nearest_rank():
    assert percentile([1, 2, 3], 50) == 2
    assert {percentile([5], p) for p in (0, 1, 50, 99, 100)} == {5}
    assert percentile(list(range(1, 101)), 99) == 99
    assert percentile([3, 1, 2], 0) == 1
    assert percentile([3, 1, 2], 100) == 3
    with pytest.raises(ValueError):
        percentile([], 50)


@given(st.lists(st.integers(-1000, 1000), min_size=1, max_size=50), st.floats(0, 100))
def test_percentile_is_a_member_and_monotone(xs, p):
    v = percentile(xs, p)
    assert v in xs
    assert v <= percentile(xs, min(100.0, p + 10))


def test_fmt_s():
    assert fmt_s(1_500_000_001) == "1.500000001"
    assert fmt_s(0) == "0.000000000"
    assert fmt_s(None) == ""


def test_ttft_over_slo_is_excluded():
    slo = SloSpec(ttft=15.0, mtpot=0.3)
    late = _rec(0, 0.0, 16.0, 20.0, 0.1)
    assert not late.meets(slo, BOTH)
    assert late.meets(slo, DECODE_ONLY)


def test_goodput_all_compliant():
    # 100 requests, first arrival at 0, last completion at 50 s
    recs = [_rec(i, i * 0.4, 0.5, 10.0 if i < 99 else 50.0 - 99 * 0.4, 0.1) for i in range(100)]
    assert goodput(recs) == pytest.approx(2.0)


def test_single_long_pause_fails_mtpot():
    # 0.4 s worst gap, mean gap well under 0.3 s
    rec = _rec(0, 0.0, 0.1, 1.5, 0.4, output_len=10)
    assert (rec.e2e - rec.ttft) / (rec.output_len - 1) < 0.3 * S
    assert not rec.meets(SloSpec(), BOTH)
    assert not rec.meets(SloSpec(), DECODE_ONLY)


def test_unfinished_and_rejected_never_count():
    recs = [_rec(0, 0.0, 0.1, 1.0, 0.01),
            _rec(1, 0.5, None, None, None, state=REJECTED)]
    assert goodput(recs) == pytest.approx(1.0)
    assert metrics.throughput(recs) == pytest.approx(1.0)


def test_normalized_latency_divides_by_output_tokens():
    assert _rec(0, 0.0, 0.1, 2.0, 0.1, output_len=4).normalized_latency == pytest.approx(0.5)


def test_time_average_step_function():
    samples = [(10, 1.0), (20, 0.0), (30, 0.5)]
    # [0,10) -> 0, [10,20) -> 1, [20,30) -> 0, [30,40] -> 0.5
    assert time_average(samples, 0, 40) == pytest.approx((10 + 5) / 40)
    assert time_average(samples, 15, 25) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        time_average(samples, 5, 5)


def test_empty_run_exports_zero_counts(tmp_path):
    report = RunReport([], [], [], [], 0, 4, 16)
    s = metrics.export(report, tmp_path)
    assert (s["requests"], s["finished"], s["throughput_rps"], s["goodput_both_rps"]) == (0, 0, 0.0, 0.0)
    assert s["e2e_s"]["p99"] is None
    for name in ("requests.csv", "footprint.csv", "cdf.csv", "summary.json"):
        assert (tmp_path / name).exists()


def _small():
    c = RunConfig()
    c.workload.num_requests = 40
    c.workload.qps = 5.0
    c.workload.prompt_len = Dist("uniform", lo=16, hi=256)
    c.workload.output_len = Dist("uniform", lo=4, hi=64)
    return c


def test_export_files_are_byte_stable(tmp_path):
    cfg = _small()
    metrics.export(simulate(cfg), tmp_path / "a", events=True)
    metrics.export(simulate(cfg), tmp_path / "b", events=True)
    for name in ("requests.csv", "footprint.csv", "cdf.csv", "events.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cdf_and_request_columns(tmp_path):
    metrics.export(simulate(_small()), tmp_path)
    with (tmp_path / "cdf.csv").open() as f:
        rows = list(csv.DictReader(f))
    fr = [float(r["cumulative_fraction"]) for r in rows]
    lat = [float(r["e2e_s"]) for r in rows]
    assert fr == sorted(fr) and fr[-1] == 1.0
    assert lat == sorted(lat)
    with (tmp_path / "requests.csv").open() as f:
        reader = csv.DictReader(f)
        assert tuple(reader.fieldnames) == metrics.REQUEST_COLUMNS
        assert len(list(reader)) == 40
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["slo"] == {"ttft": 15.0, "mtpot": 0.3}


def test_counts_add_up_at_horizon():
    cfg = _small()
    cfg.workload.num_requests = 200
    cfg.workload.qps = 50.0
    cfg.horizon = 2.0
    s = metrics.summary(simulate(cfg))
    assert s["unfinished"] > 0
    assert s["finished"] + s["rejected"] + s["unfinished"] == s["requests"] == 200
