import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from servesim.costmodel import (
    COMPUTE_BOUND,
    MEMORY_BOUND,
    Aggregates,
    BatchPlan,
    CostModelError,
    HardwareSpec,
    RooflineCostModel,
    aggregate,
    builtin_hardware,
    iteration_time,
    make_cost_model,
    phase_classification,
    plan_from,
)
from servesim.model import ModelSpec, builtin, weight_bytes

LLAMA = builtin("llama2-7b")
A100_IDEAL = builtin_hardware("a100", efficiency_flops=1.0, efficiency_bw=1.0)


def _toy():
    # 1 layer, h=2 (1 head of width 2), ffn 3, vocab 5, fp16, plain MLP
    return ModelSpec("toy", num_layers=1, hidden_dim=2, num_heads=1, head_dim=2,
                     ffn_dim=3, vocab_size=5)


def _unit_hw(**kw):
    base = dict(name="unit", peak_flops=1e6, mem_bandwidth=1e6, mem_capacity=1e9,
                efficiency_flops=1.0, efficiency_bw=1.0, iteration_overhead_ns=0)
    return HardwareSpec(**{**base, **kw})


def test_single_token_prefill_by_hand():
    # FLOPs per operator: QKV 2*2*6=24, attention 4*2*1=8, out-proj 8,
    # MLP up 12, MLP down 12, LM head 20; bytes equal FLOPs here, and both
    # rates are 1e6/s, so every operator takes its count in microseconds.
    plan = plan_from(prefill=[(0, 1)])
    assert iteration_time(plan, _toy(), _unit_hw()) == 84_000


def test_decode_with_context_by_hand():
    # context 10: attention reads K/V of 10 cached tokens and writes 1,
    # scoring 11 pairs -> 88 FLOPs and 2*4*11 = 88 bytes
    plan = plan_from(decode=[(0, 10)])
    assert iteration_time(plan, _toy(), _unit_hw()) == 164_000


def test_overhead_is_added_once():
    plan = plan_from(prefill=[(0, 1)])
    assert iteration_time(plan, _toy(), _unit_hw(iteration_overhead_ns=7)) == 84_007


def test_single_decode_is_weight_streaming():
    cm = RooflineCostModel(LLAMA, A100_IDEAL)
    plan = plan_from(decode=[(0, 16)])
    ns = cm.compute_ns(aggregate(plan))
    stream_ns = weight_bytes(LLAMA) / 2.039e12 * 1e9
    assert abs(stream_ns - 6.6e6) / 6.6e6 < 0.03
    assert stream_ns <= ns <= 1.01 * stream_ns


def test_phase_classification():
    assert phase_classification(plan_from(prefill=[(0, 2048)]), LLAMA, A100_IDEAL) == COMPUTE_BOUND
    assert phase_classification(plan_from(decode=[(0, 100)]), LLAMA, A100_IDEAL) == MEMORY_BOUND
    with pytest.raises(CostModelError):
        phase_classification(BatchPlan(), LLAMA, A100_IDEAL)


def test_bad_plans():
    with pytest.raises(CostModelError):
        iteration_time(BatchPlan(), LLAMA, A100_IDEAL)
    with pytest.raises(CostModelError):
        plan_from(prefill=[(1, 4)], decode=[(1, 3)])
    with pytest.raises(CostModelError):
        plan_from(prefill=[(1, 0)])


def test_unknown_cost_model_and_hardware():
    with pytest.raises(CostModelError):
        make_cost_model("cycle-accurate", LLAMA, A100_IDEAL)
    with pytest.raises(CostModelError):
        builtin_hardware("h900")
    with pytest.raises(CostModelError):
        builtin_hardware("a100", efficiency_bw=1.5)


def test_aggregates_of_mixed_plan():
    plan = plan_from(prefill=[(0, 4, 3), (1, 2, 0, False)], decode=[(2, 7)])
    # prefill 4 after 3 cached: 4*3 + 10 pairs; prefill 2: 3 pairs; decode: 8
    assert aggregate(plan) == Aggregates(4 + 2 + 1, 2, 22 + 3 + 8, 3 + 7)


def test_operator_offsets_end_at_iteration_time():
    cm = RooflineCostModel(LLAMA, A100_IDEAL)
    agg = aggregate(plan_from(prefill=[(0, 100)], decode=[(1, 50)]))
    offs = cm.operator_offsets(agg)
    assert offs == sorted(offs)
    assert offs[-1] == cm.iteration_ns(agg)


_entries = st.lists(
    st.one_of(
        st.tuples(st.just("p"), st.integers(1, 3000), st.integers(0, 3000), st.booleans()),
        st.tuples(st.just("d"), st.integers(1, 8000)),
    ),
    min_size=1,
    max_size=12,
)


def _plan(entries):
    pre = [(i, e[1], e[2], e[3]) for i, e in enumerate(entries) if e[0] == "p"]
    dec = [(i, e[1]) for i, e in enumerate(entries) if e[0] == "d"]
    return plan_from(pre, dec)


@pytest.mark.parametrize("hw", ["a100", "v100", "gddr6-aim"])
@settings(max_examples=150, deadline=None)
@given(entries=_entries)
def test_fast_path_matches_table(hw, entries):
    cm = RooflineCostModel(builtin("opt-13b"), builtin_hardware(hw))
    agg = aggregate(_plan(entries))
    slow = cm._round(sum(t for t, _ in cm._terms(agg)))
    assert cm.compute_ns(agg) == slow


@settings(max_examples=150, deadline=None)
@given(entries=_entries, extra=st.integers(1, 500))
def test_more_work_never_takes_less_time(entries, extra):
    cm = RooflineCostModel(LLAMA, builtin_hardware("a100"))
    base = _plan(entries)
    longer = _plan([("d", extra)] + entries)
    assert cm.iteration_time(longer) >= cm.iteration_time(base)


@settings(max_examples=100, deadline=None)
@given(entries=_entries)
def test_roofline_envelope(entries):
    # the sum of per-operator maxima lies between the pure compute and pure
    # memory times and their sum
    cm = RooflineCostModel(LLAMA, A100_IDEAL)
    plan = _plan(entries)
    flops, nbytes = cm.totals(plan)
    t_c = flops / (312e12) * 1e9
    t_m = nbytes / (2.039e12) * 1e9
    ns = cm.compute_ns(aggregate(plan))
    assert max(t_c, t_m) - 1 <= ns <= t_c + t_m + 1
