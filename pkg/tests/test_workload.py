import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from servesim.workload import (
    Dist,
    WorkloadError,
    WorkloadSpec,
    first_rounds,
    generate,
    load_trace,
    substream,
)


def _stream(reqs):
    return [(r.id, r.arrival_time, r.prompt_len, r.output_len, r.round_index) for r in reqs]


def test_same_seed_same_stream():
    spec = WorkloadSpec(qps=2.0, num_requests=1000, prompt_len=Dist("poisson", mean=200))
    assert _stream(generate(spec, 7)) == _stream(generate(spec, 7))
    assert _stream(generate(spec, 7)) != _stream(generate(spec, 8))


def test_mean_interarrival_matches_rate():
    reqs = generate(WorkloadSpec(qps=2.0, num_requests=50_000), 0)
    t = np.array([r.arrival_time for r in reqs], dtype=np.int64)
    mean_gap = np.diff(np.concatenate([[0], t])).mean() / 1e9
    assert 0.45 <= mean_gap <= 0.55


def test_chat_mix_is_half_single_round():
    reqs = generate(WorkloadSpec(num_requests=10_000, rounds=Dist("chat-mix")), 3)
    rounds = {}
    for r in reqs:
        rounds[r.conversation_id] = max(rounds.get(r.conversation_id, 0), r.round_index + 1)
    multi = sum(1 for n in rounds.values() if n >= 2) / len(rounds)
    assert 0.45 <= multi <= 0.55
    assert max(rounds.values()) <= 7


def test_substreams_are_independent():
    # changing the output distribution must not move arrivals or prompts
    a = WorkloadSpec(num_requests=200, prompt_len=Dist("uniform", lo=1, hi=99))
    b = WorkloadSpec(num_requests=200, prompt_len=Dist("uniform", lo=1, hi=99),
                     output_len=Dist("poisson", mean=40))
    ra, rb = generate(a, 1), generate(b, 1)
    assert [r.arrival_time for r in ra] == [r.arrival_time for r in rb]
    assert [r.prompt_len for r in ra] == [r.prompt_len for r in rb]
    assert substream(1, 0).random() != substream(1, 1).random()


def test_follow_up_rounds_carry_context():
    spec = WorkloadSpec(num_requests=50, rounds=Dist("fixed", value=3),
                        turn_prompt_len=Dist("fixed", value=10))
    reqs = generate(spec, 0)
    assert len(reqs) == 150 and len(first_rounds(reqs)) == 50
    for r in reqs:
        if r.round_index == 0:
            assert r.arrival_time is not None and r.cached_context_len == 0
            continue
        assert r.arrival_time is None and r.think_time >= 1
    for r in reqs:
        nxt = r.next_round
        if nxt is not None:
            ctx = r.prompt_len + r.output_len
            assert nxt.cached_context_len == ctx
            assert nxt.prompt_len == ctx + 10


def test_trace_parse(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("128,256\n64,64")
    assert load_trace(p) == [(128, 256), (64, 64)]
    p.write_text("prompt,output\n5,6\n")
    assert load_trace(p) == [(5, 6)]


@pytest.mark.parametrize(
    "text, where",
    [("", "no records"), ("0,5\n", ":1:"), ("3,4\n7\n", ":2:"), ("3,4\nx,1\n", ":2:")],
)
def test_trace_errors(tmp_path, text, where):
    p = tmp_path / "t.csv"
    p.write_text(text)
    with pytest.raises(WorkloadError, match=where):
        load_trace(p)


def test_trace_replay_keeps_pairs(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("10,1\n20,2\n30,3\n")
    emp = Dist("empirical")
    spec = WorkloadSpec(source="trace", trace_path=str(p), num_requests=40,
                        prompt_len=emp, output_len=emp)
    reqs = generate(spec, 0)
    assert all(r.prompt_len == 10 * r.output_len for r in reqs)
    spec.trace_sampling = "sequential"
    assert [r.prompt_len for r in generate(spec, 0)[:4]] == [10, 20, 30, 10]


@pytest.mark.parametrize(
    "spec",
    [
        WorkloadSpec(qps=0),
        WorkloadSpec(num_requests=0),
        WorkloadSpec(prompt_len=Dist("uniform", lo=5, hi=2)),
        WorkloadSpec(prompt_len=Dist("empirical")),
        WorkloadSpec(output_len=Dist("chat-mix")),
        WorkloadSpec(source="trace"),
    ],
)
def test_invalid_specs(spec):
    with pytest.raises(WorkloadError):
        spec.validate()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 300), st.floats(0.1, 50))
def test_stream_shape(seed, n, qps):
    reqs = generate(WorkloadSpec(qps=qps, num_requests=n,
                                 prompt_len=Dist("poisson", mean=30),
                                 output_len=Dist("uniform", lo=1, hi=9)), seed)
    arrivals = [r.arrival_time for r in reqs]
    assert len(reqs) == n
    assert arrivals == sorted(arrivals) and arrivals[0] >= 0
    assert [r.id for r in reqs] == list(range(n))
    assert all(r.prompt_len >= 1 and 1 <= r.output_len <= 9 for r in reqs)
