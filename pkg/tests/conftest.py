import pytest

from servesim import metrics
from servesim.config import dumps, simulate
from servesim.workload import FINISHED

# one line per acceptance criterion, printed again in the terminal summary
VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS):
            terminalreporter.write_line(line)


def kv_transfer_violations(report) -> list[str]:
    """Check prefill->decode hand-offs from the event log alone.

    Every finished request with a decode phase needs exactly one KV transfer
    of prompt_len * kv_bytes_per_token bytes into the worker that decodes
    it, ending no later than its first decode iteration starts; all of its
    decode iterations happen on that worker.
    """
    roles = {w["id"]: w["role"] for w in report.workers}
    transfers, decode_start, finish_worker = {}, {}, {}
    for t, kind, rid, wid, peer, nbytes, end in report.events:
        if kind == "kv_transfer":
            transfers.setdefault(rid, []).append((wid, peer, nbytes, end))
        elif kind == "decode_start":
            decode_start.setdefault(rid, []).append((t, wid))
        elif kind == "finish":
            finish_worker[rid] = wid
    bad = []
    for r in report.requests:
        if r.state != FINISHED:
            continue
        xs = transfers.get(r.id, [])
        if r.output_len == 1:
            if xs:
                bad.append(f"request {r.id}: single-token request moved its KV")
            continue
        if len(xs) != 1:
            bad.append(f"request {r.id}: {len(xs)} KV transfers")
            continue
        dst, src, nbytes, end = xs[0]
        if roles[src] != "prefill" or roles[dst] != "decode":
            bad.append(f"request {r.id}: transfer w{src}->w{dst} is not prefill->decode")
        if nbytes != r.prompt_len * report.kv_bytes_per_token:
            bad.append(f"request {r.id}: moved {nbytes} bytes")
        starts = decode_start.get(r.id, [])
        if len(starts) != 1 or starts[0][1] != dst:
            bad.append(f"request {r.id}: decode did not start exactly once on w{dst}")
        elif end > starts[0][0]:
            bad.append(f"request {r.id}: transfer ends after the first decode iteration starts")
        if finish_worker.get(r.id) != dst:
            bad.append(f"request {r.id}: finished on w{finish_worker.get(r.id)}, not w{dst}")
    return bad


class RunCache:
    """Memoizes derived results of simulations by serialized config.

    Full reports are not kept: footprint series of a large sweep would not
    fit in memory.
    """

    def __init__(self):
        self.facts = {}

    def run(self, cfg) -> dict:
        key = dumps(cfg)
        if key not in self.facts:
            report = simulate(cfg)
            disagg = any(w["role"] != "unified" for w in report.workers)
            self.facts[key] = {
                "summary": metrics.summary(report, cfg.slo),
                "records": metrics.records(report.requests),
                "kv_violations": kv_transfer_violations(report) if disagg else None,
            }
        return self.facts[key]


@pytest.fixture(scope="session")
def runs():
    return RunCache()
