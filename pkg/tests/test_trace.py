import io
import json

import numpy as np
import pytest

from pushrec.env import EpisodeConfig, PushRecoveryEnv
from pushrec.model import build_model
from pushrec.trace import TraceError, TraceRecorder, format_table, parse_trace, verify_trace


@pytest.fixture(scope="module")
def trace_text():
    model = build_model()
    env = PushRecoveryEnv(model, EpisodeConfig(max_duration=1.2, perturb_period=0.3), randomize=True)
    buf = io.StringIO()
    env.recorder = TraceRecorder(buf)
    env.reset(seed=[5, 1])
    rng = np.random.default_rng(0)
    done = False
    while not done:
        _, _, done, _ = env.step(rng.normal(0, 0.5, model.n_joints))
    return buf.getvalue()


def test_clean_trace_verifies(trace_text):
    tr = parse_trace(trace_text)
    assert tr.header["seed"] == [5, 1]
    assert tr.end["steps"] == len(tr.steps)
    res = verify_trace(tr)
    assert res.mismatches == 0 and res.first_divergent is None
    assert res.steps == len(tr.steps)


def test_tampered_step_is_located(trace_text):
    lines = trace_text.splitlines()
    rec = json.loads(lines[5])  # step k = 5
    assert rec["k"] == 5
    rec["action"][0] += 1e-3
    lines[5] = json.dumps(rec)
    res = verify_trace(parse_trace("\n".join(lines)))
    assert res.mismatches > 0
    assert res.first_divergent == 5


def test_truncated_trace_reports_line(trace_text):
    lines = trace_text.splitlines()[:-1]
    with pytest.raises(TraceError, match="truncated") as err:
        parse_trace("\n".join(lines))
    assert err.value.line == len(lines) + 1


def test_malformed_records(trace_text):
    lines = trace_text.splitlines()
    with pytest.raises(TraceError) as err:
        parse_trace("\n".join(lines[:3] + ["{not json"] + lines[3:]))
    assert err.value.line == 4
    with pytest.raises(TraceError, match="expected step"):
        parse_trace("\n".join(lines[:2] + lines[3:]))
    with pytest.raises(TraceError, match="empty"):
        parse_trace("")


def test_table_lists_steps(trace_text):
    tr = parse_trace(trace_text)
    table = format_table(tr, every=2)
    assert len(table.splitlines()) == 2 + len(tr.steps[::2])
