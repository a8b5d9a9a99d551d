"""Line-delimited JSON episode traces and deterministic replay.

A trace holds one ``header`` record (format version, seed, environment
settings, robot, and the environment RNG state before reset), one ``step``
record per control step and a closing ``end`` record.  Floats are written
with ``repr`` precision so a replay can compare states exactly.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import IO

import numpy as np

from .env import EnvConfig, PerturbationEvent, PushRecoveryEnv, env_config_from_sections
from .model import build_model, model_to_spec

TRACE_VERSION = 1


class TraceError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class TraceRecorder:
    """Attach to ``env.recorder``; each reset starts a new trace in ``stream``."""

    def __init__(self, stream: IO[str], seed: int | None = None):
        self.stream = stream
        self.seed = seed
        self.open = False
        self.steps = 0

    def on_reset(self, env: PushRecoveryEnv, seed) -> None:
        if self.open:
            self.close(env, interrupted=True)
        header = {
            "type": "header",
            "version": TRACE_VERSION,
            "seed": self.seed if seed is None else _plain(seed),
            "rng": env.reset_rng_state,
            "randomize": env.randomize,
            "env": EnvConfig(env.cfg, env.reward_spec, env.norm).to_sections(),
            "model": model_to_spec(env.nominal),
            "scripted": [asdict(e) for e in env.scripted],
            "q": env.state.q.tolist(),
            "nu": env.state.nu.tolist(),
        }
        self._write(header)
        self.open = True
        self.steps = 0

    def on_step(self, env: PushRecoveryEnv, action, info) -> None:
        self.steps += 1
        self._write({
            "type": "step",
            "k": self.steps,
            "t": env.state.sim_time,
            "q": env.state.q.tolist(),
            "nu": env.state.nu.tolist(),
            "action": np.asarray(action, dtype=float).tolist(),
            "reward": info.reward.total,
            "terms": info.reward.contribution,
            "events": [asdict(e) for e in info.events],
            "failure": info.failure,
            "truncated": info.truncated,
        })
        if info.failure or info.truncated:
            self.close(env)

    def close(self, env: PushRecoveryEnv | None = None, interrupted: bool = False) -> None:
        if self.open:
            self._write({"type": "end", "steps": self.steps, "interrupted": interrupted})
            self.open = False

    def _write(self, record: dict) -> None:
        self.stream.write(json.dumps(record, allow_nan=True) + "\n")


def _plain(x):
    return x.tolist() if hasattr(x, "tolist") else x


@dataclass
class Trace:
    header: dict
    steps: list[dict]
    end: dict


def parse_trace(text: str) -> Trace:
    """Parse one trace; errors carry the 1-based line number."""
    lines = text.splitlines()
    header = None
    steps: list[dict] = []
    end = None
    for i, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceError(i, f"malformed record ({exc.msg})") from None
        kind = rec.get("type") if isinstance(rec, dict) else None
        if end is not None:
            raise TraceError(i, "record after end of trace")
        if kind == "header":
            if header is not None:
                raise TraceError(i, "second header")
            if rec.get("version") != TRACE_VERSION:
                raise TraceError(i, f"unsupported trace version {rec.get('version')!r}")
            header = rec
        elif kind == "step":
            if header is None:
                raise TraceError(i, "step before header")
            if rec.get("k") != len(steps) + 1:
                raise TraceError(i, f"expected step {len(steps) + 1}, found {rec.get('k')!r}")
            for key in ("q", "nu", "action", "reward"):
                if key not in rec:
                    raise TraceError(i, f"step record lacks {key!r}")
            steps.append(rec)
        elif kind == "end":
            if header is None:
                raise TraceError(i, "end before header")
            end = rec
        else:
            raise TraceError(i, f"unknown record type {kind!r}")
    if header is None:
        raise TraceError(1, "empty trace")
    if end is None:
        raise TraceError(len(lines) + 1, "trace truncated: no end record")
    return Trace(header, steps, end)


def read_trace(path) -> Trace:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"trace not found: {p}")
    return parse_trace(p.read_text())


def env_from_header(header: dict) -> PushRecoveryEnv:
    model = build_model(header["model"])
    cfg = env_config_from_sections(header["env"])
    return PushRecoveryEnv(model, cfg.episode, cfg.reward, cfg.norm, randomize=header["randomize"])


@dataclass
class VerifyResult:
    steps: int
    mismatches: int
    first_divergent: int | None
    detail: str = ""


def verify_trace(trace: Trace) -> VerifyResult:
    """Re-simulate the recorded actions from the recorded start and compare every step."""
    env = env_from_header(trace.header)
    env.rng.bit_generator.state = trace.header["rng"]
    scripted = [PerturbationEvent(**e) for e in trace.header["scripted"]]
    env.reset(scripted=scripted)
    mismatches = 0
    first = None
    detail = ""
    if env.state.q.tolist() != trace.header["q"] or env.state.nu.tolist() != trace.header["nu"]:
        return VerifyResult(0, 1, 0, "initial state differs")
    for rec in trace.steps:
        if env.done:
            mismatches += 1
            first = rec["k"] if first is None else first
            detail = detail or f"step {rec['k']}: episode already ended in re-simulation"
            break
        _, r, _, info = env.step(np.array(rec["action"]))
        ok = env.state.q.tolist() == rec["q"] and env.state.nu.tolist() == rec["nu"] and r == rec["reward"]
        if not ok:
            mismatches += 1
            if first is None:
                first = rec["k"]
                err = np.max(np.abs(env.state.q - np.array(rec["q"])))
                detail = f"step {rec['k']}: max |q| deviation {err:.3g}, reward {r!r} vs {rec['reward']!r}"
    return VerifyResult(len(trace.steps), mismatches, first, detail)


def format_table(trace: Trace, every: int = 1) -> str:
    """Human-readable per-step summary."""
    rows = [f"{'step':>5} {'t[s]':>7} {'x':>8} {'z':>7} {'pitch':>7} {'reward':>8}  events"]
    for rec in trace.steps[::every]:
        q = rec["q"]
        ev = ", ".join(f"{e['magnitude']:.0f}N@{e['link']}" for e in rec.get("events", []))
        flag = " FAIL" if rec.get("failure") else ""
        rows.append(f"{rec['k']:>5} {rec['t']:>7.3f} {q[0]:>8.4f} {q[1]:>7.4f} {q[2]:>7.4f} {rec['reward']:>8.3f}  {ev}{flag}")
    rows.append(f"{len(trace.steps)} steps, seed {trace.header.get('seed')}")
    return "\n".join(rows)
