"""Legality checks for pipeline traces, written independently of the builder.

The checker only reads the trace and its config. It recomputes which
operations must exist and where they must run, then verifies device
exclusivity and data dependencies from the event times alone.
"""
from __future__ import annotations

from collections import Counter

from .pipesim import BW, FW, PRED, PipelineConfig, ScheduleTrace


class IllegalTrace(ValueError):
    pass


def _expected_ops(cfg: PipelineConfig):
    d, m = cfg.devices, cfg.micro_batches
    n_batches = 2 if cfg.mode == "transition" else 1
    ops = set()
    for batch in range(n_batches):
        backward = cfg.mode == "baseline" or (cfg.mode == "transition" and batch == 1)
        for mi in range(m):
            for s in range(d):
                ops.add((FW, batch, mi, s))
                if backward:
                    ops.add((BW, batch, mi, s))
    return ops


def _host(cfg: PipelineConfig, micro, stage):
    d = cfg.devices
    if cfg.strategy == "chimera" and micro >= cfg.micro_batches // 2:
        return d - 1 - stage
    return stage


def violations(trace: ScheduleTrace):
    """List of human-readable problems; empty when the trace is legal."""
    cfg = trace.config
    problems = []
    compute = [e for e in trace.events if e.lane == "compute"]
    seen = Counter((e.kind, e.batch, e.micro, e.stage) for e in compute)
    dupes = [op for op, n in seen.items() if n > 1]
    if dupes:
        problems.append(f"duplicated operations {sorted(dupes)[:3]}")
    expected = _expected_ops(cfg)
    missing = expected - set(seen)
    extra = set(seen) - expected
    if missing:
        problems.append(f"missing operations {sorted(missing)[:3]}")
    if extra:
        problems.append(f"unexpected operations {sorted(extra)[:3]}")

    for e in compute:
        want = 1 if e.kind == FW else cfg.bw_ratio
        if e.duration != want:
            problems.append(f"{e} has duration {e.duration}, expected {want}")
        if e.device != _host(cfg, e.micro, e.stage):
            problems.append(f"{e} runs on the wrong device")
        if e.start < 0:
            problems.append(f"{e} starts before 0")

    # device exclusivity, per lane
    for lane in {e.lane for e in trace.events}:
        for dev in range(cfg.devices):
            evs = sorted((e.start, e.start + e.duration) for e in trace.events
                         if e.device == dev and e.lane == lane)
            for (s0, e0), (s1, _) in zip(evs, evs[1:]):
                if s1 < e0:
                    problems.append(f"device {dev} lane {lane}: overlap at {s1}")

    end = {(e.kind, e.batch, e.micro, e.stage): e.start + e.duration for e in compute}
    start = {(e.kind, e.batch, e.micro, e.stage): e.start for e in compute}
    last = cfg.devices - 1
    for (kind, b, mi, s), t0 in start.items():
        if kind == FW and s > 0:
            prev = end.get((FW, b, mi, s - 1))
            if prev is None or t0 < prev:
                problems.append(f"FW b{b} m{mi} s{s} starts before stage {s - 1} finishes")
        if kind == BW:
            prev = end.get((BW, b, mi, s + 1)) if s < last else end.get((FW, b, mi, last))
            if prev is None or t0 < prev:
                problems.append(f"BW b{b} m{mi} s{s} starts before its upstream finishes")

    if cfg.mode == "transition":
        # batch 1 may not touch a stage's weights on a device before batch 0 is done with them
        for (kind, b, mi, s), t0 in start.items():
            if b != 1:
                continue
            dev = _host(cfg, mi, s)
            for (k0, b0, m0, s0), t_end in end.items():
                if b0 == 0 and s0 == s and _host(cfg, m0, s0) == dev and t0 < t_end:
                    problems.append(f"batch 1 {kind} m{mi} s{s} overtakes batch 0 m{m0}")

    for e in trace.events:
        if e.kind == PRED:
            fw_end = end.get((FW, e.batch, e.micro, e.stage))
            if fw_end is None or e.start < fw_end:
                problems.append(f"predictor event {e} precedes its forward pass")

    backward_batches = sorted({b for (k, b, _, _) in expected if k == BW})
    if [b for _, b in trace.barriers] != backward_batches:
        problems.append(f"barriers {trace.barriers} do not match backward batches {backward_batches}")
    for t, b in trace.barriers:
        if any(e.start + e.duration > t for e in compute if e.batch == b):
            problems.append(f"barrier for batch {b} at {t} precedes some of its work")
    return problems


def check_trace(trace: ScheduleTrace):
    """Raise :class:`IllegalTrace` listing every problem, else return True."""
    problems = violations(trace)
    if problems:
        raise IllegalTrace("; ".join(problems))
    return True
