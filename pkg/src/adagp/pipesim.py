"""Multi-device pipeline schedules: GPipe, DAPPLE (1F1B) and Chimera.

A step is one device's forward time for one micro-batch; a backward costs
``bw_ratio`` steps. Each strategy fixes an operation order per device and
per pipeline direction; :func:`build_schedule` then places every operation
as early as its dependencies and its device allow. Chimera runs two
pipelines in opposite directions over the same devices (half of the
micro-batches each); when both directions have a ready operation, a device
serves the one in which it holds the later stage.

Modes:

* ``baseline``: one batch with forward and backward passes.
* ``puregp``: one batch of forward passes only (predicted gradients, no backward).
* ``transition``: a GP batch followed by a BP batch. The BP batch's forward
  on a stage may start once the GP batch has finished its forward on that
  stage, since that is when the stage's weights carry the predicted update.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

STRATEGIES = ("gpipe", "dapple", "chimera")
MODES = ("baseline", "puregp", "transition")
FW, BW, PRED = "FW", "BW", "PredictorFW"


@dataclass(frozen=True)
class PipelineConfig:
    devices: int = 4
    micro_batches: int = 4
    strategy: str = "gpipe"
    mode: str = "baseline"
    bw_ratio: int = 2
    predictor_alpha: Fraction | None = None  # None: predictor time folded into the step

    def __post_init__(self):
        if self.devices < 1 or self.micro_batches < 1:
            raise ValueError("devices and micro_batches must be >= 1")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not self.bw_ratio > 0:
            raise ValueError("bw_ratio must be > 0")
        if self.strategy == "chimera" and (self.devices % 2 or self.micro_batches % 2):
            raise ValueError("chimera needs an even number of devices and micro-batches")


@dataclass(frozen=True, order=True)
class Event:
    """One operation; the field order makes sorting follow (start, batch, micro, device)."""

    start: object
    batch: int
    micro: int
    device: int
    kind: str
    stage: int
    duration: object
    lane: str = "compute"

    @property
    def end(self):
        return self.start + self.duration


@dataclass
class ScheduleTrace:
    config: PipelineConfig
    events: list
    barriers: list = field(default_factory=list)  # (step, batch) weight-sync points

    def device_events(self, device, lane="compute"):
        return sorted(e for e in self.events if e.device == device and e.lane == lane)


def _pipelines(cfg):
    """Micro-batches per direction; direction 1 maps stage s to device D-1-s."""
    m = cfg.micro_batches
    if cfg.strategy == "chimera":
        return {0: list(range(m // 2)), 1: list(range(m // 2, m))}
    return {0: list(range(m))}


def _device(direction, stage, d):
    return stage if direction == 0 else d - 1 - stage


def _stage_order(strategy, batch, micros, stage, d, backward):
    if not backward:
        return [(FW, batch, mi, stage) for mi in micros]
    if strategy == "gpipe":
        return [(FW, batch, mi, stage) for mi in micros] + [(BW, batch, mi, stage) for mi in reversed(micros)]
    # 1F1B, used by dapple and by each chimera direction
    warm = min(d - 1 - stage, len(micros))
    order = [(FW, batch, mi, stage) for mi in micros[:warm]]
    nxt = warm
    for b in micros:
        if nxt < len(micros):
            order.append((FW, batch, micros[nxt], stage))
            nxt += 1
        order.append((BW, batch, b, stage))
    return order


def _batch_plan(cfg):
    if cfg.mode == "baseline":
        return [True]
    if cfg.mode == "puregp":
        return [False]
    return [False, True]


def build_schedule(cfg: PipelineConfig) -> ScheduleTrace:
    d = cfg.devices
    pipes = _pipelines(cfg)
    queues = {(dev, p): [] for dev in range(d) for p in pipes}
    for batch, backward in enumerate(_batch_plan(cfg)):
        for p, micros in pipes.items():
            for stage in range(d):
                queues[(_device(p, stage, d), p)] += _stage_order(cfg.strategy, batch, micros, stage, d, backward)

    durations = {FW: 1, BW: cfg.bw_ratio}
    done = {}
    free = {dev: 0 for dev in range(d)}
    events = []

    def deps(op):
        kind, batch, mi, stage = op
        if kind == FW:
            return [(FW, batch, mi, stage - 1)] if stage > 0 else []
        return [(BW, batch, mi, stage + 1)] if stage < d - 1 else [(FW, batch, mi, d - 1)]

    def ready_at(op):
        times = [done.get(x) for x in deps(op)]
        return None if any(t is None for t in times) else max(times, default=0)

    remaining = sum(len(q) for q in queues.values())
    t = 0
    while remaining:
        for dev in range(d):
            if free[dev] > t:
                continue
            ready = []
            for p in pipes:
                q = queues[(dev, p)]
                if q and all(done.get(x, t + 1) <= t for x in deps(q[0])):
                    # older batch first; then the direction where this device is a later stage
                    ready.append((q[0][1], -_stage_depth(p, dev, d), p))
            if not ready:
                continue
            p = min(ready)[2]
            kind, batch, mi, stage = queues[(dev, p)].pop(0)
            dur = durations[kind]
            events.append(Event(t, batch, mi, dev, kind, stage, dur))
            done[(kind, batch, mi, stage)] = t + dur
            free[dev] = t + dur
            remaining -= 1
        upcoming = [x for x in list(free.values()) + list(done.values()) if x > t]
        if remaining and not upcoming:
            raise ValueError(f"schedule deadlock for {cfg}")
        t = min(upcoming, default=t)

    if cfg.predictor_alpha:
        a = Fraction(str(cfg.predictor_alpha)) if isinstance(cfg.predictor_alpha, float) \
            else Fraction(cfg.predictor_alpha)
        events += [Event(e.end, e.batch, e.micro, e.device, PRED, e.stage, a, lane="predictor")
                   for e in events if e.kind == FW]

    barriers = []
    for batch, backward in enumerate(_batch_plan(cfg)):
        if backward:
            barriers.append((max(e.end for e in events if e.batch == batch), batch))
    return ScheduleTrace(cfg, sorted(events), barriers)


def _stage_depth(direction, device, d):
    return device if direction == 0 else d - 1 - device


def makespan(trace: ScheduleTrace):
    if not trace.events:
        raise ValueError("empty trace")
    return max(e.end for e in trace.events) - min(e.start for e in trace.events)


def two_batch_transition_steps(cfg: PipelineConfig):
    if cfg.mode != "transition":
        cfg = PipelineConfig(cfg.devices, cfg.micro_batches, cfg.strategy, "transition", cfg.bw_ratio,
                             cfg.predictor_alpha)
    return makespan(build_schedule(cfg))


def sync_count(trace: ScheduleTrace):
    """Weight-synchronisation barriers; only batches with a backward pass have one."""
    return len(trace.barriers)


def stage_device(strategy, direction, stage, devices):
    """Device hosting ``stage`` of the given pipeline direction."""
    if strategy != "chimera" and direction != 0:
        raise ValueError("only chimera has a second direction")
    return _device(direction, stage, devices)


def micro_direction(cfg: PipelineConfig, micro):
    for p, micros in _pipelines(cfg).items():
        if micro in micros:
            return p
    raise ValueError(f"micro-batch {micro} out of range")


def batch_has_backward(cfg: PipelineConfig):
    """Per batch id, whether that batch runs backward passes."""
    return list(_batch_plan(cfg))


MAKESPAN_COLUMNS = ("format_version", "strategy", "mode", "devices", "micro_batches", "bw_ratio",
                    "predictor_alpha", "makespan", "barriers")


def makespan_csv(traces):
    """One row per trace, in the order given."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MAKESPAN_COLUMNS)
    for tr in traces:
        c = tr.config
        w.writerow([1, c.strategy, c.mode, c.devices, c.micro_batches, format_steps(c.bw_ratio),
                    "" if c.predictor_alpha is None else format_steps(c.predictor_alpha),
                    format_steps(makespan(tr)), sync_count(tr)])
    return buf.getvalue()


def closed_form_gpipe(devices, micro_batches, bw_ratio=2):
    return (micro_batches + devices - 1) * (1 + bw_ratio)


# SVG Gantt export ---------------------------------------------------------

_COLOURS = {FW: "#8fb8de", BW: "#f4a261", PRED: "#9bd39b"}
_CELL, _LANE_H, _LEFT, _TOP = 24, 28, 80, 30


def format_steps(x):
    x = Fraction(x)
    return str(x.numerator) if x.denominator == 1 else f"{float(x):.4f}".rstrip("0")


def gantt_svg(trace: ScheduleTrace):
    if not trace.events:
        raise ValueError("cannot draw an empty trace")
    lanes = sorted({(e.device, e.lane != "compute") for e in trace.events})
    lane_row = {lane: i for i, lane in enumerate(lanes)}
    span = makespan(trace)
    t0 = min(e.start for e in trace.events)
    width = _LEFT + int(-(-Fraction(span) * _CELL // 1)) + 20
    height = _TOP + len(lanes) * _LANE_H + 20
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="monospace" font-size="10">',
        f'<title>{trace.config.strategy} {trace.config.mode} D={trace.config.devices} '
        f'M={trace.config.micro_batches} makespan={format_steps(span)}</title>',
    ]
    for step in range(int(Fraction(span)) + 1):
        x = _LEFT + step * _CELL
        out.append(f'<line class="grid" x1="{x}" y1="{_TOP - 5}" x2="{x}" y2="{_TOP + len(lanes) * _LANE_H}" '
                   f'stroke="#ddd"/>')
        out.append(f'<text x="{x}" y="{_TOP - 8}" text-anchor="middle">{step}</text>')
    for (dev, is_pred), row in lane_row.items():
        y = _TOP + row * _LANE_H
        label = f"dev {dev}" + (" pred" if is_pred else "")
        out.append(f'<text class="lane" x="4" y="{y + _LANE_H // 2 + 3}">{label}</text>')
    for e in trace.events:
        row = lane_row[(e.device, e.lane != "compute")]
        x = _LEFT + float(Fraction(e.start - t0) * _CELL)
        w = float(Fraction(e.duration) * _CELL)
        y = _TOP + row * _LANE_H + 2
        label = f"{'F' if e.kind == FW else 'B' if e.kind == BW else 'P'}{e.micro}"
        out.append(f'<rect class="event" x="{x:.2f}" y="{y}" width="{w:.2f}" height="{_LANE_H - 4}" '
                   f'fill="{_COLOURS[e.kind]}" stroke="#333" '
                   f'data-batch="{e.batch}" data-kind="{e.kind}"/>')
        out.append(f'<text x="{x + w / 2:.2f}" y="{y + _LANE_H // 2 + 1}" text-anchor="middle">'
                   f'{label if e.batch == 0 else label.lower()}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def export_gantt(trace: ScheduleTrace, path):
    svg = gantt_svg(trace)
    p = Path(path)
    try:
        p.write_text(svg)
    except OSError as err:
        raise OSError(f"cannot write Gantt chart to {p}: {err}") from err
    return p


def trace_to_dict(trace: ScheduleTrace):
    return {
        "format_version": 1,
        "config": {
            "devices": trace.config.devices, "micro_batches": trace.config.micro_batches,
            "strategy": trace.config.strategy, "mode": trace.config.mode, "bw_ratio": trace.config.bw_ratio,
            "predictor_alpha": None if trace.config.predictor_alpha is None else format_steps(trace.config.predictor_alpha),
        },
        "makespan": format_steps(makespan(trace)),
        "barriers": [{"step": format_steps(s), "batch": b} for s, b in trace.barriers],
        "events": [
            {"device": e.device, "start": format_steps(e.start), "duration": format_steps(e.duration), "kind": e.kind,
             "batch": e.batch, "micro": e.micro, "stage": e.stage, "lane": e.lane}
            for e in trace.events
        ],
    }
