"""Command-line front end: ``adagp {train,timeline,pipeline,energy,report}``.

Every subcommand reads the same optional YAML config (``--config``); flags
override the file. Artifacts go to ``--out`` or the config's output
directory, and identical inputs always produce byte-identical files.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

from . import costmodel, energy, pipesim
from .config import ConfigError, ExperimentConfig, parse_config, resolve_output_dir, with_overrides
from .layers import NonFiniteError, ShapeError, StaleCacheError
from .model import zoo_spec
from .pipecheck import check_trace
from .predictor import PredictorNet
from .trainer import run_experiment, write_outputs

PHASE_NAMES = {"baseline": "Baseline", "bp": "BP", "gp": "GP"}


def _fraction(text):
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def _exact(x):
    """Floats from YAML become the decimal they were written as."""
    return Fraction(str(x)) if isinstance(x, float) else x


def _num(x):
    if isinstance(x, Fraction):
        return int(x) if x.denominator == 1 else float(x)
    return x


def _dump_json(path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _add_common(p):
    p.add_argument("--config", type=Path, help="YAML experiment config")
    p.add_argument("--out", type=Path, help="output directory (overrides the config)")


def build_parser():
    parser = argparse.ArgumentParser(prog="adagp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a zoo model with or without gradient prediction")
    _add_common(t)
    t.add_argument("--model")
    t.add_argument("--dataset")
    t.add_argument("--seed", type=int)
    t.add_argument("--seeds", type=int, nargs="+", help="run several seeds; overrides --seed")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--n-train", type=int)
    t.add_argument("--n-eval", type=int)
    t.add_argument("--baseline", action="store_true", default=None, help="plain backpropagation")
    t.add_argument("--lr", type=float, help="main model learning rate")
    t.add_argument("--warmup-epochs", type=int)
    t.add_argument("--m-initial", type=int)
    t.add_argument("-k", type=int)
    t.add_argument("--growth", type=int)
    t.add_argument("--jobs", type=int, default=1, help="parallel processes across seeds")

    tl = sub.add_parser("timeline", help="single-chip step counts and speedup")
    _add_common(tl)
    tl.add_argument("-N", "--n-layers", type=int)
    tl.add_argument("--alpha", type=_fraction)
    tl.add_argument("--bw-ratio", type=_fraction)
    tl.add_argument("--pe-count", type=int)
    tl.add_argument("--dataflow", choices=costmodel.DATAFLOWS)
    tl.add_argument("--variant", choices=costmodel.VARIANTS)
    tl.add_argument("--load-store-cost", type=_fraction)
    tl.add_argument("--fractions", type=_fraction, nargs=3, metavar=("WARMUP", "BP", "GP"))
    tl.add_argument("--phase", choices=sorted(PHASE_NAMES), help="print only this phase's step count")
    tl.add_argument("--measured", action="store_true",
                    help="take alpha and layer costs from the configured model and predictor")

    pl = sub.add_parser("pipeline", help="multi-device schedule, makespan and Gantt chart")
    _add_common(pl)
    pl.add_argument("--strategy", choices=pipesim.STRATEGIES)
    pl.add_argument("-D", "--devices", type=int)
    pl.add_argument("-M", "--micro-batches", type=int)
    pl.add_argument("--mode", choices=pipesim.MODES)
    pl.add_argument("--bw-ratio", type=_fraction)
    pl.add_argument("--predictor-alpha", type=_fraction)

    en = sub.add_parser("energy", help="off-chip access energy against plain backpropagation")
    _add_common(en)
    en.add_argument("--model")
    en.add_argument("--batch-size", type=int)
    en.add_argument("--buffer-capacity", type=int)
    en.add_argument("--include-predictor", action="store_true", default=None)
    en.add_argument("--read-energy", type=float)
    en.add_argument("--write-energy", type=float)
    en.add_argument("--fractions", type=float, nargs=3, metavar=("WARMUP", "BP", "GP"))

    rp = sub.add_parser("report", help="merged table of timeline, pipeline, energy and training results")
    _add_common(rp)
    return parser


def _load(args) -> ExperimentConfig:
    return parse_config(args.config) if args.config else ExperimentConfig()


def _outdir(args, cfg):
    out = resolve_output_dir(cfg, args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# train -------------------------------------------------------------------

def _train_one(run_cfg, out_dir):
    result = run_experiment(run_cfg)
    arm = "baseline" if run_cfg.baseline else "adagp"
    paths = write_outputs(result, run_cfg, out_dir, stem=f"{arm}_seed{run_cfg.seed}")
    last = result.metrics.records[-1]
    return run_cfg.seed, arm, last.eval_accuracy, last.backward_passes, [str(p) for p in paths]


def cmd_train(args, out=None):
    out = out or sys.stdout
    cfg = with_overrides(
        _load(args),
        run=dict(model=args.model, dataset=args.dataset, seed=args.seed, epochs=args.epochs,
                 batch_size=args.batch_size, n_train=args.n_train, n_eval=args.n_eval, baseline=args.baseline),
        schedule=dict(warmup_epochs=args.warmup_epochs, m_initial=args.m_initial, k=args.k, growth=args.growth),
        optimizer=dict(lr=args.lr),
    )
    if args.jobs < 1:
        raise ValueError("--jobs must be >= 1")
    out_dir = _outdir(args, cfg)
    seeds = args.seeds or [cfg.run.seed]
    runs = [replace(cfg.run, seed=s) for s in seeds]
    if args.jobs > 1 and len(runs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_train_one, runs, [out_dir] * len(runs)))
    else:
        results = [_train_one(r, out_dir) for r in runs]
    for seed, arm, acc, bwd, paths in results:
        print(f"{arm} seed {seed}: final eval accuracy {acc:.4f}, backward passes {bwd}", file=out)
        for p in paths:
            print(f"  wrote {p}", file=out)
    return 0


# timeline ----------------------------------------------------------------

def _cost_params(cfg, args):
    c = cfg.cost
    params = costmodel.CostParams(
        n_layers=args.n_layers if args.n_layers is not None else c.n_layers,
        alpha=_exact(args.alpha if args.alpha is not None else c.alpha),
        bw_ratio=_exact(args.bw_ratio if args.bw_ratio is not None else c.bw_ratio),
        pe_count=args.pe_count if args.pe_count is not None else c.pe_count,
        dataflow=args.dataflow or c.dataflow,
        variant=args.variant or c.variant,
        load_store_cost=_exact(args.load_store_cost if args.load_store_cost is not None else c.load_store_cost),
        layer_costs=tuple(_exact(x) for x in c.layer_costs),
    )
    if args.measured:
        spec = zoo_spec(cfg.run.model, num_classes=cfg.run.num_classes)
        net = PredictorNet.for_model(spec, pool=cfg.run.predictor_pool, conv_channels=cfg.run.predictor_channels)
        costs = costmodel.model_layer_costs(spec, params.dataflow, params.pe_count)
        params = replace(params, layer_costs=costs, n_layers=len(costs),
                         alpha=costmodel.measured_alpha(spec, net))
    return params


def cmd_timeline(args, out=None):
    out = out or sys.stdout
    cfg = _load(args)
    params = _cost_params(cfg, args)
    fractions = tuple(_exact(f) for f in (args.fractions or cfg.phase_fractions))
    report = costmodel.cost_report(params, fractions)
    out_dir = _outdir(args, cfg)
    _dump_json(out_dir / "timeline.json", report)
    composed = report["composed_steps"]
    if args.phase:
        print(composed[PHASE_NAMES[args.phase]], file=out)
    else:
        for phase, steps in composed.items():
            print(f"{phase}: {steps}", file=out)
        print(f"speedup: {report['speedup']}", file=out)
    return 0


# pipeline ----------------------------------------------------------------

def cmd_pipeline(args, out=None):
    out = out or sys.stdout
    cfg = with_overrides(_load(args), pipeline=dict(
        strategy=args.strategy, devices=args.devices, micro_batches=args.micro_batches, mode=args.mode,
        bw_ratio=args.bw_ratio, predictor_alpha=args.predictor_alpha))
    pc = cfg.pipeline
    trace = pipesim.build_schedule(pc)
    check_trace(trace)
    out_dir = _outdir(args, cfg)
    stem = f"pipeline_{pc.strategy}_{pc.mode}_D{pc.devices}_M{pc.micro_batches}"
    (out_dir / f"{stem}.csv").write_text(pipesim.makespan_csv([trace]))
    _dump_json(out_dir / f"{stem}.json", pipesim.trace_to_dict(trace))
    pipesim.export_gantt(trace, out_dir / f"{stem}.svg")
    print(f"{pc.strategy} {pc.mode} D={pc.devices} M={pc.micro_batches}: "
          f"makespan {pipesim.format_steps(pipesim.makespan(trace))}", file=out)
    return 0


# energy ------------------------------------------------------------------

def cmd_energy(args, out=None):
    out = out or sys.stdout
    cfg = with_overrides(
        _load(args),
        run=dict(model=args.model, batch_size=args.batch_size),
        energy=dict(buffer_capacity=args.buffer_capacity, include_predictor=args.include_predictor,
                    read_energy=args.read_energy, write_energy=args.write_energy),
        phase_fractions=tuple(args.fractions) if args.fractions else None,
    )
    spec = zoo_spec(cfg.run.model, num_classes=cfg.run.num_classes)
    bs, ep = cfg.run.batch_size, cfg.energy
    cmp = energy.compare_schedules(spec, cfg.phase_fractions, ep, bs)
    counts = {ph: energy.count_accesses(spec, ph, bs, ep.buffer_capacity).as_dict() for ph in energy.PHASES}
    grid = [i / 10 for i in range(11)]
    sweep = energy.sweep(spec, grid, ep, bs)
    report = {**cmp.as_dict(), "model": spec.name, "batch_size": bs,
              "phase_fractions": list(cfg.phase_fractions), "counts": counts,
              "break_even_gp_fraction": energy.break_even_gp_fraction(spec, ep, bs) if ep.include_predictor else 0.0}
    out_dir = _outdir(args, cfg)
    _dump_json(out_dir / "energy.json", report)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["format_version", "model", "gp_fraction", "reduction"])
    for g, r in zip(grid, sweep):
        w.writerow([1, spec.name, repr(g), repr(r)])
    (out_dir / "energy.csv").write_text(buf.getvalue())
    print(f"{spec.name}: reduction {cmp.reduction:.6f} (backward share {cmp.f_bw:.6f})", file=out)
    return 0


# report ------------------------------------------------------------------

def report_rows(cfg: ExperimentConfig, out_dir: Path):
    rows = []
    c = cfg.cost
    params = costmodel.CostParams(c.n_layers, _exact(c.alpha), _exact(c.bw_ratio), c.pe_count, c.dataflow,
                                  c.variant, _exact(c.load_store_cost), tuple(_exact(x) for x in c.layer_costs))
    fr = tuple(_exact(f) for f in cfg.phase_fractions)
    for phase in costmodel.PHASES:
        rows.append(("timeline", f"{phase} steps", _num(costmodel.single_chip_steps(params, phase))))
    ada, base = costmodel.two_batch_steps(params)
    rows.append(("timeline", "two batches adagp", _num(ada)))
    rows.append(("timeline", "two batches baseline", _num(base)))
    rows.append(("timeline", "speedup", _num(costmodel.model_speedup(params, fr))))
    pc = cfg.pipeline
    for strategy in pipesim.STRATEGIES:
        for mode in pipesim.MODES:
            try:
                conf = replace(pc, strategy=strategy, mode=mode)
            except ValueError:
                continue
            trace = pipesim.build_schedule(conf)
            check_trace(trace)
            rows.append(("pipeline", f"{strategy} {mode} D={pc.devices} M={pc.micro_batches}",
                         _num(pipesim.makespan(trace))))
    spec = zoo_spec(cfg.run.model, num_classes=cfg.run.num_classes)
    cmp = energy.compare_schedules(spec, cfg.phase_fractions, cfg.energy, cfg.run.batch_size)
    rows.append(("energy", f"{spec.name} reduction", cmp.reduction))
    rows.append(("energy", f"{spec.name} backward share", cmp.f_bw))
    for path in sorted(out_dir.glob("*_summary.json")):
        summary = json.loads(path.read_text())
        rows.append(("train", path.name.removesuffix("_summary.json"), summary["final_eval_accuracy"]))
    return rows


def cmd_report(args, out=None):
    out = out or sys.stdout
    cfg = _load(args)
    out_dir = _outdir(args, cfg)
    rows = report_rows(cfg, out_dir)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["format_version", "section", "item", "value"])
    for section, item, value in rows:
        w.writerow([1, section, item, repr(value) if isinstance(value, float) else value])
    (out_dir / "report.csv").write_text(buf.getvalue())
    width = max(len(item) for _, item, _ in rows)
    for section, item, value in rows:
        shown = f"{value:.6g}" if isinstance(value, float) else value
        print(f"{section:<9} {item:<{width}}  {shown}", file=out)
    return 0


COMMANDS = {"train": cmd_train, "timeline": cmd_timeline, "pipeline": cmd_pipeline,
            "energy": cmd_energy, "report": cmd_report}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError, OSError, ShapeError, NonFiniteError, StaleCacheError, KeyError) as err:
        print(f"adagp {args.command}: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
