"""Training runs with alternating true-gradient and predicted-gradient batches."""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset, make_dataset
from .model import build_model, zoo_spec
from .optim import (
    MODEL_OPTIMIZER,
    PREDICTOR_OPTIMIZER,
    LrSchedulerConfig,
    OptimizerConfig,
    make_optimizer,
    make_scheduler,
)
from .predictor import (
    PredictorNet,
    cosine_similarity,
    predict,
    reorganize,
    train_predictor_step,
)
from .scheduler import BP, GP, WARMUP, PhaseState, phase_fractions

METRICS_FORMAT_VERSION = 1
CSV_COLUMNS = (
    "format_version", "epoch", "warmup_batches", "bp_batches", "gp_batches", "m", "lr",
    "train_loss", "eval_accuracy", "predictor_loss", "grad_cosine", "backward_passes",
)


@dataclass(frozen=True)
class ScheduleConfig:
    warmup_epochs: int = 3
    m_initial: int = 1
    k: int = 4
    growth: int = 1

    def __post_init__(self):
        PhaseState(self.warmup_epochs, self.m_initial, self.k, self.growth)  # same checks


@dataclass(frozen=True)
class RunConfig:
    model: str = "minicnn"
    dataset: str = "stripes"
    seed: int = 0
    epochs: int = 20
    batch_size: int = 32
    n_train: int = 512
    n_eval: int = 256
    num_classes: int = 4
    baseline: bool = False
    schedule: ScheduleConfig = ScheduleConfig()
    optimizer: OptimizerConfig = MODEL_OPTIMIZER
    predictor_optimizer: OptimizerConfig = PREDICTOR_OPTIMIZER
    lr_scheduler: LrSchedulerConfig = LrSchedulerConfig()
    predictor_pool: int = 7
    predictor_channels: int = 8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    warmup_batches: int
    bp_batches: int
    gp_batches: int
    m: int
    lr: float
    train_loss: float
    eval_accuracy: float
    predictor_loss: float | None
    grad_cosine: float | None
    backward_passes: int
    wall_clock: float = field(default=0.0, compare=False)


@dataclass
class MetricsLog:
    records: list = field(default_factory=list)

    def totals(self):
        return {
            WARMUP: sum(r.warmup_batches for r in self.records),
            BP: sum(r.bp_batches for r in self.records),
            GP: sum(r.gp_batches for r in self.records),
        }

    def fractions(self):
        return phase_fractions(self.totals())

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.records:
            w.writerow([
                METRICS_FORMAT_VERSION, r.epoch, r.warmup_batches, r.bp_batches, r.gp_batches, r.m,
                _fmt(r.lr), _fmt(r.train_loss), _fmt(r.eval_accuracy), _fmt(r.predictor_loss),
                _fmt(r.grad_cosine), r.backward_passes,
            ])
        return buf.getvalue()

    def summary(self, config: RunConfig | None = None):
        last = self.records[-1]
        w, b, g = self.fractions()
        out = {
            "format_version": METRICS_FORMAT_VERSION,
            "epochs": len(self.records),
            "final_eval_accuracy": last.eval_accuracy,
            "final_train_loss": last.train_loss,
            "phase_fractions": {"warmup": w, "bp": b, "gp": g},
            "batch_counts": self.totals(),
            "backward_passes": last.backward_passes,
        }
        if config is not None:
            out["config"] = _jsonable(asdict(config))
        return out


def _fmt(v):
    return "" if v is None else repr(float(v))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def train_batch_bp(model, predictor, batch, labels, optimizer, predictor_optimizer=None):
    """True-gradient step; the predictor (if any) learns from each layer's gradient.

    Returns ``(loss, mean predictor loss, mean cosine(predicted, true))``;
    the last two are None without a predictor.
    """
    layers = model.trainable_layers
    if predictor is None:
        loss, _ = model.forward_collect(batch, labels)
        model.apply_gradients(model.backward_collect(), optimizer)
        return loss, None, None

    reorgs, preds = [], []

    def on_layer(t, act):
        r = reorganize(act, t)
        reorgs.append(r)
        preds.append(predict(predictor, r, layers[t]))

    p_losses, cosines = [], []

    def on_grad(t, entry):
        cosines.append(cosine_similarity(preds[t], entry))
        p_losses.append(train_predictor_step(predictor, reorgs[t], entry, layers[t], predictor_optimizer))

    loss, _ = model.forward_collect(batch, labels, on_layer)
    grads = model.backward_collect(on_grad)
    model.apply_gradients(grads, optimizer)
    return loss, float(np.mean(p_losses)), float(np.mean(cosines))


def train_batch_gp(model, predictor, batch, labels, optimizer):
    """Predicted-gradient step: each layer is updated as soon as its output exists.

    Labels only feed the reported loss, which is computed after every update.
    """
    layers = model.trainable_layers

    def on_layer(t, act):
        model.apply_layer_gradient(t, predict(predictor, reorganize(act, t), layers[t]), optimizer)

    loss, _ = model.forward_collect(batch, labels, on_layer, retain=False)
    return loss


def evaluate(model, x, y, batch_size=256):
    if len(x) == 0:
        raise ValueError("evaluation set is empty")
    correct = 0
    for i in range(0, len(x), batch_size):
        correct += int(np.sum(model.logits(x[i:i + batch_size]).argmax(axis=1) == y[i:i + batch_size]))
    return correct / len(x)


@dataclass
class RunResult:
    metrics: MetricsLog
    model: object
    predictor: object
    state: PhaseState


def rng_streams(seed):
    data, model, predictor, shuffle = np.random.SeedSequence(seed).spawn(4)
    return (np.random.default_rng(data), np.random.default_rng(model),
            np.random.default_rng(predictor), np.random.default_rng(shuffle))


def load_data(config: RunConfig, rng):
    spec_input = zoo_spec(config.model, num_classes=config.num_classes).input_shape
    if config.dataset == "blobs":
        return make_dataset("blobs", rng, n_train=config.n_train, n_eval=config.n_eval,
                            features=spec_input[0], num_classes=config.num_classes)
    if config.dataset == "stripes":
        c, h, _ = spec_input
        return make_dataset("stripes", rng, n_train=config.n_train, n_eval=config.n_eval,
                            size=h, channels=c, num_classes=config.num_classes)
    return make_dataset(config.dataset, rng)


def run_experiment(config: RunConfig, data: Dataset | None = None, timing=False) -> RunResult:
    data_rng, model_rng, pred_rng, shuffle_rng = rng_streams(config.seed)
    if data is None:
        data = load_data(config, data_rng)
    spec = zoo_spec(config.model, num_classes=data.num_classes)
    if data.input_shape != tuple(spec.input_shape):
        raise ValueError(f"dataset samples {data.input_shape} do not fit model input {spec.input_shape}")
    model = build_model(spec, rng=model_rng)
    predictor = None
    if not config.baseline:
        predictor = PredictorNet.for_model(spec, pool=config.predictor_pool,
                                           conv_channels=config.predictor_channels, rng=pred_rng)
    optimizer = make_optimizer(config.optimizer)
    pred_optimizer = make_optimizer(config.predictor_optimizer)
    lr_sched = make_scheduler(config.lr_scheduler, config.optimizer.lr)
    s = config.schedule
    state = PhaseState(s.warmup_epochs, s.m_initial, s.k, s.growth)

    n_batches = len(data.x_train) // config.batch_size
    if n_batches == 0:
        raise ValueError("batch_size exceeds the training set size")
    log = MetricsLog()
    for epoch in range(config.epochs):
        start = time.perf_counter() if timing else 0.0
        order = shuffle_rng.permutation(len(data.x_train))
        counts = {WARMUP: 0, BP: 0, GP: 0}
        losses, p_losses, cosines = [], [], []
        m_now = state.m
        for b in range(n_batches):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            xb, yb = data.x_train[idx], data.y_train[idx]
            tag = BP if config.baseline else state.next_batch_phase()
            counts[tag] += 1
            if tag == GP:
                losses.append(train_batch_gp(model, predictor, xb, yb, optimizer))
            else:
                loss, pl, cs = train_batch_bp(model, predictor, xb, yb, optimizer, pred_optimizer)
                losses.append(loss)
                if pl is not None:
                    p_losses.append(pl)
                    cosines.append(cs)
        if not config.baseline:
            state.end_of_epoch_update()
        train_loss = float(np.mean(losses))
        acc = evaluate(model, data.x_eval, data.y_eval)
        log.records.append(EpochRecord(
            epoch=epoch, warmup_batches=counts[WARMUP], bp_batches=counts[BP], gp_batches=counts[GP],
            m=m_now, lr=optimizer.lr, train_loss=train_loss, eval_accuracy=acc,
            predictor_loss=float(np.mean(p_losses)) if p_losses else None,
            grad_cosine=float(np.mean(cosines)) if cosines else None,
            backward_passes=model.backward_calls,
            wall_clock=(time.perf_counter() - start) if timing else 0.0,
        ))
        optimizer.lr = lr_sched.step(epoch + 1, train_loss)
    return RunResult(log, model, predictor, state)


def write_outputs(result: RunResult, config: RunConfig, out_dir, stem="train"):
    """Metrics CSV, JSON summary and checkpoint; returns the written paths."""
    from pathlib import Path

    from .model import save_checkpoint

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{stem}_metrics.csv"
    json_path = out / f"{stem}_summary.json"
    ckpt_path = out / f"{stem}_checkpoint.json"
    csv_path.write_text(result.metrics.to_csv())
    json_path.write_text(json.dumps(result.metrics.summary(config), indent=2, sort_keys=True) + "\n")
    save_checkpoint(ckpt_path, result.model, result.predictor, meta={"seed": config.seed})
    return csv_path, json_path, ckpt_path
