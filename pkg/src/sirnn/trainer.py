"""Parameter initialisation, Adam with L2 decay, and the epoch loop with early stopping."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .config import TrainConfig
from .corpus import SelectionSample, Vocab
from .model import Model, model_shapes
from .numkit import NonFiniteError, ParameterStore, Tape, backward

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


def init_params(config: TrainConfig, shapes: Mapping[str, tuple[int, ...]] | None = None,
                vocab: Vocab | None = None) -> ParameterStore:
    """Uniform(-init_range, init_range) for every trainable tensor, drawn in sorted-name order."""
    shapes = model_shapes(config) if shapes is None else shapes
    rng = np.random.default_rng(config.seed)
    r = config.init_range
    params = {name: rng.uniform(-r, r, size=shapes[name]).astype(config.dtype)
              for name in sorted(shapes)}
    frozen = {} if vocab is None else {"embedding": vocab.vectors.astype(config.dtype)}
    return ParameterStore(params, frozen)


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: ParameterStore, grads: Mapping[str, np.ndarray], state: OptimizerState,
              config: TrainConfig) -> OptimizerState:
    """One bias-corrected Adam update in place; L2 enters as ``l2 * theta`` added to the gradient."""
    state.step += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for name, p in params.params.items():
        theta = p.data
        g = np.asarray(grads[name], dtype=theta.dtype)
        if config.l2:
            g = g + theta.dtype.type(config.l2) * theta
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / c1
        v_hat = v / c2
        theta -= (config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)).astype(theta.dtype)
    return state


class EarlyStopping:
    """Tracks the best score; ``step`` returns True once ``patience`` epochs pass without improvement."""

    def __init__(self, patience: int | None):
        self.patience = patience
        self.best = None
        self.best_epoch = 0
        self.bad_epochs = 0

    def step(self, epoch: int, score: float) -> bool:
        if self.best is None or score > self.best:
            self.best = score
            self.best_epoch = epoch
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        return self.patience is not None and self.bad_epochs >= self.patience


@dataclass
class TrainResult:
    model: Model
    log: list[dict]
    best_epoch: int
    stopped_early: bool


def _clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
    if total > max_norm:
        k = max_norm / total
        for name in grads:
            grads[name] = grads[name] * grads[name].dtype.type(k)


def train_step(model: Model, batch: Sequence[SelectionSample], state: OptimizerState) -> float:
    with Tape(model.store.params) as tape:
        loss = model.loss(batch)
    grads = backward(tape, loss)
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for {name}")
    if model.config.grad_clip:
        _clip_grads(grads, model.config.grad_clip)
    adam_step(model.store, grads, state, model.config)
    return loss.item()


def train(config: TrainConfig, train_samples: Sequence[SelectionSample],
          dev_samples: Sequence[SelectionSample], vocab: Vocab,
          evaluate_fn: Callable | None = None, log_path=None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Train with mini-batch Adam, keeping the parameters of the best dev ADR-RES epoch."""
    from .evalkit import evaluate

    if not train_samples:
        raise TrainingError("empty training set")
    evaluate_fn = evaluate_fn or evaluate
    store = init_params(config, vocab=vocab)
    model = Model(config, store, vocab)
    state = OptimizerState()
    rng = np.random.default_rng(config.seed + 1)
    stopper = EarlyStopping(config.patience)
    best_store = store.copy()
    history = []
    stopped = False
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, config.max_epochs + 1):
            t0 = time.perf_counter()
            order = rng.permutation(len(train_samples))
            total, count = 0.0, 0
            for i in range(0, len(order), config.batch_size):
                batch = [train_samples[k] for k in order[i:i + config.batch_size]]
                try:
                    loss = train_step(model, batch, state)
                except NonFiniteError as e:
                    raise TrainingError(
                        f"non-finite values at epoch {epoch}, batch {i // config.batch_size}: {e}") from e
                total += loss * len(batch)
                count += len(batch)
            report = evaluate_fn(model, dev_samples) if dev_samples else None
            entry = {
                "epoch": epoch,
                "train_loss": total / count,
                "dev_adr": report.adr_acc if report else None,
                "dev_res": report.res_acc if report else None,
                "dev_adr_res": report.adr_res_acc if report else None,
                "seconds": round(time.perf_counter() - t0, 3),
            }
            history.append(entry)
            if log_file:
                log_file.write(json.dumps(entry) + "\n")
                log_file.flush()
            if on_epoch:
                on_epoch(entry)
            log.info("epoch %d loss %.4f dev ADR-RES %s", epoch, entry["train_loss"], entry["dev_adr_res"])
            score = entry["dev_adr_res"] if report else -entry["train_loss"]
            stop = stopper.step(epoch, score)
            if stopper.best_epoch == epoch:
                best_store = model.store.copy()
            if stop:
                stopped = True
                break
    finally:
        if log_file:
            log_file.close()
    best = Model(config, best_store, vocab)
    return TrainResult(best, history, stopper.best_epoch, stopped)
