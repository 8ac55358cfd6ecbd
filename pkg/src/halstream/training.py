"""Streaming training loop: supervised / pseudo-supervised batch processing and epochs."""

from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .evaluation import evaluate_split
from .model import NodeMemory, TrainConfig, ce_loss, forward, init_params, mean_grad, sgd_step
from .pseudo import Aggregator, NoiseSpec, Strategy, add_zero_sum_noise
from .stream import make_batches

log = logging.getLogger(__name__)


class WallClock:
    """Elapsed wall time since construction."""

    def __init__(self):
        self._t0 = time.perf_counter()

    def charge(self, units: int) -> None:
        pass

    def seconds(self) -> float:
        return time.perf_counter() - self._t0


class WorkClock:
    """Deterministic clock: charged per unit of work, converted at a fixed rate.

    One unit is one memory edge update or one target row pushed through the
    head. Runs timed with this clock are reproducible byte-for-byte.
    """

    def __init__(self, seconds_per_unit: float = 1e-5):
        self.units = 0
        self.rate = seconds_per_unit

    def charge(self, units: int) -> None:
        self.units += int(units)

    def seconds(self) -> float:
        return self.units * self.rate


def make_clock(kind: str):
    if kind == "wall":
        return WallClock()
    if kind == "work":
        return WorkClock()
    raise ValueError(f"unknown clock {kind!r}")


@dataclass(frozen=True)
class PseudoConfig:
    strategy: Strategy = Strategy.DEFAULT
    window: float = 5.0
    noise: NoiseSpec = NoiseSpec()
    replace_ground_truth: bool = False

    @property
    def mode(self) -> str:
        return "default" if self.strategy is Strategy.DEFAULT else "pseudo"


@dataclass
class TrainState:
    memory: NodeMemory
    C: np.ndarray
    aggregator: Aggregator | None
    mu: float
    alpha_min: float = 1e-6
    noise: NoiseSpec = NoiseSpec()
    replace_ground_truth: bool = False
    step: int = 0
    rng: np.random.Generator = field(default=None)
    clock: object = field(default_factory=WorkClock)

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.default_rng(self.noise.seed)


@dataclass(frozen=True)
class StepReport:
    stepped: bool
    loss: float
    n_truth: int
    n_pseudo: int


def _advance(state, batch, lo, hi):
    if hi > lo:
        state.memory.update(batch.src[lo:hi], batch.dst[lo:hi], batch.t[lo:hi], batch.features[lo:hi])
        state.clock.charge(hi - lo)


def assemble_targets(state: TrainState, batch, mode: str):
    """Targets for one batch: ``(nodes, Y, n_truth, n_pseudo)``.

    Ground-truth labels come first in ``(timestamp, node)`` order. In pseudo
    mode every other participating node with history adds a pseudo-target.
    """
    nodes, ys = [], []
    truth_nodes = batch.label_node
    n_truth = 0
    agg = state.aggregator
    pseudo = mode == "pseudo" and agg is not None
    for v, y in zip(truth_nodes, batch.label_target):
        if pseudo and state.replace_ground_truth and v in agg:
            continue
        nodes.append(int(v))
        ys.append(y)
        n_truth += 1
    n_pseudo = 0
    if pseudo:
        participants = np.union1d(batch.src, batch.dst)
        if state.replace_ground_truth:
            participants = np.union1d(participants, truth_nodes)
        else:
            participants = np.setdiff1d(participants, truth_nodes)
        pnodes, pys = agg.pseudo_targets(participants)
        for v, ybar in zip(pnodes, pys):
            nodes.append(int(v))
            ys.append(add_zero_sum_noise(ybar, state.noise.gamma, state.noise.alpha, state.rng))
        n_pseudo = len(pnodes)
    ys = np.vstack(ys) if ys else np.zeros((0, 0))
    return np.asarray(nodes, dtype=np.int64), ys, n_truth, n_pseudo


def process_batch(state: TrainState, batch, mode: str = "default") -> StepReport:
    """Process one batch in ``default`` or ``pseudo`` mode, mutating ``state``.

    Edges strictly before the batch's earliest label are applied to memory
    first, then targets are assembled and (if any) one averaged SGD step is
    taken, then the remaining edges are applied. Ground-truth labels reach the
    aggregator only after they were used as targets.
    """
    if mode not in ("default", "pseudo"):
        raise ValueError(f"unknown batch mode {mode!r}")
    if batch.has_labels:
        cut = int(np.searchsorted(batch.t, batch.label_t.min(), side="left"))
    else:
        cut = batch.n_edges
    _advance(state, batch, 0, cut)

    nodes, Y, n_truth, n_pseudo = assemble_targets(state, batch, mode)
    stepped, loss = False, float("nan")
    if len(nodes):
        E = state.memory.embedding(nodes)
        P = forward(state.C, E)
        loss = float(np.mean(ce_loss(P, Y)))
        state.step += 1
        state.C = sgd_step(state.C, mean_grad(P, Y, E), state.step, state.mu, state.alpha_min)
        state.clock.charge(len(nodes))
        stepped = True

    _advance(state, batch, cut, batch.n_edges)
    if state.aggregator is not None and batch.has_labels:
        state.aggregator.observe_many(batch.label_node, batch.label_target, batch.label_t)
    return StepReport(stepped, loss, n_truth, n_pseudo)


@dataclass
class TrainedModel:
    C: np.ndarray
    config: TrainConfig
    pseudo: PseudoConfig
    best_epoch: int
    best_val: float
    steps_to_best: int
    batches_to_best: int
    time_to_best: float
    epochs_run: int
    total_steps: int


def new_memory(log_, config: TrainConfig) -> NodeMemory:
    return NodeMemory(log_.n_nodes, dim=config.dim, decay=config.mem_decay,
                      edge_dim=log_.edge_dim, seed=config.seed)


def new_aggregator(pseudo: PseudoConfig, n_categories: int):
    if pseudo.strategy is Strategy.DEFAULT:
        return None
    return Aggregator(pseudo.strategy, n_categories, window=pseudo.window)


def train(splits, pseudo: PseudoConfig = PseudoConfig(), config: TrainConfig = TrainConfig(),
          clock=None, init_C=None):
    """Train the last layer over epochs with early stopping on validation NDCG@10.

    ``splits`` is ``(train, valid, test)`` (extra items ignored). Each epoch
    rebuilds memory and aggregator from scratch by replaying the training
    stream. Returns ``(TrainedModel, trace)`` where ``trace`` holds one dict
    per epoch with keys ``step, time_s, epoch, train_loss, val_ndcg``.
    """
    train_log, valid_log = splits[0], splits[1]
    clock = clock if clock is not None else WorkClock()
    batches = make_batches(train_log, config.batch_edges)
    C = init_params(train_log.n_categories, config.dim, config.seed) if init_C is None else np.array(init_C, dtype=np.float64)
    rng = np.random.default_rng(pseudo.noise.seed)
    mode = pseudo.mode

    best = None
    best_val = -math.inf
    since_best = 0
    step = 0
    trace = []
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        state = TrainState(
            memory=new_memory(train_log, config), C=C, aggregator=new_aggregator(pseudo, train_log.n_categories),
            mu=config.mu, alpha_min=config.alpha_min, noise=pseudo.noise,
            replace_ground_truth=pseudo.replace_ground_truth, step=step, rng=rng, clock=clock,
        )
        losses = []
        for b in batches:
            rep = process_batch(state, b, mode)
            if rep.stepped:
                losses.append(rep.loss)
        C, step = state.C, state.step
        val_mem = state.memory.snapshot()
        report = evaluate_split(C, val_mem, valid_log)
        clock.charge(report.per_event.size + valid_log.n_edges)
        val = report.ndcg_at_10
        rec = {
            "step": step,
            "time_s": clock.seconds(),
            "epoch": epoch,
            "train_loss": float(np.mean(losses)) if losses else None,
            "val_ndcg": None if math.isnan(val) else val,
        }
        trace.append(rec)
        log.debug("epoch %d: %s", epoch, rec)
        if best is None or (not math.isnan(val) and val > best_val):
            best_val = val if not math.isnan(val) else best_val
            best = TrainedModel(
                C=C.copy(), config=config, pseudo=pseudo, best_epoch=epoch, best_val=val,
                steps_to_best=step, batches_to_best=epoch * len(batches), time_to_best=rec["time_s"],
                epochs_run=epoch, total_steps=step,
            )
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    best.epochs_run = epoch
    best.total_steps = step
    return best, trace


def replay_memory(logs, config: TrainConfig, n_nodes=None) -> NodeMemory:
    """Fresh memory advanced over every edge of ``logs`` in order (labels ignored)."""
    first = logs[0]
    mem = NodeMemory(n_nodes if n_nodes is not None else first.n_nodes, dim=config.dim,
                     decay=config.mem_decay, edge_dim=first.edge_dim, seed=config.seed)
    for lg in logs:
        mem.update(lg.src, lg.dst, lg.t, lg.features)
    return mem


def evaluate_model(model: TrainedModel, splits, which: str = "test"):
    """Score ``model`` on the valid or test split with memory replayed up to it."""
    train_log, valid_log, test_log = splits[0], splits[1], splits[2]
    if which == "valid":
        mem = replay_memory([train_log], model.config)
        return evaluate_split(model.C, mem, valid_log)
    if which == "test":
        mem = replay_memory([train_log, valid_log], model.config)
        return evaluate_split(model.C, mem, test_log)
    raise ValueError(f"unknown split {which!r}")


def copy_state(state: TrainState) -> TrainState:
    return copy.deepcopy(state)
