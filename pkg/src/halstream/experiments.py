"""Reproducible experiment harness.

Every experiment is a pure function of its spec and seeds. Runs are keyed
by ``(strategy, seed, variant)``; they may execute in a process pool, and
their results are merged in sorted key order before anything is written.
Each experiment writes into its own directory: ``summary.csv``, one
``trace.jsonl`` per run under ``traces/`` and ``spec.snapshot``.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .model import TrainConfig, forward, init_params, mean_grad, sgd_step
from .pseudo import NoiseSpec, Strategy
from .stream import (
    SyntheticSpec, attach_labels, chronological_split, ingest_edges_csv, ingest_labels_csv, shuffle_edges,
    shuffle_targets, synth_generate, synth_true_sets, truncate_train_tail,
)
from .theory import LabelProcessParams, analytic_mean_t_h, analytic_var_t_h, mc_estimate_t_h, \
    regret_coeffs_theorem2, variance_ratio
from .training import PseudoConfig, evaluate_model, make_clock, train

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DataSource:
    """Synthetic generator settings or CSV paths, plus split handling."""

    synthetic: SyntheticSpec | None = SyntheticSpec()
    edges: str = ""
    labels: str = ""
    labels_sparse: bool = False
    n_categories: int = 0
    fractions: tuple = (0.7, 0.15, 0.15)
    train_keep: float = 1.0

    def __post_init__(self):
        if self.synthetic is None and not self.edges:
            raise ValidationError("data source needs a synthetic spec or an edge CSV path")
        if not 0 < self.train_keep <= 1:
            raise ValidationError(f"data.train_keep must be in (0, 1], got {self.train_keep}")
        fr = tuple(float(x) for x in self.fractions)
        if len(fr) != 3 or min(fr) < 0 or abs(sum(fr) - 1) > 1e-9:
            raise ValidationError(f"data.fractions must be three non-negative reals summing to 1, got {fr}")

    def event_log(self, seed: int = 0):
        """The full log; ``seed`` offsets the generator seed of synthetic data."""
        if self.synthetic is not None:
            return synth_generate(dataclasses.replace(self.synthetic, seed=self.synthetic.seed + seed))
        lg, node_map = ingest_edges_csv(self.edges, n_categories=max(self.n_categories, 1))
        if self.labels:
            labs = ingest_labels_csv(self.labels, self.n_categories, sparse=self.labels_sparse, node_map=node_map)
            lg = attach_labels(lg.replace(n_categories=self.n_categories), labs)
        return lg

    def splits(self, seed: int = 0):
        res = chronological_split(self.event_log(seed), self.fractions)
        return res.train if self.train_keep == 1 else truncate_train_tail(res.train, self.train_keep), \
            res.valid, res.test


@functools.lru_cache(maxsize=16)
def _cached_splits(data: DataSource, seed: int):
    return data.splits(seed)


@dataclass(frozen=True)
class ExperimentSpec:
    data: DataSource = DataSource()
    strategies: tuple = (Strategy.DEFAULT, Strategy.HA, Strategy.MA, Strategy.PF)
    window: float = 5.0
    noise: NoiseSpec = NoiseSpec()
    replace_ground_truth: bool = False
    train: TrainConfig = TrainConfig()
    seeds: tuple = (0, 1, 2, 3, 4)
    budget_epochs: int = 1
    window_grid: tuple = tuple(float(w) for w in range(1, 16))
    clock: str = "work"
    snapshot: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "strategies", tuple(Strategy.parse(s) for s in self.strategies))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.strategies:
            raise ValidationError("an experiment needs at least one strategy")
        if not self.seeds:
            raise ValidationError("an experiment needs at least one seed")
        if self.clock not in ("work", "wall"):
            raise ValidationError(f"clock must be 'work' or 'wall', got {self.clock!r}")
        if not self.window > 1:
            raise ValidationError(f"ma.window must be > 1, got {self.window}")

    @classmethod
    def from_config(cls, cfg) -> "ExperimentSpec":
        if cfg["data.source"] == "synthetic":
            synth = SyntheticSpec(
                n_users=cfg["synth.n_users"], n_categories=cfg["synth.n_categories"], k=cfg["synth.k"],
                u=cfg["synth.u"], events_per_user=cfg["synth.events_per_user"],
                label_period=cfg["synth.label_period"], seed=cfg["synth.seed"],
            )
        else:
            synth = None
        data = DataSource(
            synthetic=synth, edges=cfg["data.edges"], labels=cfg["data.labels"],
            labels_sparse=cfg["data.labels_sparse"], n_categories=cfg["data.n_categories"],
            fractions=cfg["data.fractions"], train_keep=cfg["data.train_keep"],
        )
        tc = TrainConfig(
            dim=cfg["model.dim"], mem_decay=cfg["model.mem_decay"], mu=cfg["train.mu"],
            alpha_min=cfg["train.alpha_min"], max_epochs=cfg["train.max_epochs"],
            patience=cfg["train.patience"], batch_edges=cfg["train.batch_edges"], seed=cfg["train.seed"],
        )
        return cls(
            data=data, strategies=cfg["exp.strategies"], window=cfg["ma.window"],
            noise=NoiseSpec(cfg["noise.gamma"], cfg["noise.alpha"], cfg["noise.seed"]),
            replace_ground_truth=cfg["pseudo.replace_ground_truth"], train=tc, seeds=cfg["exp.seeds"],
            budget_epochs=cfg["exp.budget_epochs"], window_grid=cfg["exp.window_grid"],
            clock=cfg["out.clock"], snapshot=cfg.dump(),
        )

    def pseudo_config(self, strategy, seed: int, window: float | None = None) -> PseudoConfig:
        noise = dataclasses.replace(self.noise, seed=self.noise.seed + seed)
        return PseudoConfig(Strategy.parse(strategy), self.window if window is None else window,
                            noise, self.replace_ground_truth)

    def train_config(self, seed: int, **changes) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.train.seed + seed, **changes)

    def snapshot_text(self) -> str:
        if self.snapshot:
            return self.snapshot
        return "".join(f"{k} = {v}\n" for k, v in sorted(_flatten(dataclasses.asdict(self)).items())
                       if k != "snapshot")


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out.update(_flatten(v, f"{prefix}{k}."))
        else:
            out[f"{prefix}{k}"] = v.value if isinstance(v, Strategy) else v
    return out


# ---------------------------------------------------------------------------
# single runs
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    strategy: str
    seed: int
    variant: str
    valid_ndcg: float
    test_ndcg: float
    steps_to_best: int
    batches_to_best: int
    time_to_best: float
    best_epoch: int
    epochs_run: int
    total_steps: int
    total_time: float
    trace: list

    @property
    def key(self):
        return (self.strategy, self.seed, self.variant)


@dataclass(frozen=True)
class RunJob:
    spec: ExperimentSpec
    strategy: Strategy
    seed: int
    variant: str = ""
    perturb: str = ""
    max_epochs: int | None = None
    patience: int | None = None
    window: float | None = None
    label: str | None = None


def _perturb(splits, mode: str, seed: int):
    if not mode:
        return splits
    train_log = splits[0]
    if mode == "edges":
        shuffled = shuffle_edges(train_log, [seed, 1])
        if not np.array_equal(shuffled.label_target, train_log.label_target):
            raise AssertionError("edge shuffling changed the label multiset")
    elif mode == "targets":
        shuffled = shuffle_targets(train_log, [seed, 2])
    else:
        raise ValidationError(f"unknown shuffle mode {mode!r}; expected 'edges' or 'targets'")
    return (shuffled,) + tuple(splits[1:])


def execute(job: RunJob) -> RunResult:
    """Train one configuration and score it on valid and test."""
    spec = job.spec
    splits = _perturb(_cached_splits(spec.data, job.seed), job.perturb, job.seed)
    changes = {}
    if job.max_epochs is not None:
        changes["max_epochs"] = job.max_epochs
    if job.patience is not None:
        changes["patience"] = job.patience
    tc = spec.train_config(job.seed, **changes)
    pc = spec.pseudo_config(job.strategy, job.seed, job.window)
    model, trace = train(splits, pc, tc, clock=make_clock(spec.clock))
    test = evaluate_model(model, splits, "test").ndcg_at_10
    return RunResult(
        strategy=job.label or job.strategy.value, seed=job.seed, variant=job.variant,
        valid_ndcg=model.best_val, test_ndcg=test, steps_to_best=model.steps_to_best,
        batches_to_best=model.batches_to_best, time_to_best=model.time_to_best,
        best_epoch=model.best_epoch, epochs_run=model.epochs_run, total_steps=model.total_steps,
        total_time=trace[-1]["time_s"], trace=trace,
    )


def run_jobs(jobs, workers: int = 1, fn=execute):
    """Run ``fn`` over ``jobs``, in a process pool when ``workers > 1``; order is preserved."""
    jobs = list(jobs)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(r[h]) for h in header])
    return buf.getvalue()


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def trace_jsonl(trace) -> str:
    return "".join(json.dumps(rec, sort_keys=False) + "\n" for rec in trace)


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _run_name(r: RunResult) -> str:
    return f"{r.strategy}_seed{r.seed}" + (f"_{r.variant}" if r.variant else "")


def _emit(out_dir, name, spec, files: dict, runs=()):
    if out_dir is None:
        return None
    d = Path(out_dir) / name
    for fname, text in files.items():
        write_atomic(d / fname, text)
    for r in sorted(runs, key=lambda r: r.key):
        write_atomic(d / "traces" / f"{_run_name(r)}.jsonl", trace_jsonl(r.trace))
    write_atomic(d / "spec.snapshot", spec.snapshot_text())
    return d


def _median_rows(rows, group_keys, value_keys):
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in group_keys), []).append(r)
    out = []
    for g in sorted(groups):
        rec = dict(zip(group_keys, g))
        rec["n"] = len(groups[g])
        for v in value_keys:
            vals = np.array([r[v] for r in groups[g]], dtype=np.float64)
            vals = vals[~np.isnan(vals)]
            rec[f"{v}_median"] = float(np.median(vals)) if vals.size else float("nan")
            rec[f"{v}_min"] = float(vals.min()) if vals.size else float("nan")
            rec[f"{v}_max"] = float(vals.max()) if vals.size else float("nan")
        out.append(rec)
    return out


@dataclass
class ExperimentResult:
    rows: list
    medians: list
    runs: list
    out_dir: Path | None = None

    def median(self, **where) -> dict:
        """The single median row matching all ``where`` fields."""
        hits = [m for m in self.medians if all(m[k] == v for k, v in where.items())]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} median rows match {where}")
        return hits[0]


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

COMPARISON_HEADER = ("strategy", "seed", "split", "ndcg10", "steps", "batches", "time_s", "best_epoch")


def _split_rows(r: RunResult, epochs=None):
    for split, v in (("valid", r.valid_ndcg), ("test", r.test_ndcg)):
        row = {"strategy": r.strategy, "seed": r.seed, "split": split, "ndcg10": v, "steps": r.steps_to_best,
               "batches": r.batches_to_best, "time_s": r.time_to_best, "best_epoch": r.best_epoch}
        if epochs is not None:
            row["epochs"] = epochs
        yield row


def run_strategy_comparison(spec: ExperimentSpec, out_dir=None, workers: int = 1) -> ExperimentResult:
    """Train every strategy to early-stopped convergence on identical data and seeds.

    ``steps`` counts gradient-bearing steps up to the best validation epoch;
    ``batches`` counts batches processed up to it.
    """
    jobs = [RunJob(spec, s, seed) for s in spec.strategies for seed in spec.seeds]
    runs = sorted(run_jobs(jobs, workers), key=lambda r: r.key)
    rows = [row for r in runs for row in _split_rows(r)]
    med = _median_rows(rows, ("strategy", "split"), ("ndcg10", "steps", "batches", "time_s"))
    header_m = ("strategy", "split", "n") + tuple(f"{v}_{s}" for v in ("ndcg10", "steps", "batches", "time_s")
                                                   for s in ("median", "min", "max"))
    d = _emit(out_dir, "compare", spec, {"summary.csv": csv_text(COMPARISON_HEADER, rows),
                                         "medians.csv": csv_text(header_m, med)}, runs)
    return ExperimentResult(rows, med, runs, d)


BUDGET_HEADER = ("strategy", "seed", "epochs", "split", "ndcg10", "steps", "batches", "time_s", "best_epoch")


def run_fixed_budget(spec: ExperimentSpec, out_dir=None, workers: int = 1,
                     max_default_epochs: int = 200) -> ExperimentResult:
    """Train each strategy for exactly ``spec.budget_epochs`` epochs, plus a matched Default-X.

    For each seed, X is the smallest epoch count at which Default's total
    training time meets or exceeds the slowest aggregation strategy's.
    """
    E = spec.budget_epochs
    if E < 1:
        raise ValidationError(f"fixed budget must be at least one epoch, got {E}")
    jobs = [RunJob(spec, s, seed, max_epochs=E, patience=E) for s in spec.strategies for seed in spec.seeds]
    runs = sorted(run_jobs(jobs, workers), key=lambda r: r.key)

    dx_jobs = []
    for seed in spec.seeds:
        agg = [r.total_time for r in runs if r.seed == seed and r.strategy != Strategy.DEFAULT.value]
        if not agg:
            continue
        target = max(agg)
        base = execute(RunJob(spec, Strategy.DEFAULT, seed, max_epochs=1, patience=1))
        per_epoch = max(base.total_time, 1e-12)
        x = max(E, min(max_default_epochs, math.ceil(target / per_epoch - 1e-9)))
        dx_jobs.append(RunJob(spec, Strategy.DEFAULT, seed, max_epochs=x, patience=x, label="default-x"))
    dx = run_jobs(dx_jobs, workers)
    # wall-clock epochs are not uniform: extend until the time target is met
    for i, (job, r) in enumerate(zip(dx_jobs, dx)):
        target = max(q.total_time for q in runs if q.seed == job.seed and q.strategy != Strategy.DEFAULT.value)
        x = job.max_epochs
        while r.total_time < target and x < max_default_epochs:
            x += 1
            r = execute(dataclasses.replace(job, max_epochs=x, patience=x))
        dx[i] = r
    dx = sorted(dx, key=lambda r: r.key)

    rows = [row for r in runs for row in _split_rows(r, E)]
    rows += [row for r in dx for row in _split_rows(r, r.epochs_run)]
    med = _median_rows(rows, ("strategy", "split"), ("ndcg10", "steps", "time_s", "epochs"))
    header_m = ("strategy", "split", "n") + tuple(f"{v}_{s}" for v in ("ndcg10", "steps", "time_s", "epochs")
                                                   for s in ("median", "min", "max"))
    d = _emit(out_dir, "budget", spec, {"summary.csv": csv_text(BUDGET_HEADER, rows),
                                        "medians.csv": csv_text(header_m, med)}, runs + dx)
    return ExperimentResult(rows, med, runs + dx, d)


def _window_job(spec, w, seed):
    # the moving-average recursion with w = 1 keeps only the newest target,
    # which is exactly the persistent forecast
    if w <= 1:
        return RunJob(spec, Strategy.PF, seed, variant=f"w{w:g}", label="ma")
    return RunJob(spec, Strategy.MA, seed, variant=f"w{w:g}", window=float(w))


def run_window_sweep(spec: ExperimentSpec, grid=None, out_dir=None, workers: int = 1) -> ExperimentResult:
    """One MA run per ``(w, seed)`` plus a Default baseline per seed.

    ``summary.csv`` has columns ``w,seed,ndcg10,steps`` (test NDCG, steps to
    the best epoch); ``baseline.csv`` holds the Default runs.
    """
    grid = tuple(spec.window_grid if grid is None else grid)
    if not grid:
        raise ValidationError("window grid must be non-empty")
    if any(w < 1 for w in grid):
        raise ValidationError(f"window sizes must be >= 1, got {grid}")
    grid = tuple(sorted(set(float(w) for w in grid)))
    jobs = [_window_job(spec, w, seed) for w in grid for seed in spec.seeds]
    jobs += [RunJob(spec, Strategy.DEFAULT, seed) for seed in spec.seeds]
    res = run_jobs(jobs, workers)
    n_sweep = len(grid) * len(spec.seeds)
    sweep = sorted(zip([j for j in jobs[:n_sweep]], res[:n_sweep]), key=lambda p: (p[0].window or 1.0, p[1].seed))
    rows = [{"w": (j.window or 1.0), "seed": r.seed, "ndcg10": r.test_ndcg, "steps": r.steps_to_best}
            for j, r in sweep]
    base = sorted(res[n_sweep:], key=lambda r: r.key)
    brows = [{"strategy": r.strategy, "seed": r.seed, "ndcg10": r.test_ndcg, "steps": r.steps_to_best}
             for r in base]
    med = _median_rows(rows, ("w",), ("ndcg10", "steps"))
    runs = [r for _, r in sweep] + base
    d = _emit(out_dir, "sweep", spec, {
        "summary.csv": csv_text(("w", "seed", "ndcg10", "steps"), rows),
        "baseline.csv": csv_text(("strategy", "seed", "ndcg10", "steps"), brows),
    }, runs)
    return ExperimentResult(rows, med, runs, d)


def run_shuffle_ablation(spec: ExperimentSpec, mode: str, out_dir=None, workers: int = 1) -> ExperimentResult:
    """Paired original vs shuffled-training-split runs for every strategy and seed.

    ``mode='edges'`` permutes interactions over the fixed timestamp column;
    ``mode='targets'`` permutes label vectors across label slots. Validation
    and test splits stay intact, and both runs of a pair share every seed.
    """
    if mode not in ("edges", "targets"):
        raise ValidationError(f"unknown shuffle mode {mode!r}; expected 'edges' or 'targets'")
    jobs = []
    for s in spec.strategies:
        for seed in spec.seeds:
            jobs.append(RunJob(spec, s, seed, variant="original"))
            jobs.append(RunJob(spec, s, seed, variant=f"shuffled-{mode}", perturb=mode))
    runs = sorted(run_jobs(jobs, workers), key=lambda r: r.key)
    by = {(r.strategy, r.seed, r.variant): r for r in runs}
    rows = []
    for s in spec.strategies:
        for seed in sorted(spec.seeds):
            a, b = by[(s.value, seed, "original")], by[(s.value, seed, f"shuffled-{mode}")]
            rows.append({"strategy": s.value, "seed": seed, "original": a.test_ndcg,
                         "shuffled": b.test_ndcg, "delta": b.test_ndcg - a.test_ndcg})
    rows.sort(key=lambda r: (r["strategy"], r["seed"]))
    med = _median_rows(rows, ("strategy",), ("original", "shuffled", "delta"))
    d = _emit(out_dir, f"ablate-{mode}", spec, {
        "summary.csv": csv_text(("strategy", "seed", "original", "shuffled", "delta"), rows)}, runs)
    return ExperimentResult(rows, med, runs, d)


# ---------------------------------------------------------------------------
# convergence speedup
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpeedupSpec:
    """Constant-preference last-layer problem for the one-hot vs history-average race.

    Each of ``users`` users has a fixed embedding ``[1, onehot(user)]`` and a
    hidden true set of ``k`` of the ``n`` categories. At every step each user
    draws ``xi ~ Bernoulli(u)`` and ``max(hs)`` categories, uniformly from its
    true set when ``xi = 1`` and from the complement otherwise; the target
    under history length ``h`` is the normalized count of the first ``h``
    draws. ``h = 1`` is the one-hot label, so every ``h`` shares one stream.
    """

    n: int = 50
    k: int = 10
    u: float = 0.95
    hs: tuple = (1, 4, 16, 32, 64)
    users: int = 20
    mu: float = 0.001
    t0: int = 100
    init_scale: float = 3.0
    tau: float = 0.02
    max_steps: int = 20000
    seeds: tuple = (0, 1, 2, 3, 4)
    snapshot: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "hs", tuple(sorted(set(int(h) for h in self.hs) | {1})))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        LabelProcessParams(self.k, self.n, max(self.hs), self.u)
        if self.k == self.n:
            raise ValidationError("speedup experiment needs k < n")
        if self.users < 1 or self.max_steps < 1 or self.t0 < 0:
            raise ValidationError("users and max_steps must be positive, t0 non-negative")
        if self.mu <= 0 or self.tau <= 0 or self.init_scale < 0:
            raise ValidationError("mu and tau must be positive, init_scale non-negative")
        if not self.seeds:
            raise ValidationError("an experiment needs at least one seed")

    @classmethod
    def from_config(cls, cfg) -> "SpeedupSpec":
        return cls(n=cfg["speedup.n"], k=cfg["speedup.k"], u=cfg["speedup.u"], hs=cfg["speedup.h"],
                   users=cfg["speedup.users"], mu=cfg["speedup.mu"], t0=cfg["speedup.t0"],
                   init_scale=cfg["speedup.init_scale"], tau=cfg["speedup.tau"],
                   max_steps=cfg["speedup.max_steps"], seeds=cfg["exp.seeds"], snapshot=cfg.dump())

    def snapshot_text(self) -> str:
        if self.snapshot:
            return self.snapshot
        d = {k: v for k, v in dataclasses.asdict(self).items() if k != "snapshot"}
        return "".join(f"{k} = {v}\n" for k, v in sorted(d.items()))


def true_set_excess_loss(P, true_sets) -> float:
    """Mean over users of the cross-entropy excess of the renormalized true-set prediction.

    Zero exactly when every user's prediction is uniform over its true set
    (the population optimum restricted to those categories).
    """
    pt = np.take_along_axis(P, true_sets, axis=1)
    pt = pt / pt.sum(axis=1, keepdims=True)
    k = true_sets.shape[1]
    return float(np.mean(-np.log(pt).mean(axis=1) - math.log(k)))


def speedup_trajectories(spec: SpeedupSpec, seed: int, record_every: int = 100):
    """Steps until the true-set excess loss first drops below ``tau``, per history length.

    Returns ``(steps, trace)``; ``steps[h]`` is ``None`` when censored.
    """
    n, k, U = spec.n, spec.k, spec.users
    true_sets = synth_true_sets(SyntheticSpec(n_users=U, n_categories=n, k=k, u=spec.u, seed=seed))
    rows = np.arange(U)[:, None]
    mask = np.ones((U, n), dtype=bool)
    mask[rows, true_sets] = False
    off_sets = np.nonzero(mask)[1].reshape(U, n - k)
    d = U + 1
    E = np.zeros((U, d))
    E[:, 0] = 1.0
    E[np.arange(U), 1 + np.arange(U)] = 1.0
    C0 = spec.init_scale * init_params(n, d, seed)
    hmax = max(spec.hs)
    C = {h: C0.copy() for h in spec.hs}
    hit = {}
    trace = []
    rng = np.random.default_rng([seed, 1])
    owner = {h: np.repeat(np.arange(U), h) for h in spec.hs}
    for t in range(1, spec.max_steps + 2):
        xi = rng.random(U) < spec.u
        cat = np.where(xi[:, None], true_sets[rows, rng.integers(0, k, size=(U, hmax))],
                       off_sets[rows, rng.integers(0, n - k, size=(U, hmax))])
        for h in spec.hs:
            if h in hit:
                continue
            P = forward(C[h], E)
            loss = true_set_excess_loss(P, true_sets)
            if (t - 1) % record_every == 0:
                trace.append({"h": h, "step": t - 1, "loss": loss})
            if loss < spec.tau:
                hit[h] = t - 1
                trace.append({"h": h, "step": t - 1, "loss": loss})
                continue
            if t > spec.max_steps:
                continue
            Y = np.zeros((U, n))
            np.add.at(Y, (owner[h], cat[:, :h].reshape(-1)), 1.0 / h)
            C[h] = sgd_step(C[h], mean_grad(P, Y, E), t + spec.t0, spec.mu, 1e-12)
        if len(hit) == len(spec.hs):
            break
    return {h: hit.get(h) for h in spec.hs}, trace


def _speedup_job(args):
    spec, seed = args
    return seed, speedup_trajectories(spec, seed)


def _median_steps(vals):
    return float(np.median([math.inf if v is None else v for v in vals]))


def _ratio(a, b):
    if math.isinf(a) and math.isinf(b):
        return float("nan")
    if b == 0:
        return 1.0 if a == 0 else math.inf
    return a / b


@dataclass
class SpeedupResult:
    rows: list
    per_seed: list
    out_dir: Path | None = None

    def row(self, h: int) -> dict:
        return next(r for r in self.rows if r["h"] == h)


def run_speedup_experiment(spec: SpeedupSpec = SpeedupSpec(), out_dir=None, workers: int = 1) -> SpeedupResult:
    """Race one-hot against history-average targets to a loss threshold.

    Per history length ``h`` the result row holds the median steps of the
    one-hot run (``steps_oh``) and of the ``h`` run (``steps_ha``) over seeds,
    their ratio, the analytic prediction ``var(t_1) / var(t_h)``, per-seed
    ratio extremes and censoring counts. Censored runs count as infinite
    steps in the medians.
    """
    results = dict(run_jobs([(spec, s) for s in spec.seeds], workers, _speedup_job))
    per_seed = []
    for seed in sorted(results):
        steps, _ = results[seed]
        for h in spec.hs:
            per_seed.append({"seed": seed, "h": h, "steps_oh": steps[1], "steps_ha": steps[h]})
    rows = []
    for h in spec.hs:
        oh = [results[s][0][1] for s in spec.seeds]
        ha = [results[s][0][h] for s in spec.seeds]
        ratios = [_ratio(math.inf if a is None else a, math.inf if b is None else b) for a, b in zip(oh, ha)]
        m_oh, m_ha = _median_steps(oh), _median_steps(ha)
        rows.append({
            "h": h, "steps_oh": m_oh, "steps_ha": m_ha, "ratio": _ratio(m_oh, m_ha),
            "predicted_ratio": variance_ratio(spec.k, h, spec.u, spec.n),
            "ratio_min": float(np.nanmin(ratios)) if not all(map(math.isnan, ratios)) else float("nan"),
            "ratio_max": float(np.nanmax(ratios)) if not all(map(math.isnan, ratios)) else float("nan"),
            "censored_oh": sum(v is None for v in oh), "censored_ha": sum(v is None for v in ha),
        })
    d = None
    if out_dir is not None:
        d = Path(out_dir) / "speedup"
        write_atomic(d / "summary.csv", csv_text(tuple(rows[0]), rows))
        write_atomic(d / "per_seed.csv", csv_text(("seed", "h", "steps_oh", "steps_ha"), per_seed))
        for seed in sorted(results):
            write_atomic(d / "traces" / f"seed{seed}.jsonl", trace_jsonl(results[seed][1]))
        write_atomic(d / "spec.snapshot", spec.snapshot_text())
    return SpeedupResult(rows, per_seed, d)


# ---------------------------------------------------------------------------
# theory verification and plot data
# ---------------------------------------------------------------------------

DEFAULT_THEORY_GRID = tuple((k, h, u) for k in (2, 5, 20) for h in (1, 5, 50) for u in (0.7, 1.0))
THEORY_HEADER = ("k", "h", "u", "analytic_mean", "mc_mean", "mean_se", "analytic_var", "mc_var", "var_se", "pass")
COEFF_HEADER = ("k", "h", "u", "oh_coeff", "ha_coeff", "informal_oh", "informal_ha", "speedup", "pass")


def run_theory_verification(grid=DEFAULT_THEORY_GRID, samples: int = 10**6, seed: int = 0, workers: int = 1,
                            n_sigma: float = 4.0, out_dir=None, snapshot: str = ""):
    """Monte Carlo check of the label-statistic moments plus the regret coefficients.

    A moment row passes when both the mean and the variance lie within
    ``n_sigma`` standard errors of their analytic values. Returns
    ``(moment_rows, coefficient_rows)``.
    """
    rows, coeffs = [], []
    for i, (k, h, u) in enumerate(grid):
        p = LabelProcessParams(k=int(k), n=int(k), h=int(h), u=float(u))
        est = mc_estimate_t_h(p, samples, seed=seed + i, workers=workers)
        am, av = analytic_mean_t_h(p), analytic_var_t_h(p)
        ok = abs(est.mean - am) <= n_sigma * est.mean_se and abs(est.variance - av) <= n_sigma * est.var_se
        rows.append({"k": p.k, "h": p.h, "u": p.u, "analytic_mean": am, "mc_mean": est.mean,
                     "mean_se": est.mean_se, "analytic_var": av, "mc_var": est.variance, "var_se": est.var_se,
                     "pass": "pass" if ok else "fail"})
        rc = regret_coeffs_theorem2(p)
        coeffs.append({"k": p.k, "h": p.h, "u": p.u, "oh_coeff": rc.oh_coeff, "ha_coeff": rc.ha_coeff,
                       "informal_oh": rc.informal_oh, "informal_ha": rc.informal_ha, "speedup": rc.speedup,
                       "pass": "pass" if rc.oh_coeff <= 1 and rc.ha_coeff <= rc.informal_ha else "fail"})
    if out_dir is not None:
        d = Path(out_dir) / "verify-theory"
        write_atomic(d / "summary.csv", csv_text(THEORY_HEADER, rows))
        write_atomic(d / "coefficients.csv", csv_text(COEFF_HEADER, coeffs))
        write_atomic(d / "spec.snapshot", snapshot or f"samples = {samples}\nseed = {seed}\n")
    return rows, coeffs


def plot_series(trace_paths) -> list[dict]:
    """``x, y, series`` rows (time, validation NDCG, trace name) from JSON-lines traces.

    Records without a validation score or with non-positive time are
    dropped, since the series is meant for a log-time axis.
    """
    out = []
    for p in sorted(Path(x) for x in trace_paths):
        with open(p, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                y = rec.get("val_ndcg")
                x = rec.get("time_s")
                if y is None or x is None or x <= 0:
                    continue
                out.append({"x": float(x), "y": float(y), "series": p.stem})
    return out
