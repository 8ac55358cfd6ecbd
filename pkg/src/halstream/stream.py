"""Temporal event logs: ingestion, splitting, batching, synthetic data, shuffles.

An :class:`EventLog` stores edges and label events column-wise in numpy
arrays. Edges are ``(src, dst, t, features)``; label events are
``(node, t, target)`` where ``target`` is a probability vector over
``n_categories``.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import ParseError, SchemaError, ValidationError

SIMPLEX_ATOL = 1e-9
INGEST_SUM_TOL = 1e-6


class TemporalEdge(NamedTuple):
    source: int
    destination: int
    timestamp: float
    features: np.ndarray


class LabelEvent(NamedTuple):
    node: int
    timestamp: float
    target: np.ndarray


def check_simplex(y, atol=SIMPLEX_ATOL):
    """Raise ``ValidationError`` unless ``y`` is a probability vector."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.size == 0:
        raise ValidationError(f"affinity vector must be 1-d and non-empty, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValidationError("affinity vector contains non-finite values")
    if np.any(y < 0):
        raise ValidationError(f"affinity vector has negative component {y.min()!r}")
    s = y.sum()
    if abs(s - 1.0) > atol:
        raise ValidationError(f"affinity vector sums to {s!r}, not 1")
    return y


def _frozen(a, dtype, ndim=1):
    a = np.array(a, dtype=dtype, copy=True)
    if a.ndim != ndim:
        raise ValidationError(f"expected {ndim}-d array, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EventLog:
    """Time-ordered edges plus time-ordered label events.

    Arrays are copied and frozen on construction. Labels are kept sorted by
    ``(timestamp, node)``.
    """

    src: np.ndarray
    dst: np.ndarray
    t: np.ndarray
    features: np.ndarray
    label_node: np.ndarray
    label_t: np.ndarray
    label_target: np.ndarray
    n_categories: int
    n_nodes: int = -1

    def __post_init__(self):
        n_cat = int(self.n_categories)
        if n_cat < 1:
            raise ValidationError("n_categories must be positive")
        src = _frozen(self.src, np.int64)
        dst = _frozen(self.dst, np.int64)
        t = _frozen(self.t, np.float64)
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim == 1 and feats.size == 0:
            feats = feats.reshape(len(t), 0)
        feats = _frozen(feats, np.float64, ndim=2)
        if not (len(src) == len(dst) == len(t) == len(feats)):
            raise ValidationError("edge columns have different lengths")
        if len(t) and (np.any(t < 0) or np.any(np.diff(t) < 0)):
            raise ValidationError("edge timestamps must be non-negative and non-decreasing")

        lnode = np.asarray(self.label_node, dtype=np.int64)
        lt = np.asarray(self.label_t, dtype=np.float64)
        ly = np.asarray(self.label_target, dtype=np.float64)
        if ly.size == 0:
            ly = ly.reshape(0, n_cat)
        if ly.ndim != 2 or ly.shape[1] != n_cat or not (len(lnode) == len(lt) == len(ly)):
            raise ValidationError(f"label targets must have shape (L, {n_cat})")
        if len(lt) and np.any(lt < 0):
            raise ValidationError("label timestamps must be non-negative")
        order = np.lexsort((lnode, lt))
        lnode, lt, ly = lnode[order], lt[order], ly[order]

        n_nodes = int(self.n_nodes)
        if n_nodes < 0:
            ids = [a.max() + 1 for a in (src, dst, lnode) if len(a)]
            n_nodes = int(max(ids)) if ids else 0

        set_ = object.__setattr__
        set_(self, "src", src)
        set_(self, "dst", dst)
        set_(self, "t", t)
        set_(self, "features", feats)
        set_(self, "label_node", _frozen(lnode, np.int64))
        set_(self, "label_t", _frozen(lt, np.float64))
        set_(self, "label_target", _frozen(ly, np.float64, ndim=2))
        set_(self, "n_categories", n_cat)
        set_(self, "n_nodes", n_nodes)

    @classmethod
    def from_records(cls, edges: Sequence[TemporalEdge], labels: Sequence[LabelEvent],
                     n_categories: int, n_nodes: int = -1) -> "EventLog":
        d_e = len(edges[0].features) if edges else 0
        feats = np.array([np.asarray(e.features, dtype=np.float64) for e in edges]).reshape(len(edges), d_e)
        ys = np.array([np.asarray(lab.target, dtype=np.float64) for lab in labels]).reshape(len(labels), n_categories)
        return cls(
            src=[e.source for e in edges], dst=[e.destination for e in edges],
            t=[e.timestamp for e in edges], features=feats,
            label_node=[lab.node for lab in labels], label_t=[lab.timestamp for lab in labels],
            label_target=ys, n_categories=n_categories, n_nodes=n_nodes,
        )

    @property
    def n_edges(self) -> int:
        return len(self.t)

    @property
    def n_labels(self) -> int:
        return len(self.label_t)

    @property
    def edge_dim(self) -> int:
        return self.features.shape[1]

    def edges(self) -> Iterator[TemporalEdge]:
        for i in range(self.n_edges):
            yield TemporalEdge(int(self.src[i]), int(self.dst[i]), float(self.t[i]), self.features[i])

    def labels(self) -> Iterator[LabelEvent]:
        for i in range(self.n_labels):
            yield LabelEvent(int(self.label_node[i]), float(self.label_t[i]), self.label_target[i])

    def select(self, edge_slice: slice, label_mask=None) -> "EventLog":
        """Sub-log with a contiguous edge range and a subset of labels."""
        if label_mask is None:
            label_mask = np.ones(self.n_labels, dtype=bool)
        return EventLog(
            src=self.src[edge_slice], dst=self.dst[edge_slice], t=self.t[edge_slice],
            features=self.features[edge_slice],
            label_node=self.label_node[label_mask], label_t=self.label_t[label_mask],
            label_target=self.label_target[label_mask],
            n_categories=self.n_categories, n_nodes=self.n_nodes,
        )

    def replace(self, **changes) -> "EventLog":
        fields_ = dict(
            src=self.src, dst=self.dst, t=self.t, features=self.features,
            label_node=self.label_node, label_t=self.label_t, label_target=self.label_target,
            n_categories=self.n_categories, n_nodes=self.n_nodes,
        )
        fields_.update(changes)
        return EventLog(**fields_)


def _empty_labels(n_categories):
    return dict(label_node=np.zeros(0, np.int64), label_t=np.zeros(0),
                label_target=np.zeros((0, n_categories)))


def _label_edge_index(edge_t, label_t):
    """Index of the last edge with timestamp <= each label time (clamped to 0)."""
    idx = np.searchsorted(edge_t, label_t, side="right") - 1
    return np.maximum(idx, 0)


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

DEFAULT_EDGE_SCHEMA = {"src": "src", "dst": "dst", "t": "t"}


def ingest_edges_csv(path, schema: Mapping[str, object] | None = None, n_categories: int = 1):
    """Read an edge CSV into an :class:`EventLog`.

    ``schema`` maps the roles ``src``, ``dst``, ``t`` to column names and may
    give ``features`` as an explicit list of column names. By default every
    column named ``f<digits>`` is a feature column.

    Returns ``(log, node_map)`` where ``node_map`` maps raw ids (strings) to
    dense integers in order of first appearance in the file.
    """
    schema = {**DEFAULT_EDGE_SCHEMA, **(schema or {})}
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: file is empty (no header row)") from None
        cols = {}
        for role in ("src", "dst", "t"):
            name = schema[role]
            if name not in header:
                raise SchemaError(f"{path}: missing column {name!r}")
            cols[role] = header.index(name)
        feat_names = schema.get("features")
        if feat_names is None:
            feat_names = [h for h in header if len(h) > 1 and h[0] == "f" and h[1:].isdigit()]
        for name in feat_names:
            if name not in header:
                raise SchemaError(f"{path}: missing column {name!r}")
        feat_cols = [header.index(name) for name in feat_names]

        node_map: dict[str, int] = {}
        src, dst, ts, feats = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                t = float(row[cols["t"]])
            except (ValueError, IndexError):
                raise ParseError(f"non-numeric timestamp {row[cols['t']] if len(row) > cols['t'] else ''!r}",
                                 line=lineno) from None
            if not math.isfinite(t) or t < 0:
                raise ParseError(f"timestamp must be finite and non-negative, got {t!r}", line=lineno)
            try:
                f = [float(row[c]) for c in feat_cols]
            except (ValueError, IndexError):
                raise ParseError("non-numeric feature value", line=lineno) from None
            s, d = row[cols["src"]].strip(), row[cols["dst"]].strip()
            src.append(node_map.setdefault(s, len(node_map)))
            dst.append(node_map.setdefault(d, len(node_map)))
            ts.append(t)
            feats.append(f)

    ts_arr = np.asarray(ts, dtype=np.float64)
    order = np.argsort(ts_arr, kind="stable")
    log = EventLog(
        src=np.asarray(src, dtype=np.int64)[order], dst=np.asarray(dst, dtype=np.int64)[order],
        t=ts_arr[order], features=np.asarray(feats, dtype=np.float64).reshape(len(ts), len(feat_cols))[order],
        n_categories=n_categories, n_nodes=len(node_map), **_empty_labels(n_categories),
    )
    return log, node_map


def _parse_sparse(cell, n_categories, lineno):
    w = np.zeros(n_categories)
    for part in filter(None, (p.strip() for p in cell.split(";"))):
        try:
            cat, val = part.split(":")
            c, v = int(cat), float(val)
        except ValueError:
            raise ParseError(f"malformed sparse entry {part!r}", line=lineno) from None
        if not 0 <= c < n_categories:
            raise ValidationError(f"line {lineno}: category {c} out of range [0, {n_categories})")
        w[c] += v
    return w


def ingest_labels_csv(path, n_categories: int, sparse: bool = False,
                      node_map: Mapping[str, int] | None = None) -> list[LabelEvent]:
    """Read label events; dense ``node,t,w0..w{n-1}`` or sparse ``node,t,cat:w;...``.

    Rows whose weights sum to within 1e-6 of one are renormalized exactly;
    anything further off is rejected rather than silently fixed.
    """
    path = Path(path)
    out = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: file is empty (no header row)") from None
        for name in ("node", "t"):
            if name not in header:
                raise SchemaError(f"{path}: missing column {name!r}")
        ni, ti = header.index("node"), header.index("t")
        if not sparse:
            wcols = []
            for i in range(n_categories):
                if f"w{i}" not in header:
                    raise SchemaError(f"{path}: missing column 'w{i}'")
                wcols.append(header.index(f"w{i}"))
        else:
            rest = [i for i in range(len(header)) if i not in (ni, ti)]
            if not rest:
                raise SchemaError(f"{path}: missing sparse weights column")
            wi = rest[0]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                t = float(row[ti])
            except ValueError:
                raise ParseError(f"non-numeric timestamp {row[ti]!r}", line=lineno) from None
            raw = row[ni].strip()
            if node_map is not None:
                if raw not in node_map:
                    raise ValidationError(f"line {lineno}: unknown node {raw!r}")
                node = node_map[raw]
            else:
                try:
                    node = int(raw)
                except ValueError:
                    raise ParseError(f"non-integer node id {raw!r}", line=lineno) from None
            if sparse:
                w = _parse_sparse(row[wi] if wi < len(row) else "", n_categories, lineno)
            else:
                try:
                    w = np.array([float(row[c]) for c in wcols])
                except ValueError:
                    raise ParseError("non-numeric weight", line=lineno) from None
            if np.any(w < 0):
                raise ValidationError(f"line {lineno}: negative weight {w.min()!r}")
            s = w.sum()
            if abs(s - 1.0) > INGEST_SUM_TOL:
                raise ValidationError(f"line {lineno}: weights sum to {s!r}, exceeds tolerance {INGEST_SUM_TOL}")
            out.append(LabelEvent(node, t, w / s))
    out.sort(key=lambda e: (e.timestamp, e.node))
    return out


def attach_labels(log: EventLog, labels: Sequence[LabelEvent]) -> EventLog:
    n = log.n_categories
    return log.replace(
        label_node=np.array([e.node for e in labels], dtype=np.int64),
        label_t=np.array([e.timestamp for e in labels], dtype=np.float64),
        label_target=np.array([e.target for e in labels], dtype=np.float64).reshape(len(labels), n),
    )


def _fmt(x: float) -> str:
    return repr(float(x))


def write_edges_csv(log: EventLog, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst", "t"] + [f"f{i}" for i in range(log.edge_dim)])
        for i in range(log.n_edges):
            w.writerow([int(log.src[i]), int(log.dst[i]), _fmt(log.t[i])]
                       + [_fmt(x) for x in log.features[i]])


def write_labels_csv(log: EventLog, path, sparse: bool = False) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if sparse:
            w.writerow(["node", "t", "weights"])
        else:
            w.writerow(["node", "t"] + [f"w{i}" for i in range(log.n_categories)])
        for i in range(log.n_labels):
            y = log.label_target[i]
            head = [int(log.label_node[i]), _fmt(log.label_t[i])]
            if sparse:
                w.writerow(head + [";".join(f"{c}:{_fmt(y[c])}" for c in np.flatnonzero(y))])
            else:
                w.writerow(head + [_fmt(v) for v in y])


# ---------------------------------------------------------------------------
# Splitting and batching
# ---------------------------------------------------------------------------

class SplitResult(NamedTuple):
    train: EventLog
    valid: EventLog
    test: EventLog
    empty_split: bool


def chronological_split(log: EventLog, fractions=(0.7, 0.15, 0.15)) -> SplitResult:
    """Partition edges by count into train/valid/test.

    Boundaries are ``floor(cumulative_fraction * n_edges)``; the remainder
    lands in the last split. A label goes to the split holding the last
    edge at or before its timestamp.
    """
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ValidationError(f"split fractions must be three non-negative reals summing to 1, got {fractions!r}")
    m = log.n_edges
    b1 = min(m, math.floor(fr[0] * m + 1e-9))
    b2 = min(m, max(b1, math.floor((fr[0] + fr[1]) * m + 1e-9)))
    bounds = [0, b1, b2, m]

    lidx = _label_edge_index(log.t, log.label_t) if m else np.zeros(log.n_labels, np.int64)
    lsplit = np.searchsorted(np.array([b1, b2]), lidx, side="right")
    parts = [log.select(slice(bounds[i], bounds[i + 1]), lsplit == i) for i in range(3)]
    empty = any(p.n_edges == 0 for p in parts)
    if empty:
        warnings.warn(f"chronological split produced an empty part (sizes {[p.n_edges for p in parts]})",
                      stacklevel=2)
    return SplitResult(*parts, empty_split=empty)


def truncate_train_tail(train: EventLog, keep_fraction: float) -> EventLog:
    if not 0 < keep_fraction <= 1:
        raise ValidationError(f"keep_fraction must be in (0, 1], got {keep_fraction!r}")
    if keep_fraction == 1:
        return train
    m = train.n_edges
    keep = math.ceil(keep_fraction * m - 1e-9)
    start = m - keep
    if m == 0:
        return train
    t0 = train.t[start]
    return train.select(slice(start, m), train.label_t >= t0)


@dataclass(frozen=True, eq=False)
class Batch:
    """A run of consecutive edges and the label events assigned to it."""

    index: int
    src: np.ndarray
    dst: np.ndarray
    t: np.ndarray
    features: np.ndarray
    label_node: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    label_t: np.ndarray = field(default_factory=lambda: np.zeros(0))
    label_target: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def n_edges(self) -> int:
        return len(self.t)

    @property
    def n_labels(self) -> int:
        return len(self.label_t)

    @property
    def has_labels(self) -> bool:
        return len(self.label_t) > 0


def make_batches(log: EventLog, N: int) -> list[Batch]:
    """Cut the log into ``ceil(n_edges / N)`` batches of consecutive edges.

    Each label event goes to the batch holding the last edge whose timestamp
    is at or before the label's; labels preceding every edge go to batch 0.
    """
    if int(N) != N or N < 1:
        raise ValidationError(f"batch size N must be a positive integer, got {N!r}")
    m = log.n_edges
    if m == 0:
        return []
    nb = -(-m // N)
    lbatch = _label_edge_index(log.t, log.label_t) // N
    out = []
    for b in range(nb):
        s = slice(b * N, min(m, (b + 1) * N))
        sel = lbatch == b
        out.append(Batch(
            index=b, src=log.src[s], dst=log.dst[s], t=log.t[s], features=log.features[s],
            label_node=log.label_node[sel], label_t=log.label_t[sel], label_target=log.label_target[sel],
        ))
    return out


def compute_label_density(batches: Sequence[Batch]) -> float:
    """Fraction of batches that carry at least one label event."""
    if len(batches) == 0:
        raise ValidationError("label density is undefined for an empty batch sequence")
    return sum(1 for b in batches if b.has_labels) / len(batches)


# ---------------------------------------------------------------------------
# Synthetic data and perturbations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Constant-preference users interacting with category nodes.

    Category ``c`` is node ``c``; user ``j`` is node ``n_categories + j``.
    """

    n_users: int = 100
    n_categories: int = 20
    k: int = 3
    u: float = 0.9
    events_per_user: int = 500
    label_period: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.n_users < 1 or self.n_categories < 1 or self.events_per_user < 1 or self.label_period < 1:
            raise ValidationError("n_users, n_categories, events_per_user and label_period must be positive")
        if not 1 <= self.k <= self.n_categories:
            raise ValidationError(f"need 1 <= k <= n_categories, got k={self.k}")
        if not 0 < self.u <= 1:
            raise ValidationError(f"observation probability u must be in (0, 1], got {self.u}")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")


def synth_true_sets(spec: SyntheticSpec) -> np.ndarray:
    """The hidden ``(n_users, k)`` true category sets used by :func:`synth_generate`."""
    rng = np.random.default_rng(spec.seed)
    return np.array([rng.choice(spec.n_categories, size=spec.k, replace=False)
                     for _ in range(spec.n_users)], dtype=np.int64).reshape(spec.n_users, spec.k)


def synth_generate(spec: SyntheticSpec) -> EventLog:
    """Generate an event log under the constant-preference label process.

    Users interact round-robin at integer timestamps. With probability
    ``u`` an interaction picks a category uniformly from the user's true
    set, otherwise uniformly from all categories. Every ``label_period``
    interactions a user emits a one-hot label, half a tick after the
    interaction, on its most recent true-set draw.
    """
    U, n, R = spec.n_users, spec.n_categories, spec.events_per_user
    rng = np.random.default_rng(spec.seed)
    true_sets = np.array([rng.choice(n, size=spec.k, replace=False) for _ in range(U)],
                         dtype=np.int64).reshape(U, spec.k)

    signal = rng.random((R, U)) < spec.u
    true_pick = true_sets[np.arange(U)[None, :], rng.integers(0, spec.k, size=(R, U))]
    noise_pick = rng.integers(0, n, size=(R, U))
    cat = np.where(signal, true_pick, noise_pick)

    # forward-fill the latest true-set draw per user; -1 until the first one
    last_true = np.where(signal, true_pick, -1)
    for r in range(1, R):
        row = last_true[r]
        row[row < 0] = last_true[r - 1][row < 0]

    t = np.arange(R * U, dtype=np.float64)
    users = np.tile(np.arange(U, dtype=np.int64), R)
    src = n + users
    dst = cat.reshape(-1)

    emit_r = np.arange(spec.label_period - 1, R, spec.label_period)
    lr, lu = np.meshgrid(emit_r, np.arange(U), indexing="ij")
    lr, lu = lr.reshape(-1), lu.reshape(-1)
    lcat = last_true[lr, lu]
    ok = lcat >= 0
    lr, lu, lcat = lr[ok], lu[ok], lcat[ok]
    targets = np.zeros((len(lcat), n))
    targets[np.arange(len(lcat)), lcat] = 1.0

    return EventLog(
        src=src, dst=dst, t=t, features=np.zeros((R * U, 0)),
        label_node=n + lu, label_t=lr * U + lu + 0.5, label_target=targets,
        n_categories=n, n_nodes=n + U,
    )


def shuffle_edges(log: EventLog, seed) -> EventLog:
    """Permute interaction order while keeping the sorted timestamp column."""
    perm = np.random.default_rng(seed).permutation(log.n_edges)
    return log.replace(src=log.src[perm], dst=log.dst[perm], features=log.features[perm])


def shuffle_targets(log: EventLog, seed) -> EventLog:
    """Permute target vectors across the existing ``(node, t)`` label slots."""
    perm = np.random.default_rng(seed).permutation(log.n_labels)
    return log.replace(label_target=log.label_target[perm])
