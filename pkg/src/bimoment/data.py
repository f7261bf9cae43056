"""Bipartite graphs, edge covariates, node attributes, and ingestion.

The graph side of the package is deliberately dense:  at desk scale
(a few thousand nodes per side) an ``m x n`` weight matrix is simpler
and faster than sparse storage, and the fitter's Jacobian needs the
dense cross block anyway.

All containers are immutable after construction and safe to share.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class DegreeVector:
    """Row sums ``d`` (actors) and column sums ``b`` (events) of a graph."""

    d: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "d", _frozen(self.d))
        object.__setattr__(self, "b", _frozen(self.b))
        if not np.isclose(self.d.sum(), self.b.sum()):
            raise DataError("actor and event degree totals disagree")


@dataclass(frozen=True)
class BipartiteGraph:
    """Dense weighted bipartite graph with labelled node sets.

    ``weights[i, j]`` is the (nonnegative, finite) edge weight between
    actor ``i`` and event ``j``; binary graphs contain only 0/1.
    """

    weights: np.ndarray
    actor_labels: tuple
    event_labels: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise DataError("weights must be a nonempty 2-d matrix")
        if not np.all(np.isfinite(w)):
            raise DataError("weights contain non-finite values")
        if np.any(w < 0):
            raise DataError("weights must be nonnegative")
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "actor_labels", tuple(str(a) for a in self.actor_labels))
        object.__setattr__(self, "event_labels", tuple(str(e) for e in self.event_labels))
        if len(self.actor_labels) != w.shape[0]:
            raise DataError("actor label count does not match weight rows")
        if len(self.event_labels) != w.shape[1]:
            raise DataError("event label count does not match weight columns")
        if len(set(self.actor_labels)) != len(self.actor_labels):
            raise DataError("duplicate actor labels")
        if len(set(self.event_labels)) != len(self.event_labels):
            raise DataError("duplicate event labels")

    @property
    def m(self) -> int:
        return self.weights.shape[0]

    @property
    def n(self) -> int:
        return self.weights.shape[1]

    @property
    def is_binary(self) -> bool:
        return bool(np.all((self.weights == 0) | (self.weights == 1)))

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def degrees(self) -> DegreeVector:
        return degrees(self)


@dataclass(frozen=True)
class CovariateTensor:
    """Per-edge covariate vectors ``z_ij`` in R^p.

    ``p = 0`` is the pure bipartite model without covariates.  The sup
    norm bound of the entries is recorded at construction; declaring a
    tighter bound than the data satisfies is an error.
    """

    values: np.ndarray
    bound: float = None
    names: tuple = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3:
            raise DataError("covariates must have shape (m, n, p)")
        if not np.all(np.isfinite(v)):
            raise DataError("covariates contain non-finite values")
        observed = float(np.abs(v).max()) if v.size else 0.0
        if self.bound is None:
            object.__setattr__(self, "bound", observed)
        elif observed > self.bound + 1e-12:
            raise DataError(
                f"covariate magnitude {observed:g} exceeds declared bound {self.bound:g}"
            )
        object.__setattr__(self, "values", _frozen(v))
        if self.names is None:
            object.__setattr__(self, "names", tuple(f"z{k + 1}" for k in range(v.shape[2])))
        else:
            object.__setattr__(self, "names", tuple(self.names))
            if len(self.names) != v.shape[2]:
                raise DataError("covariate name count does not match p")

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def p(self) -> int:
        return self.values.shape[2]

    @classmethod
    def empty(cls, m: int, n: int) -> "CovariateTensor":
        return cls(values=np.zeros((m, n, 0)), bound=0.0)


@dataclass(frozen=True)
class NodeAttributeTable:
    """Categorical attributes for one node side, keyed by node label."""

    columns: tuple
    rows: Mapping[str, Mapping[str, str]] = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "rows", dict(self.rows))

    def get(self, node: str, column: str) -> str:
        try:
            row = self.rows[node]
        except KeyError:
            raise DataError(f"node {node!r} missing from attribute table") from None
        if column not in row:
            raise ConfigError(f"attribute column {column!r} not in table")
        return row[column]

    def __len__(self):
        return len(self.rows)


def degrees(graph: BipartiteGraph) -> DegreeVector:
    """Actor and event degree sequences (row and column sums)."""
    return DegreeVector(d=graph.weights.sum(axis=1), b=graph.weights.sum(axis=0))


def load_edge_list(
    path,
    delimiter: str = "\t",
    mode: str = "binary",
    sum_duplicates: bool = False,
    binarize: bool = False,
    strict: bool = True,
) -> BipartiteGraph:
    """Read a delimited edge list into a graph.

    Rows are ``actor_id <delim> event_id [<delim> weight]`` with weight
    defaulting to 1.  Labels keep first-appearance order.  In ``binary``
    mode a duplicate (actor, event) pair is an error; in ``count`` mode
    duplicates are summed only when ``sum_duplicates`` is set.  With
    ``strict=False`` malformed rows and extra columns are skipped instead
    of raising; ``binarize`` coerces any positive weight to 1 (the usual
    treatment of rating data).
    """
    if mode not in ("binary", "count"):
        raise ConfigError(f"unknown edge-list mode {mode!r}")
    actor_index: dict = {}
    event_index: dict = {}
    entries: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split(delimiter)
            if len(parts) < 2 or (len(parts) > 3 and strict):
                if strict:
                    raise DataError(
                        f"expected 2 or 3 columns, got {len(parts)}", line_number=lineno
                    )
                continue
            actor, event = parts[0].strip(), parts[1].strip()
            if not actor or not event:
                if strict:
                    raise DataError("empty node id", line_number=lineno)
                continue
            if len(parts) >= 3 and parts[2].strip():
                try:
                    weight = float(parts[2])
                except ValueError:
                    if strict:
                        raise DataError(
                            f"bad weight {parts[2]!r}", line_number=lineno
                        ) from None
                    continue
            else:
                weight = 1.0
            if binarize:
                weight = 1.0 if weight > 0 else 0.0
            if not np.isfinite(weight) or weight < 0:
                raise DataError(f"weight {weight!r} out of range", line_number=lineno)
            if mode == "binary" and weight not in (0.0, 1.0):
                raise DataError(
                    f"weight {weight:g} invalid for binary mode", line_number=lineno
                )
            i = actor_index.setdefault(actor, len(actor_index))
            j = event_index.setdefault(event, len(event_index))
            if (i, j) in entries:
                if mode == "binary":
                    raise DataError(
                        f"duplicate edge ({actor}, {event})", line_number=lineno
                    )
                if not sum_duplicates:
                    raise DataError(
                        f"duplicate edge ({actor}, {event}); "
                        "pass sum_duplicates to aggregate",
                        line_number=lineno,
                    )
                entries[(i, j)] += weight
            else:
                entries[(i, j)] = weight
    if not entries:
        raise DataError("no edges in file")
    weights = np.zeros((len(actor_index), len(event_index)))
    for (i, j), w in entries.items():
        weights[i, j] = w
    return BipartiteGraph(
        weights=weights,
        actor_labels=tuple(actor_index),
        event_labels=tuple(event_index),
    )


def save_edge_list(graph: BipartiteGraph, path, delimiter: str = "\t"):
    """Write the graph's nonzero cells as an edge list (round-trips with
    :func:`load_edge_list` for graphs without isolated nodes)."""
    with open(path, "w", encoding="utf-8") as fh:
        rows, cols = np.nonzero(graph.weights)
        for i, j in zip(rows, cols):
            w = graph.weights[i, j]
            fh.write(
                f"{graph.actor_labels[i]}{delimiter}{graph.event_labels[j]}"
                f"{delimiter}{w:.12g}\n"
            )


def load_attribute_table(path, delimiter: str = "\t", id_column: str = None) -> NodeAttributeTable:
    """Read a delimited table with a header row into a node-attribute table.

    The id column defaults to the first header entry; every node must
    appear exactly once.
    """
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline().rstrip("\n").rstrip("\r")
        if not header_line.strip():
            raise DataError("missing header row", line_number=1)
        header = [h.strip() for h in header_line.split(delimiter)]
        if id_column is None:
            id_column = header[0]
        if id_column not in header:
            raise ConfigError(f"id column {id_column!r} not in header {header}")
        id_pos = header.index(id_column)
        rows = {}
        for lineno, raw in enumerate(fh, start=2):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split(delimiter)
            if len(parts) != len(header):
                raise DataError(
                    f"expected {len(header)} columns, got {len(parts)}",
                    line_number=lineno,
                )
            node = parts[id_pos].strip()
            if node in rows:
                raise DataError(f"duplicate node id {node!r}", line_number=lineno)
            rows[node] = {
                col: parts[k].strip() for k, col in enumerate(header) if k != id_pos
            }
    columns = tuple(c for c in header if c != id_column)
    return NodeAttributeTable(columns=columns, rows=rows)


def filter_by_degree(
    graph: BipartiteGraph, min_degree: float, mode: str = "once"
) -> BipartiteGraph:
    """Keep nodes whose degree exceeds ``min_degree`` and take the induced
    subgraph.

    ``once`` evaluates both thresholds on the original graph's degrees (a
    single pass; surviving nodes may fall back below the threshold in the
    subgraph).  ``iterate`` repeats the pass until no node is removed.
    """
    if min_degree < 0:
        raise ConfigError("min_degree must be nonnegative")
    if mode not in ("once", "iterate"):
        raise ConfigError(f"unknown filter mode {mode!r}")
    current = graph
    while True:
        deg = degrees(current)
        keep_a = deg.d > min_degree
        keep_e = deg.b > min_degree
        if not keep_a.any() or not keep_e.any():
            raise DataError("filter removed all nodes")
        changed = (~keep_a).any() or (~keep_e).any()
        if changed:
            current = BipartiteGraph(
                weights=current.weights[np.ix_(keep_a, keep_e)],
                actor_labels=tuple(np.asarray(current.actor_labels)[keep_a]),
                event_labels=tuple(np.asarray(current.event_labels)[keep_e]),
            )
        if mode == "once" or not changed:
            return current


@dataclass(frozen=True)
class MatchMapping:
    """One attribute-match covariate: actors of class ``c`` match events
    whose attribute value is assigned to group ``c``."""

    name: str
    actor_attr: str
    event_attr: str
    groups: Mapping[str, str]

    def __post_init__(self):
        object.__setattr__(self, "groups", dict(self.groups))


def build_match_covariates(
    graph: BipartiteGraph,
    actor_attrs: NodeAttributeTable,
    event_attrs: NodeAttributeTable,
    mappings: Sequence[MatchMapping],
) -> CovariateTensor:
    """Binary match covariates: ``z_ijl = 1`` iff actor ``i``'s class under
    mapping ``l`` equals the group assigned to event ``j``'s attribute value.
    """
    m, n = graph.m, graph.n
    layers = []
    for mapping in mappings:
        actor_class = np.array(
            [actor_attrs.get(a, mapping.actor_attr) for a in graph.actor_labels]
        )
        event_values = [event_attrs.get(e, mapping.event_attr) for e in graph.event_labels]
        event_group = []
        for e_label, value in zip(graph.event_labels, event_values):
            if value not in mapping.groups:
                raise ConfigError(
                    f"mapping {mapping.name!r}: event attribute value {value!r} "
                    f"(event {e_label!r}) has no group assignment"
                )
            event_group.append(mapping.groups[value])
        layer = (actor_class[:, None] == np.array(event_group)[None, :]).astype(float)
        layers.append(layer)
    if not layers:
        return CovariateTensor.empty(m, n)
    values = np.stack(layers, axis=2)
    return CovariateTensor(
        values=values, bound=1.0, names=tuple(mp.name for mp in mappings)
    )
