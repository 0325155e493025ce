"""Interaction-graph data model, segmentation and neighborhood sampling.

The graph holds three node kinds (user, item, group) and five undirected
relations: group-item (GI), group-user (GU), user-item (UI), plus the two
implicit relations user-user (UU) and group-group (GG) derived from shared
items.  GI and UI edges optionally carry integer timestamps; everything is
immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

KINDS = ("user", "item", "group")

RELATIONS = ("GI", "GU", "UI", "UU", "GG")

#: (kind of endpoint a, kind of endpoint b) per relation
RELATION_KINDS: dict[str, tuple[str, str]] = {
    "GI": ("group", "item"),
    "GU": ("group", "user"),
    "UI": ("user", "item"),
    "UU": ("user", "user"),
    "GG": ("group", "group"),
}

#: relations walked when sampling a neighborhood for each node kind
RELATIONS_BY_KIND: dict[str, tuple[str, ...]] = {
    "group": ("GI", "GU", "GG"),
    "user": ("UI", "UU"),
    "item": ("UI",),
}

TIMESTAMPED_RELATIONS = ("GI", "UI")


@dataclass(frozen=True, order=True)
class NodeId:
    kind: str
    index: int

    def key(self) -> str:
        return f"{self.kind}:{self.index}"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown node kind {self.kind!r}")
        if self.index < 0:
            raise ValueError("node index must be non-negative")


class InteractionGraph:
    """Immutable multi-relation graph over users, items and groups.

    ``edges[rel]`` preserves input order (the chronology surrogate when
    timestamps are missing); adjacency lists are precomputed and sorted so
    neighbor queries are deterministic.
    """

    def __init__(
        self,
        counts: Mapping[str, int],
        edges: Mapping[str, Sequence[tuple[int, int]]],
        timestamps: Mapping[str, Sequence[int | None]] | None = None,
    ):
        self.counts = {k: int(counts.get(k, 0)) for k in KINDS}
        for k, n in self.counts.items():
            if n < 0:
                raise ValueError(f"negative count for kind {k}")
        timestamps = timestamps or {}
        self.edges: dict[str, tuple[tuple[int, int], ...]] = {}
        self.timestamps: dict[str, tuple[int | None, ...]] = {}
        for rel in RELATIONS:
            raw = list(edges.get(rel, ()))
            ts = list(timestamps.get(rel, [None] * len(raw)))
            if len(ts) != len(raw):
                raise ValueError(f"{rel}: timestamp list does not match edge list")
            if rel not in TIMESTAMPED_RELATIONS and any(t is not None for t in ts):
                raise ValueError(f"{rel} edges cannot carry timestamps")
            self.edges[rel], self.timestamps[rel] = self._normalize(rel, raw, ts)
        self._adj = self._build_adjacency()

    def _normalize(self, rel, raw, ts):
        ka, kb = RELATION_KINDS[rel]
        same_kind = ka == kb
        seen: set[tuple[int, int]] = set()
        out_edges: list[tuple[int, int]] = []
        out_ts: list[int | None] = []
        for (a, b), t in zip(raw, ts):
            a, b = int(a), int(b)
            if not (0 <= a < self.counts[ka]):
                raise ValueError(f"{rel}: endpoint {a} out of range for kind {ka}")
            if not (0 <= b < self.counts[kb]):
                raise ValueError(f"{rel}: endpoint {b} out of range for kind {kb}")
            if same_kind:
                if a == b:
                    raise ValueError(f"{rel}: self-loop on node {a}")
                a, b = min(a, b), max(a, b)
            if (a, b) in seen:
                continue
            seen.add((a, b))
            out_edges.append((a, b))
            out_ts.append(None if t is None else int(t))
        return tuple(out_edges), tuple(out_ts)

    def _build_adjacency(self):
        adj: dict[str, tuple[dict, dict]] = {}
        for rel, pairs in self.edges.items():
            ka, kb = RELATION_KINDS[rel]
            fwd: dict[int, list[int]] = {}
            bwd: dict[int, list[int]] = {}
            for a, b in pairs:
                fwd.setdefault(a, []).append(b)
                bwd.setdefault(b, []).append(a)
                if ka == kb:
                    fwd.setdefault(b, []).append(a)
                    bwd.setdefault(a, []).append(b)
            adj[rel] = (
                {k: tuple(sorted(v)) for k, v in fwd.items()},
                {k: tuple(sorted(v)) for k, v in bwd.items()},
            )
        return adj

    def neighbors(self, rel: str, kind: str, index: int) -> tuple[int, ...]:
        """Sorted neighbor indices of a node inside one relation."""
        ka, kb = RELATION_KINDS[rel]
        fwd, bwd = self._adj[rel]
        if kind == ka:
            return fwd.get(index, ())
        if kind == kb:
            return bwd.get(index, ())
        raise ValueError(f"kind {kind!r} does not participate in relation {rel}")

    def degree(self, rel: str, kind: str, index: int) -> int:
        return len(self.neighbors(rel, kind, index))

    def relation_timestamped(self, rel: str) -> bool:
        ts = self.timestamps[rel]
        return bool(ts) and all(t is not None for t in ts)

    def num_edges(self, rel: str | None = None) -> int:
        if rel is not None:
            return len(self.edges[rel])
        return sum(len(v) for v in self.edges.values())

    def nodes(self, kind: str) -> Iterable[NodeId]:
        return (NodeId(kind, i) for i in range(self.counts[kind]))

    def with_relations(self, **relations) -> "InteractionGraph":
        """Copy of the graph with the named relations replaced."""
        edges = dict(self.edges)
        ts = dict(self.timestamps)
        for rel, pairs in relations.items():
            if rel not in RELATIONS:
                raise ValueError(f"unknown relation {rel}")
            edges[rel] = tuple(pairs)
            ts[rel] = tuple([None] * len(edges[rel]))
        return InteractionGraph(self.counts, edges, ts)


# ---------------------------------------------------------------------------
# file ingestion
# ---------------------------------------------------------------------------


class IdMap:
    """External-id to dense-index mapping, one namespace per node kind."""

    def __init__(self):
        self.forward: dict[str, dict[str, int]] = {k: {} for k in KINDS}

    def intern(self, kind: str, external: str) -> int:
        table = self.forward[kind]
        idx = table.get(external)
        if idx is None:
            idx = len(table)
            table[external] = idx
        return idx

    def count(self, kind: str) -> int:
        return len(self.forward[kind])

    def save(self, path: Path) -> None:
        lines = []
        for kind in KINDS:
            for ext, idx in sorted(self.forward[kind].items(), key=lambda kv: kv[1]):
                lines.append(f"{kind}\t{ext}\t{idx}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "IdMap":
        mapping = cls()
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected kind<TAB>id<TAB>index")
            kind, ext, idx = parts
            if kind not in KINDS:
                raise ValueError(f"{path}:{lineno}: unknown kind {kind!r}")
            idx = int(idx)
            table = mapping.forward[kind]
            if ext in table and table[ext] != idx:
                raise ValueError(f"{path}:{lineno}: id collision for {kind} {ext!r}")
            table[ext] = idx
        return mapping


def _parse_edge_file(path: Path, with_ts: bool):
    rows = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise FileNotFoundError(f"missing edge file: {path}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        if with_ts and len(parts) == 3:
            a, b, ts = parts
            try:
                rows.append((a, b, int(ts)))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: bad timestamp {ts!r}") from None
        elif len(parts) == 2:
            a, b = parts
            rows.append((a, b, None))
        else:
            raise ValueError(
                f"{path}:{lineno}: expected {2 + int(with_ts)} tab-separated fields, got {len(parts)}"
            )
        if not parts[0] or not parts[1]:
            raise ValueError(f"{path}:{lineno}: empty id")
    return rows


def load_edges(
    user_item: Path, group_item: Path, group_user: Path
) -> tuple[InteractionGraph, IdMap]:
    """Read the three tab-separated edge files into a densely indexed graph.

    Rows are ``left<TAB>right[<TAB>timestamp]``; duplicate rows deduplicate,
    lines starting with ``#`` are ignored, and an empty file yields an empty
    relation.  Returns the graph plus the external-id mapping.
    """
    ids = IdMap()
    ui_rows = _parse_edge_file(user_item, with_ts=True)
    gi_rows = _parse_edge_file(group_item, with_ts=True)
    gu_rows = _parse_edge_file(group_user, with_ts=False)

    ui = [(ids.intern("user", a), ids.intern("item", b), t) for a, b, t in ui_rows]
    gi = [(ids.intern("group", a), ids.intern("item", b), t) for a, b, t in gi_rows]
    gu = [(ids.intern("group", a), ids.intern("user", b), t) for a, b, t in gu_rows]

    counts = {k: ids.count(k) for k in KINDS}
    graph = InteractionGraph(
        counts,
        {
            "UI": [(a, b) for a, b, _ in ui],
            "GI": [(a, b) for a, b, _ in gi],
            "GU": [(a, b) for a, b, _ in gu],
        },
        {
            "UI": [t for _, _, t in ui],
            "GI": [t for _, _, t in gi],
            "GU": [None for _ in gu],
        },
    )
    return graph, ids


def export_edges(graph: InteractionGraph, directory: Path) -> None:
    """Write the observed relations back out as canonical edge files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for rel, name in (("UI", "user_item.tsv"), ("GI", "group_item.tsv"), ("GU", "group_user.tsv")):
        lines = []
        for (a, b), t in zip(graph.edges[rel], graph.timestamps[rel]):
            if rel in TIMESTAMPED_RELATIONS and t is not None:
                lines.append(f"{a}\t{b}\t{t}")
            else:
                lines.append(f"{a}\t{b}")
        (directory / name).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_exported_edges(directory: Path) -> InteractionGraph:
    """Read back files produced by :func:`export_edges` (dense ids already)."""
    graph, _ = load_edges(
        Path(directory) / "user_item.tsv",
        Path(directory) / "group_item.tsv",
        Path(directory) / "group_user.tsv",
    )
    return graph


def save_graph_cache(graph: InteractionGraph, directory: Path) -> None:
    """Persist all five relations (and counts) for later pipeline stages."""
    directory = Path(directory)
    export_edges(graph, directory)
    for rel, name in (("UU", "user_user.tsv"), ("GG", "group_group.tsv")):
        lines = [f"{a}\t{b}" for a, b in graph.edges[rel]]
        (directory / name).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    counts = [f"{k}\t{graph.counts[k]}" for k in KINDS]
    (directory / "counts.tsv").write_text("\n".join(counts) + "\n", encoding="utf-8")


def load_graph_cache(directory: Path) -> InteractionGraph:
    directory = Path(directory)
    counts = {}
    for line in (directory / "counts.tsv").read_text(encoding="utf-8").splitlines():
        kind, n = line.split("\t")
        counts[kind] = int(n)
    edges: dict[str, list[tuple[int, int]]] = {}
    ts: dict[str, list[int | None]] = {}
    files = {
        "UI": ("user_item.tsv", True),
        "GI": ("group_item.tsv", True),
        "GU": ("group_user.tsv", False),
        "UU": ("user_user.tsv", False),
        "GG": ("group_group.tsv", False),
    }
    for rel, (name, with_ts) in files.items():
        rows = _parse_edge_file(directory / name, with_ts)
        edges[rel] = [(int(a), int(b)) for a, b, _ in rows]
        ts[rel] = [t for _, _, t in rows]
    return InteractionGraph(counts, edges, ts)


# ---------------------------------------------------------------------------
# implicit relations
# ---------------------------------------------------------------------------


def _co_interaction_pairs(graph: InteractionGraph, rel: str, threshold: int):
    """Pairs of anchors sharing strictly more than ``threshold`` neighbors."""
    ka, _ = RELATION_KINDS[rel]
    other_to_anchor: dict[int, list[int]] = {}
    for a, b in graph.edges[rel]:
        other_to_anchor.setdefault(b, []).append(a)
    counts: dict[tuple[int, int], int] = {}
    for anchors in other_to_anchor.values():
        anchors = sorted(set(anchors))
        for i in range(len(anchors)):
            for j in range(i + 1, len(anchors)):
                pair = (anchors[i], anchors[j])
                counts[pair] = counts.get(pair, 0) + 1
    return sorted(p for p, c in counts.items() if c > threshold)


def build_implicit(graph: InteractionGraph, c_u: int, c_g: int) -> InteractionGraph:
    """Rebuild UU and GG from shared-item counts (strictly more than c_u/c_g)."""
    if c_u < 0 or c_g < 0:
        raise ValueError("sharing thresholds must be non-negative")
    uu = _co_interaction_pairs(graph, "UI", c_u)
    gg = _co_interaction_pairs(graph, "GI", c_g)
    return graph.with_relations(UU=uu, GG=gg)


# ---------------------------------------------------------------------------
# segmentation into warm / cold evaluation sets
# ---------------------------------------------------------------------------

COLD_ANCHOR_KEEP = 10  # interactions retained per cold group/user
COLD_ITEM_KEEP = 5  # interacting groups/users retained per cold item


@dataclass(frozen=True)
class EvalSplit:
    """Warm/cold node partition plus the cold nodes' chronological edge split.

    ``train_n``/``test_n`` hold cold-anchored GI/UI edges; ``dropped`` holds
    edges removed by the cold-node truncation rules.  ``flagged`` nodes had
    too few retained interactions to evaluate (all edges went to training).
    """

    warm: dict[str, frozenset[int]]
    cold: dict[str, frozenset[int]]
    train_n: dict[str, tuple[tuple[int, int], ...]]
    test_n: dict[str, tuple[tuple[int, int], ...]]
    dropped: dict[str, tuple[tuple[int, int], ...]]
    flagged: dict[str, frozenset[int]]
    n_g: int
    n_u: int
    n_i: int
    c_percent: float

    def is_warm(self, node: NodeId) -> bool:
        return node.index in self.warm[node.kind]

    def warm_nodes(self, kind: str) -> list[int]:
        return sorted(self.warm[kind])

    def cold_nodes(self, kind: str) -> list[int]:
        return sorted(self.cold[kind])

    def test_items(self, rel: str, anchor: int) -> list[int]:
        return sorted(b for a, b in self.test_n[rel] if a == anchor)

    def train_items(self, rel: str, anchor: int) -> list[int]:
        return sorted(b for a, b in self.train_n[rel] if a == anchor)


def _chronological(graph: InteractionGraph, rel: str):
    """Edges of a relation keyed by anchor, in interaction-time order.

    With full timestamps the order is (timestamp, other-endpoint index); ties
    break on the index.  Otherwise file order stands in for chronology.
    """
    timestamped = graph.relation_timestamped(rel)
    per_anchor: dict[int, list[tuple]] = {}
    for pos, ((a, b), t) in enumerate(zip(graph.edges[rel], graph.timestamps[rel])):
        key = (t, b) if timestamped else (pos,)
        per_anchor.setdefault(a, []).append((key, (a, b)))
    return {a: [e for _, e in sorted(rows)] for a, rows in per_anchor.items()}


def segment(
    graph: InteractionGraph, n_g: int, n_u: int, n_i: int, c_percent: float
) -> EvalSplit:
    """Partition nodes into warm/cold sets and split cold edges in time.

    Groups with more than ``n_g`` GI interactions are warm, users analogously
    over UI.  Warm items are those with more than ``n_i`` interactions counted
    only from warm anchors, so cold evaluation data never inflates an item's
    status.  Cold groups/users keep their first ``COLD_ANCHOR_KEEP``
    interactions and cold items their first ``COLD_ITEM_KEEP``; of each cold
    anchor's retained edges, the earliest ``ceil(c_percent * deg)`` (at least
    one) become training edges and the remainder test edges.  Anchors left
    without test edges are flagged and excluded from evaluation.
    """
    if min(n_g, n_u, n_i) < 0:
        raise ValueError("thresholds must be non-negative")
    if not (0.0 < c_percent < 1.0):
        raise ValueError("c_percent must lie in (0, 1)")

    warm_g = frozenset(
        g for g in range(graph.counts["group"]) if graph.degree("GI", "group", g) > n_g
    )
    warm_u = frozenset(
        u for u in range(graph.counts["user"]) if graph.degree("UI", "user", u) > n_u
    )
    cold_g = frozenset(range(graph.counts["group"])) - warm_g
    cold_u = frozenset(range(graph.counts["user"])) - warm_u

    # warm-item rule: count only interactions whose anchor is itself warm
    item_counts = dict.fromkeys(range(graph.counts["item"]), 0)
    for g, i in graph.edges["GI"]:
        if g in warm_g:
            item_counts[i] += 1
    for u, i in graph.edges["UI"]:
        if u in warm_u:
            item_counts[i] += 1
    warm_i = frozenset(i for i, c in item_counts.items() if c > n_i)
    cold_i = frozenset(range(graph.counts["item"])) - warm_i

    chrono = {rel: _chronological(graph, rel) for rel in ("GI", "UI")}
    dropped: dict[str, set[tuple[int, int]]] = {"GI": set(), "UI": set()}

    # cold anchors keep their earliest interactions
    for rel, cold_anchors in (("GI", cold_g), ("UI", cold_u)):
        for a in sorted(cold_anchors):
            edges = chrono[rel].get(a, [])
            dropped[rel].update(edges[COLD_ANCHOR_KEEP:])

    # cold items keep their earliest surviving interactions, pooled over GI+UI
    item_edges: dict[int, list[tuple]] = {}
    for rel in ("GI", "UI"):
        timestamped = graph.relation_timestamped(rel)
        for pos, ((a, b), t) in enumerate(zip(graph.edges[rel], graph.timestamps[rel])):
            if (a, b) in dropped[rel]:
                continue
            key = (t, rel, a) if timestamped else (pos, rel, a)
            item_edges.setdefault(b, []).append((key, rel, (a, b)))
    for i in sorted(cold_i):
        rows = sorted(item_edges.get(i, []))
        for _, rel, edge in rows[COLD_ITEM_KEEP:]:
            dropped[rel].add(edge)

    train_n: dict[str, list[tuple[int, int]]] = {"GI": [], "UI": []}
    test_n: dict[str, list[tuple[int, int]]] = {"GI": [], "UI": []}
    flagged = {"group": set(), "user": set(), "item": set()}

    for rel, cold_anchors, kind in (("GI", cold_g, "group"), ("UI", cold_u, "user")):
        for a in sorted(cold_anchors):
            retained = [e for e in chrono[rel].get(a, []) if e not in dropped[rel]]
            n = len(retained)
            if n == 0:
                flagged[kind].add(a)
                continue
            k = max(1, math.ceil(c_percent * n))
            if n < 2 or k >= n:
                train_n[rel].extend(retained)
                flagged[kind].add(a)
                continue
            train_n[rel].extend(retained[:k])
            test_n[rel].extend(retained[k:])

    return EvalSplit(
        warm={"group": warm_g, "user": warm_u, "item": warm_i},
        cold={"group": cold_g, "user": cold_u, "item": cold_i},
        train_n={rel: tuple(sorted(v)) for rel, v in train_n.items()},
        test_n={rel: tuple(sorted(v)) for rel, v in test_n.items()},
        dropped={rel: tuple(sorted(v)) for rel, v in dropped.items()},
        flagged={k: frozenset(v) for k, v in flagged.items()},
        n_g=n_g,
        n_u=n_u,
        n_i=n_i,
        c_percent=c_percent,
    )


def make_training_graph(graph: InteractionGraph, split: EvalSplit) -> InteractionGraph:
    """Graph visible during training: no dropped edges, no test edges."""
    out_edges = dict(graph.edges)
    out_ts = dict(graph.timestamps)
    for rel in ("GI", "UI"):
        removed = set(split.dropped[rel]) | set(split.test_n[rel])
        kept = [
            (e, t)
            for e, t in zip(graph.edges[rel], graph.timestamps[rel])
            if e not in removed
        ]
        out_edges[rel] = tuple(e for e, _ in kept)
        out_ts[rel] = tuple(t for _, t in kept)
    return InteractionGraph(graph.counts, out_edges, out_ts)


# ---------------------------------------------------------------------------
# episode sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RelationSample:
    """One relation's sampled neighborhood tree around a target node.

    ``layers[l]`` lists the distinct nodes first reached at depth ``l``
    (layer 0 is the target); ``kinds[l]`` gives their node kind.  ``children``
    maps each expanded node to its sampled neighbors, memoized per node so a
    node reappearing at a deeper layer reuses the same sample.
    """

    relation: str
    kinds: tuple[str, ...]
    layers: tuple[tuple[int, ...], ...]
    children: Mapping[tuple[str, int], tuple[int, ...]]

    def edge_count(self) -> int:
        return sum(len(v) for v in self.children.values())

    def all_nodes(self) -> list[tuple[str, int]]:
        """Distinct (kind, index) pairs in first-seen layer order."""
        seen: dict[tuple[str, int], None] = {}
        for kind, layer in zip(self.kinds, self.layers):
            for idx in layer:
                seen.setdefault((kind, idx), None)
        return list(seen)


@dataclass(frozen=True)
class Episode:
    """A masked, sampled neighborhood of one target node.

    Simulates a cold-start view of a warm target: at most K sampled neighbors
    per hop, per relation, so at most K**l nodes reach depth l.
    """

    target: NodeId
    ground_truth_ref: str
    k: int
    depth: int
    seed: int
    samples: Mapping[str, RelationSample]

    def edge_count(self) -> int:
        return sum(s.edge_count() for s in self.samples.values())


def _layer_kinds(rel: str, start_kind: str, depth: int) -> tuple[str, ...]:
    ka, kb = RELATION_KINDS[rel]
    other = {ka: kb, kb: ka}[start_kind]
    kinds = [start_kind]
    for _ in range(depth):
        kinds.append(other)
        start_kind, other = other, start_kind
    return tuple(kinds)


def _sample_relation(
    graph: InteractionGraph, target: NodeId, rel: str, k: int, depth: int, seed: int
) -> RelationSample:
    rng = np.random.default_rng(
        np.random.SeedSequence(
            entropy=seed,
            spawn_key=(
                KINDS.index(target.kind),
                target.index,
                RELATIONS.index(rel),
            ),
        )
    )
    kinds = _layer_kinds(rel, target.kind, depth)
    layers: list[tuple[int, ...]] = [(target.index,)]
    children: dict[tuple[str, int], tuple[int, ...]] = {}
    for level in range(depth):
        kind = kinds[level]
        next_nodes: list[int] = []
        seen: set[int] = set()
        for idx in layers[level]:
            key = (kind, idx)
            if key not in children:
                neigh = graph.neighbors(rel, kind, idx)
                if len(neigh) <= k:
                    picked = neigh
                else:
                    picked = tuple(
                        sorted(rng.choice(len(neigh), size=k, replace=False).tolist())
                    )
                    picked = tuple(neigh[j] for j in picked)
                children[key] = picked
            for child in children[key]:
                if child not in seen:
                    seen.add(child)
                    next_nodes.append(child)
        layers.append(tuple(next_nodes))
        if not next_nodes:
            layers.extend(() for _ in range(depth - level - 1))
            break
    return RelationSample(rel, kinds, tuple(layers[: depth + 1]), children)


def sample_episode(
    graph: InteractionGraph,
    target: NodeId,
    k: int,
    depth: int,
    seed: int,
    relations: Sequence[str] | None = None,
    member_depth_bonus: bool = True,
) -> Episode:
    """Sample a reproducible masked neighborhood around ``target``.

    Layer 1 draws min(K, degree) neighbors uniformly without replacement; each
    deeper layer samples at most K neighbors per frontier node, deduplicated
    per layer.  Group GU trees go one level deeper than ``depth`` (when
    ``member_depth_bonus``) so the sampled members can themselves be embedded
    with a full depth-``depth`` recursion for the member-aggregate channel.
    A zero-degree relation yields empty layers.
    """
    if k < 1 or depth < 1:
        raise ValueError("k and depth must be at least 1")
    if not (0 <= target.index < graph.counts[target.kind]):
        raise ValueError(f"target {target} not in graph")
    rels = tuple(relations) if relations is not None else RELATIONS_BY_KIND[target.kind]
    samples = {}
    for rel in rels:
        d = depth + 1 if (rel == "GU" and target.kind == "group" and member_depth_bonus) else depth
        samples[rel] = _sample_relation(graph, target, rel, k, d, seed)
    return Episode(
        target=target,
        ground_truth_ref=target.key(),
        k=k,
        depth=depth,
        seed=seed,
        samples=samples,
    )


# ---------------------------------------------------------------------------
# synthetic graphs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs for the clustered synthetic benchmark graph.

    ``occasional_fraction`` of the groups interact with items at
    ``occasional_scale`` times the usual probability, producing the activity
    skew that real interaction data has and the cold-start split needs.
    """

    n_users: int = 200
    n_items: int = 300
    n_groups: int = 80
    n_clusters: int = 4
    intra_p: float = 0.15
    inter_p: float = 0.01
    group_size_min: int = 2
    group_size_max: int = 5
    occasional_fraction: float = 0.0
    occasional_scale: float = 1.0
    ts_min: int = 0
    ts_max: int = 100_000
    seed: int = 0

    def validate(self) -> None:
        if min(self.n_users, self.n_items, self.n_groups, self.n_clusters) <= 0:
            raise ValueError("counts must be positive")
        for p in (self.intra_p, self.inter_p, self.occasional_fraction):
            if not (0.0 <= p <= 1.0):
                raise ValueError("probabilities must lie in [0, 1]")
        if not (0.0 <= self.occasional_scale <= 1.0):
            raise ValueError("occasional_scale must lie in [0, 1]")
        if not (1 <= self.group_size_min <= self.group_size_max):
            raise ValueError("bad group size range")
        if self.ts_min > self.ts_max:
            raise ValueError("bad timestamp range")


def generate_synthetic(spec: SyntheticSpec) -> InteractionGraph:
    """Build a clustered bipartite graph with groups inheriting member clusters.

    Users, items and groups are assigned round-robin to latent clusters; an
    interaction edge appears with ``intra_p`` inside a cluster and ``inter_p``
    across clusters.  Timestamps are uniform over the configured range and the
    whole construction is a pure function of the seed.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    user_cluster = np.arange(spec.n_users) % spec.n_clusters
    item_cluster = np.arange(spec.n_items) % spec.n_clusters
    group_cluster = np.arange(spec.n_groups) % spec.n_clusters

    def bipartite(left_cluster, right_cluster, left_scale=None):
        same = left_cluster[:, None] == right_cluster[None, :]
        prob = np.where(same, spec.intra_p, spec.inter_p)
        if left_scale is not None:
            prob = prob * left_scale[:, None]
        hits = rng.random(prob.shape) < prob
        return [(int(a), int(b)) for a, b in np.argwhere(hits)]

    ui = bipartite(user_cluster, item_cluster)
    occasional = rng.random(spec.n_groups) < spec.occasional_fraction
    group_scale = np.where(occasional, spec.occasional_scale, 1.0)
    gi = bipartite(group_cluster, item_cluster, group_scale)

    gu = []
    for g in range(spec.n_groups):
        pool = np.flatnonzero(user_cluster == group_cluster[g])
        size = int(rng.integers(spec.group_size_min, spec.group_size_max + 1))
        if size > pool.size:
            raise ValueError(
                f"group size {size} infeasible: cluster {group_cluster[g]} has {pool.size} users"
            )
        members = rng.choice(pool, size=size, replace=False)
        gu.extend((g, int(u)) for u in sorted(members))

    def stamps(n):
        return rng.integers(spec.ts_min, spec.ts_max + 1, size=n).tolist()

    return InteractionGraph(
        {"user": spec.n_users, "item": spec.n_items, "group": spec.n_groups},
        {"UI": ui, "GI": gi, "GU": gu},
        {"UI": stamps(len(ui)), "GI": stamps(len(gi))},
    )


# ---------------------------------------------------------------------------
# split manifest and stats
# ---------------------------------------------------------------------------

MANIFEST_HEADER = "coldgraph-split v1"


def write_split_manifest(split: EvalSplit, path: Path) -> None:
    lines = [MANIFEST_HEADER]
    lines.append(f"param n_g {split.n_g}")
    lines.append(f"param n_u {split.n_u}")
    lines.append(f"param n_i {split.n_i}")
    lines.append(f"param c_percent {split.c_percent!r}")
    for kind in KINDS:
        for idx in sorted(split.warm[kind]):
            lines.append(f"warm {kind} {idx}")
        for idx in sorted(split.cold[kind]):
            lines.append(f"cold {kind} {idx}")
    for section, table in (("train", split.train_n), ("test", split.test_n), ("drop", split.dropped)):
        for rel in ("GI", "UI"):
            for a, b in table[rel]:
                lines.append(f"{section} {rel} {a} {b}")
    for kind in KINDS:
        for idx in sorted(split.flagged[kind]):
            lines.append(f"flag {kind} {idx}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_split_manifest(path: Path) -> EvalSplit:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or text[0].strip() != MANIFEST_HEADER:
        raise ValueError(f"{path}: not a {MANIFEST_HEADER!r} manifest")
    params: dict[str, str] = {}
    warm = {k: set() for k in KINDS}
    cold = {k: set() for k in KINDS}
    flagged = {k: set() for k in KINDS}
    train = {"GI": [], "UI": []}
    test = {"GI": [], "UI": []}
    dropped = {"GI": [], "UI": []}
    for lineno, line in enumerate(text[1:], 2):
        if not line.strip():
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "param":
            params[parts[1]] = parts[2]
        elif tag in ("warm", "cold", "flag"):
            {"warm": warm, "cold": cold, "flag": flagged}[tag][parts[1]].add(int(parts[2]))
        elif tag in ("train", "test", "drop"):
            table = {"train": train, "test": test, "drop": dropped}[tag]
            table[parts[1]].append((int(parts[2]), int(parts[3])))
        else:
            raise ValueError(f"{path}:{lineno}: unknown record {tag!r}")
    return EvalSplit(
        warm={k: frozenset(v) for k, v in warm.items()},
        cold={k: frozenset(v) for k, v in cold.items()},
        train_n={rel: tuple(sorted(v)) for rel, v in train.items()},
        test_n={rel: tuple(sorted(v)) for rel, v in test.items()},
        dropped={rel: tuple(sorted(v)) for rel, v in dropped.items()},
        flagged={k: frozenset(v) for k, v in flagged.items()},
        n_g=int(params["n_g"]),
        n_u=int(params["n_u"]),
        n_i=int(params["n_i"]),
        c_percent=float(params["c_percent"]),
    )


def stats_summary(graph: InteractionGraph) -> str:
    """Human-readable counts and sparsity figures for a graph."""
    n_u, n_i, n_g = (graph.counts[k] for k in ("user", "item", "group"))
    ui, gi = graph.num_edges("UI"), graph.num_edges("GI")
    ui_sparsity = ui / (n_u * n_i) if n_u and n_i else 0.0
    gi_sparsity = gi / (n_g * n_i) if n_g and n_i else 0.0
    rows = [
        ("Users", f"{n_u:,}"),
        ("Items", f"{n_i:,}"),
        ("Groups", f"{n_g:,}"),
        ("U-I Interactions", f"{ui:,}"),
        ("G-I Interactions", f"{gi:,}"),
        ("U-U Edges", f"{graph.num_edges('UU'):,}"),
        ("G-G Edges", f"{graph.num_edges('GG'):,}"),
        ("G-U Edges", f"{graph.num_edges('GU'):,}"),
        ("U-I Sparsity", f"{100.0 * ui_sparsity:.4f}%"),
        ("G-I Sparsity", f"{100.0 * gi_sparsity:.4f}%"),
    ]
    width = max(len(name) for name, _ in rows)
    return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)
