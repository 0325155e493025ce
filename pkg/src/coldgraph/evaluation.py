"""Top-k recommendation, ranking metrics and the complexity report.

Evaluation follows the cold-start protocol: each cold group is embedded from
its few training-time edges only, ranks the full item catalogue minus those
training positives, and is scored against its held-out test items with
Recall@k and binary-relevance NDCG@k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .graph import EvalSplit, InteractionGraph, NodeId

ANCHOR_RELATION = {"group": "GI", "user": "UI"}


def _state_arrays(state) -> dict[str, np.ndarray]:
    if hasattr(state, "arrays"):
        return state.arrays()
    return {k: np.asarray(v, dtype=np.float64) for k, v in state.items()}


def recommend_topk(
    state, anchor: NodeId, k: int, exclude: set[int] | frozenset[int] = frozenset()
) -> list[int]:
    """Items ranked by inner-product score, best first, excluding ``exclude``.

    Ties break toward the lower item index; asking for more items than exist
    returns everything that is rankable.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    arrays = _state_arrays(state)
    scores = arrays[anchor.kind][anchor.index] @ arrays["item"].T
    candidates = [i for i in range(scores.shape[0]) if i not in exclude]
    candidates.sort(key=lambda i: (-scores[i], i))
    return candidates[:k]


def recall_at_k(ranked: Sequence[int], relevant: set[int], k: int) -> float:
    """|top-k hits| / |relevant|."""
    if not relevant:
        raise ValueError("relevant set is empty")
    top = list(ranked)[:k]
    return len(set(top) & set(relevant)) / len(relevant)


def ndcg_at_k(ranked: Sequence[int], relevant: set[int], k: int) -> float:
    """Binary-relevance NDCG with a 1/log2(rank+1) discount."""
    if not relevant:
        raise ValueError("relevant set is empty")
    relevant = set(relevant)
    dcg = 0.0
    for rank, item in enumerate(list(ranked)[:k], start=1):
        if item in relevant:
            dcg += 1.0 / math.log2(rank + 1)
    ideal = sum(1.0 / math.log2(r + 1) for r in range(1, min(len(relevant), k) + 1))
    return dcg / ideal


@dataclass
class Metrics:
    recall_at_k: float
    ndcg_at_k: float
    k: int
    evaluated: int
    per_node: list[tuple[str, int, float, float, int]] = field(default_factory=list)

    def to_csv(self, seed: int) -> str:
        header = "seed,k,recall,ndcg,evaluated"
        row = f"{seed},{self.k},{self.recall_at_k!r},{self.ndcg_at_k!r},{self.evaluated}"
        return header + "\n" + row + "\n"

    def per_node_csv(self) -> str:
        lines = ["kind,index,recall,ndcg,test_items"]
        for kind, idx, rec, ndcg, n_test in self.per_node:
            lines.append(f"{kind},{idx},{rec!r},{ndcg!r},{n_test}")
        return "\n".join(lines) + "\n"


def evaluate(
    state,
    split: EvalSplit,
    k: int = 20,
    kinds: Sequence[str] = ("group",),
) -> Metrics:
    """Mean Recall@k / NDCG@k over the cold anchors that have test items.

    The candidate set is every item minus the anchor's own training
    positives; flagged anchors (no held-out edges) are skipped.
    """
    arrays = _state_arrays(state)
    per_node = []
    recalls = []
    ndcgs = []
    for kind in kinds:
        rel = ANCHOR_RELATION[kind]
        test_by_anchor: dict[int, set[int]] = {}
        for a, b in split.test_n[rel]:
            test_by_anchor.setdefault(a, set()).add(b)
        train_by_anchor: dict[int, set[int]] = {}
        for a, b in split.train_n[rel]:
            train_by_anchor.setdefault(a, set()).add(b)
        for a in sorted(split.cold[kind]):
            relevant = test_by_anchor.get(a)
            if not relevant or a in split.flagged[kind]:
                continue
            ranked = recommend_topk(
                arrays, NodeId(kind, a), k, frozenset(train_by_anchor.get(a, set()))
            )
            rec = recall_at_k(ranked, relevant, k)
            ndcg = ndcg_at_k(ranked, relevant, k)
            per_node.append((kind, a, rec, ndcg, len(relevant)))
            recalls.append(rec)
            ndcgs.append(ndcg)
    if not recalls:
        raise ValueError("no evaluable cold anchors (empty test split)")
    return Metrics(
        recall_at_k=float(np.mean(recalls)),
        ndcg_at_k=float(np.mean(ndcgs)),
        k=k,
        evaluated=len(recalls),
        per_node=per_node,
    )


# ---------------------------------------------------------------------------
# complexity / instrumentation report
# ---------------------------------------------------------------------------


def convergence_epoch(totals: Sequence[float], tol: float = 0.001, streak: int = 3) -> int:
    """First epoch after which the loss improved < ``tol`` (relative) for
    ``streak`` consecutive epochs; falls back to the last epoch."""
    run = 0
    for i in range(1, len(totals)):
        prev = abs(totals[i - 1])
        improvement = (totals[i - 1] - totals[i]) / prev if prev > 0 else 0.0
        run = run + 1 if improvement < tol else 0
        if run >= streak:
            return i + 1
    return len(totals)


@dataclass
class ComplexityReport:
    total_edges: int
    masked_edges_mean: float
    masked_edges_max: int
    base_epoch_seconds: float
    ssl_epoch_seconds: float
    base_convergence_epoch: int
    ssl_convergence_epoch: int

    @property
    def time_ratio(self) -> float:
        if self.base_epoch_seconds == 0:
            return math.inf
        return self.ssl_epoch_seconds / self.base_epoch_seconds

    @property
    def masked_ratio(self) -> float:
        if self.total_edges == 0:
            return math.inf
        return self.masked_edges_mean / self.total_edges

    def to_text(self) -> str:
        rows = [
            ("component", "base model", "with reconstruction"),
            (
                "adjacency normalization (edges touched)",
                f"{2 * self.total_edges}",
                f"{2 * self.total_edges} + {self.masked_edges_mean:.0f}/epoch masked",
            ),
            (
                "graph convolution (s/epoch)",
                f"{self.base_epoch_seconds:.3f}",
                f"{self.ssl_epoch_seconds:.3f}",
            ),
            ("pairwise ranking objective", "yes", "yes"),
            (
                "self-supervised objective",
                "-",
                f"masked edges/epoch mean={self.masked_edges_mean:.0f} max={self.masked_edges_max}",
            ),
            (
                "convergence epochs",
                f"{self.base_convergence_epoch}",
                f"{self.ssl_convergence_epoch}",
            ),
            ("per-epoch time ratio", "1.00", f"{self.time_ratio:.2f}"),
            (
                "masked/total edge ratio",
                "-",
                f"{self.masked_ratio:.4f}",
            ),
        ]
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        lines = []
        for i, row in enumerate(rows):
            lines.append("  ".join(col.ljust(widths[j]) for j, col in enumerate(row)))
            if i == 0:
                lines.append("  ".join("-" * widths[j] for j in range(3)))
        return "\n".join(lines)

    def to_csv(self) -> str:
        header = (
            "total_edges,masked_edges_mean,masked_edges_max,"
            "base_epoch_seconds,ssl_epoch_seconds,time_ratio,"
            "base_convergence_epoch,ssl_convergence_epoch"
        )
        row = (
            f"{self.total_edges},{self.masked_edges_mean!r},{self.masked_edges_max},"
            f"{self.base_epoch_seconds!r},{self.ssl_epoch_seconds!r},{self.time_ratio!r},"
            f"{self.base_convergence_epoch},{self.ssl_convergence_epoch}"
        )
        return header + "\n" + row + "\n"


def complexity_report(
    ssl_history,
    base_history,
    graph: InteractionGraph,
    masked_edge_counts: Sequence[int] | None = None,
) -> ComplexityReport:
    """Compare a reconstruction-enabled run against its base-model twin.

    ``masked_edge_counts`` defaults to the per-epoch counts recorded in the
    reconstruction run's history.
    """
    if not ssl_history.epochs or not base_history.epochs:
        raise ValueError("missing history")
    if masked_edge_counts is None:
        masked_edge_counts = [e.masked_edges for e in ssl_history.epochs]
    counts = list(masked_edge_counts) or [0]
    return ComplexityReport(
        total_edges=graph.num_edges(),
        masked_edges_mean=float(np.mean(counts)),
        masked_edges_max=int(max(counts)),
        base_epoch_seconds=base_history.mean_seconds(),
        ssl_epoch_seconds=ssl_history.mean_seconds(),
        base_convergence_epoch=convergence_epoch(base_history.totals()),
        ssl_convergence_epoch=convergence_epoch(ssl_history.totals()),
    )
