"""Embedding-reconstruction pretext task.

A fully trained teacher model supplies ground-truth embeddings for warm
nodes; the training model then has to reproduce them from masked episode
neighborhoods, which teaches the convolution (and the enhancer, when active)
to embed nodes well from very few observed interactions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .enhancer import EnhancerParams, episode_metas
from .graph import Episode, EvalSplit, InteractionGraph, NodeId
from .model import FullState, ModelParams, embed_from_episode

log = logging.getLogger("coldgraph")


@dataclass
class GroundTruthTable:
    """Reconstruction targets for warm nodes, keyed by ``kind:index``."""

    d: int
    vectors: dict[str, np.ndarray]
    provenance: str

    def get(self, key: str) -> np.ndarray | None:
        return self.vectors.get(key)

    def __contains__(self, key: str) -> bool:
        return key in self.vectors

    def covers(self, split: EvalSplit) -> bool:
        for kind in ("group", "user", "item"):
            for idx in split.warm[kind]:
                if f"{kind}:{idx}" not in self.vectors:
                    return False
        return True

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        out = [("teacher/_d", np.asarray([float(self.d)]))]
        for key in sorted(self.vectors):
            out.append((f"teacher/{key}", self.vectors[key]))
        return out

    @classmethod
    def from_named_tensors(cls, tensors: Mapping[str, np.ndarray], provenance: str):
        d = int(tensors["teacher/_d"][0])
        vectors = {
            name.removeprefix("teacher/"): np.asarray(arr)
            for name, arr in tensors.items()
            if name.startswith("teacher/") and name != "teacher/_d"
        }
        return cls(d=d, vectors=vectors, provenance=provenance)


def reconstruction_loss(predicted, target) -> float | Tensor:
    """1 - cosine(predicted, target); 0 iff aligned, 2 iff opposite.

    Tensor input stays on the tape; plain arrays return a float.
    """
    if isinstance(predicted, Tensor):
        return ad.sub(
            ad.const(np.ones(())),
            ad.cosine_similarity(predicted, target if isinstance(target, Tensor) else ad.const(target)),
        )
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    np_, nt = np.linalg.norm(p), np.linalg.norm(t)
    if np_ == 0.0 or nt == 0.0:
        raise ValueError("degenerate norm: cosine of a zero vector")
    return float(1.0 - (p @ t) / (np_ * nt))


def layer_sum_table(state: FullState, split: EvalSplit, provenance: str) -> GroundTruthTable:
    """Ground truth per warm node: the sum of its per-step fused embeddings."""
    if state.layer_sums is None:
        raise ValueError("forward state was computed without layer sums")
    vectors: dict[str, np.ndarray] = {}
    for kind in ("group", "user", "item"):
        sums = np.array(state.layer_sums[kind].data)
        for idx in sorted(split.warm[kind]):
            vectors[f"{kind}:{idx}"] = sums[idx]
    d = next(iter(vectors.values())).shape[0] if vectors else 0
    return GroundTruthTable(d=d, vectors=vectors, provenance=provenance)


def train_teacher(split: EvalSplit, graph: InteractionGraph, config) -> GroundTruthTable:
    """Train the plain base GNN on the warm data and freeze its embeddings.

    The teacher never masks neighborhoods and never uses the enhancer; its
    per-node target is the layer sum h^0 + ... + h^L computed over the full
    training-graph adjacency.
    """
    from dataclasses import replace

    from .train import train_base  # deferred: train drives the shared loop

    if not any(split.warm[k] for k in ("group", "user", "item")):
        raise ValueError("warm sets are empty; nothing to teach from")
    teacher_config = replace(config, epochs=config.teacher_epochs)
    params, state = train_base(teacher_config, split, graph, need_layer_sums=True)
    provenance = f"{config.backbone}-layersum-L{config.L}-seed{config.seed}"
    table = layer_sum_table(state, split, provenance)
    bad = [k for k, v in table.vectors.items() if not np.all(np.isfinite(v)) or not np.linalg.norm(v) > 0]
    if bad:
        raise ValueError(f"teacher produced degenerate ground truth for {bad[:5]}")
    return table


def reconstruction_terms(
    episodes: Sequence[Episode],
    params: ModelParams,
    enhancer_params: EnhancerParams | None,
    gt: GroundTruthTable,
    full_state: FullState | None = None,
) -> list[Tensor]:
    """Per-target cosine reconstruction losses for a batch of episodes.

    With ``full_state`` given the prediction is the target's full-neighborhood
    embedding (the unmasked ablation); otherwise it is the masked episode
    propagation, optionally meta-injected.
    """
    terms = []
    for ep in episodes:
        target = gt.get(ep.ground_truth_ref)
        if target is None:
            raise KeyError(f"no ground-truth embedding for {ep.ground_truth_ref}")
        if full_state is not None:
            h = ad.mean_rows(
                ad.gather_rows(full_state.fused[ep.target.kind], [ep.target.index])
            )
        else:
            metas = {}
            if enhancer_params is not None:
                metas = episode_metas(ep, params.table, enhancer_params)
            h, _ = embed_from_episode(ep, params, metas=metas)
        terms.append(reconstruction_loss(h, target))
    return terms


def ssl_loss(
    group_batch: Sequence[Episode],
    user_batch: Sequence[Episode],
    item_batch: Sequence[Episode],
    params: ModelParams,
    enhancer_params: EnhancerParams | None,
    gt: GroundTruthTable,
    full_state: FullState | None = None,
) -> tuple[Tensor, dict[str, float]]:
    """Joint reconstruction loss: group + user + item batch means.

    Each term is the mean of per-target cosine losses, so the total is
    bounded by 6.  An empty batch contributes 0 with a warning.
    """
    total = ad.const(np.zeros(()))
    parts: dict[str, float] = {}
    for name, batch in (("group", group_batch), ("user", user_batch), ("item", item_batch)):
        if not batch:
            log.warning("ssl_loss: empty %s batch contributes 0", name)
            parts[name] = 0.0
            continue
        terms = reconstruction_terms(batch, params, enhancer_params, gt, full_state)
        term = ad.mean_rows(ad.concat(terms))
        parts[name] = term.item()
        total = ad.add(total, term)
    return total, parts


def pick_ssl_targets(
    split: EvalSplit, count: int, rng: np.random.Generator
) -> dict[str, list[NodeId]]:
    """Sample warm reconstruction targets for one epoch, per node kind."""
    out: dict[str, list[NodeId]] = {}
    for kind in ("group", "user", "item"):
        warm = split.warm_nodes(kind)
        if not warm:
            out[kind] = []
            continue
        take = min(count, len(warm))
        chosen = rng.choice(len(warm), size=take, replace=False)
        out[kind] = [NodeId(kind, warm[i]) for i in sorted(chosen.tolist())]
    return out
