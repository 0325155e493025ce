"""Self-attention embedding enhancer.

The enhancer predicts a node's embedding from nothing but its first-order
neighbors: it smooths the neighbors' layer-0 embeddings with one head of
scaled dot-product self-attention, averages them into one meta embedding per
relation, and fuses the per-relation metas (plus a member-aggregate channel
for groups) with its own soft-attention weights.  The per-relation metas are
what gets injected into the GNN's convolution steps; the fused meta is the
quantity trained against ground-truth embeddings.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import RELATION_KINDS, RELATIONS_BY_KIND, Episode, InteractionGraph
from .model import (
    CHANNELS_BY_KIND,
    FUSION_KEYS,
    aggregate_members,
    fuse_channels,
    xavier_uniform,
)


@dataclass
class EnhancerParams:
    """Single-head, single-layer attention weights plus fusion parameters."""

    d: int
    wq: Tensor
    wk: Tensor
    wv: Tensor
    fusion: dict[str, Tensor]
    member_score: Tensor

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = [
            ("enhancer/wq", self.wq),
            ("enhancer/wk", self.wk),
            ("enhancer/wv", self.wv),
            ("enhancer/member_score", self.member_score),
        ]
        for key in FUSION_KEYS:
            out.append((f"enhancer/fusion_{key}", self.fusion[key]))
        return out

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]


def init_enhancer_params(d: int, rng: np.random.Generator) -> EnhancerParams:
    def p(shape):
        return Tensor(xavier_uniform(rng, shape), requires_grad=True)

    return EnhancerParams(
        d=d,
        wq=p((d, d)),
        wk=p((d, d)),
        wv=p((d, d)),
        fusion={key: p((d, d)) for key in FUSION_KEYS},
        member_score=p((d,)),
    )


def self_attention(neighbor_embs, params: EnhancerParams) -> Tensor:
    """Scaled dot-product self-attention over a set of embeddings.

    Accepts a list of vectors or an (m, d) matrix and returns the smoothed
    (m, d) matrix; one output row per input row.
    """
    if isinstance(neighbor_embs, Tensor):
        x = neighbor_embs
        if x.ndim != 2 or x.shape[0] == 0:
            raise ValueError("self_attention needs a non-empty (m, d) input")
    else:
        rows = list(neighbor_embs)
        if not rows:
            raise ValueError("self_attention needs at least one input")
        x = ad.stack_rows(rows)
    q = ad.matmul(x, params.wq)
    k = ad.matmul(x, params.wk)
    v = ad.matmul(x, params.wv)
    scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(params.d))
    return ad.matmul(ad.softmax(scores), v)


def meta_embed(
    first_order: Mapping[str, Tensor],
    params: EnhancerParams,
    kind: str,
) -> tuple[dict[str, Tensor], Tensor]:
    """Per-relation meta embeddings and their fused combination.

    ``first_order`` maps relation name to the (m, d) matrix of the target's
    first-order neighbor embeddings; relations with no neighbors are simply
    omitted.  For groups the smoothed group-user neighbors additionally feed
    the member-aggregate channel before fusion.
    """
    channels: dict[str, Tensor] = {}
    metas: dict[str, Tensor] = {}
    for rel in RELATIONS_BY_KIND[kind]:
        neigh = first_order.get(rel)
        if neigh is None or neigh.shape[0] == 0:
            continue
        smoothed = self_attention(neigh, params)
        metas[rel] = ad.mean_rows(smoothed)
        channels[rel] = metas[rel]
        if rel == "GU" and kind == "group":
            channels["GU_AGG"] = aggregate_members(
                smoothed, "attention", params.member_score
            )
    if not channels:
        raise ValueError("all relations empty")
    fused, _ = fuse_channels(channels, params.fusion, CHANNELS_BY_KIND[kind])
    return metas, fused


def episode_first_order(episode: Episode, tables) -> dict[str, Tensor]:
    """Gather layer-0 embeddings of an episode's first-order samples."""
    out = {}
    for rel, sample in episode.samples.items():
        if len(sample.layers) < 2 or not sample.layers[1]:
            continue
        neigh_kind = sample.kinds[1]
        out[rel] = ad.gather_rows(tables(neigh_kind), list(sample.layers[1]))
    return out


def episode_metas(
    episode: Episode, tables, params: EnhancerParams
) -> dict[str, Tensor]:
    """Per-relation meta embeddings for one episode target, or {} if isolated."""
    first_order = episode_first_order(episode, tables)
    if not first_order:
        return {}
    metas, _ = meta_embed(first_order, params, episode.target.kind)
    return metas


def _segment_attention_means(
    projected: tuple[Tensor, Tensor, Tensor],
    neigh_lists: list[tuple[int, ...]],
    nodes: list[int],
    m: int,
    d: int,
) -> Tensor:
    """Smoothed-neighbor means for nodes that all have exactly m neighbors.

    Computes only the k*m^2 in-neighborhood attention scores via repeated /
    tiled row gathers, so the result is the per-node attention at linear
    memory.  ``projected`` holds the whole table already multiplied by the
    query/key/value weights.
    """
    k = len(nodes)
    flat = [j for i in nodes for j in neigh_lists[i]]
    q_tab, k_tab, v_tab = projected
    if m == 1:
        # softmax over a single key: the smoothed vector is the value itself
        return ad.gather_rows(v_tab, flat)
    rep, tile = [], []
    for j in range(k):
        block = flat[j * m : (j + 1) * m]
        for r in block:
            rep.extend([r] * m)
            tile.extend(block)
    q = ad.gather_rows(q_tab, rep)
    key = ad.gather_rows(k_tab, tile)
    scores = ad.scale(ad.row_sums(ad.mul(q, key)), 1.0 / math.sqrt(d))
    attn = ad.reshape(ad.softmax(ad.reshape(scores, (k * m, m))), (k * m * m,))
    values = ad.gather_rows(v_tab, tile)
    smoothed = ad.sum_consecutive(ad.scale_rows(values, attn), m)
    return ad.scale(ad.sum_consecutive(smoothed, m), 1.0 / m)


def full_meta_matrices(
    graph: InteractionGraph, tables, params: EnhancerParams
) -> dict[tuple[str, str], Tensor]:
    """All-node meta matrices from complete first-order neighborhoods.

    Rows of zero-degree nodes are zero; their channels are dropped from
    fusion downstream so the placeholder value is never consumed.
    """
    out: dict[tuple[str, str], Tensor] = {}
    projected = {
        k: (
            ad.matmul(tables(k), params.wq),
            ad.matmul(tables(k), params.wk),
            ad.matmul(tables(k), params.wv),
        )
        for k in ("user", "item", "group")
    }
    for kind, rels in RELATIONS_BY_KIND.items():
        n = tables(kind).shape[0]
        for rel in rels:
            ka, kb = RELATION_KINDS[rel]
            neigh_kind = kb if kind == ka else ka
            neigh_lists = [graph.neighbors(rel, kind, i) for i in range(n)]
            by_size: dict[int, list[int]] = {}
            for i, lst in enumerate(neigh_lists):
                if lst:
                    by_size.setdefault(len(lst), []).append(i)
            pieces: list[Tensor] = []
            order: list[int] = []
            for m in sorted(by_size):
                nodes = by_size[m]
                pieces.append(
                    _segment_attention_means(
                        projected[neigh_kind], neigh_lists, nodes, m, params.d
                    )
                )
                order.extend(nodes)
            isolated = [i for i, lst in enumerate(neigh_lists) if not lst]
            if isolated:
                pieces.append(ad.const(np.zeros((len(isolated), params.d))))
                order.extend(isolated)
            stacked = pieces[0] if len(pieces) == 1 else ad.concat(pieces, axis=0)
            inverse = np.empty(n, dtype=int)
            inverse[np.array(order)] = np.arange(n)
            out[(kind, rel)] = ad.gather_rows(stacked, inverse.tolist())
    return out


def cosine_reconstruction_loss(predicted: Tensor, target: np.ndarray) -> Tensor:
    """1 - cos(predicted, target); bounded in [0, 2]."""
    return ad.sub(ad.const(np.ones(())), ad.cosine_similarity(predicted, ad.const(target)))


def train_enhancer(
    episodes: Sequence[Episode],
    ground_truth,
    params: EnhancerParams,
    tables,
    learning_rate: float = 0.001,
    epochs: int = 50,
    batch_size: int = 64,
    rng: np.random.Generator | None = None,
) -> tuple[EnhancerParams, list[float]]:
    """Fit the enhancer to reproduce ground-truth embeddings from neighbors.

    Minimizes the mean cosine reconstruction loss of the fused meta embedding
    over the episode targets by adaptive-moment gradient descent on the
    enhancer parameters only.  Returns the params and the per-epoch loss
    history; zero epochs leaves the parameters untouched.
    """
    from .train import AdamState  # local import: train builds on this module

    rng = rng or np.random.default_rng(0)
    tensors = params.tensors()
    adam = AdamState(tensors, learning_rate)
    losses: list[float] = []
    usable = []
    for ep in episodes:
        if ground_truth.get(ep.ground_truth_ref) is None:
            raise KeyError(f"no ground-truth embedding for {ep.ground_truth_ref}")
        usable.append(ep)
    for _ in range(epochs):
        order = rng.permutation(len(usable))
        epoch_losses = []
        for start in range(0, len(order), batch_size):
            batch = [usable[i] for i in order[start : start + batch_size]]
            with ad.Tape() as tape:
                terms = []
                for ep in batch:
                    first = episode_first_order(ep, tables)
                    if not first:
                        continue
                    _, fused = meta_embed(first, params, ep.target.kind)
                    target = ground_truth.get(ep.ground_truth_ref)
                    terms.append(cosine_reconstruction_loss(fused, target))
                if not terms:
                    continue
                loss = ad.mean_rows(ad.concat(terms))
                grads = tape.backward(loss, tensors)
            adam.step(grads)
            epoch_losses.append(loss.item())
        losses.append(float(np.mean(epoch_losses)) if epoch_losses else math.nan)
    return params, losses
