"""Self-supervised multi-relation GNN engine for cold-start group recommendation."""

from .autodiff import Tape, Tensor, finite_diff_check
from .graph import (
    Episode,
    EvalSplit,
    InteractionGraph,
    NodeId,
    SyntheticSpec,
    build_implicit,
    generate_synthetic,
    load_edges,
    make_training_graph,
    sample_episode,
    segment,
)
from .model import (
    ModelParams,
    aggregate_members,
    conv_step,
    embed_from_episode,
    full_embeddings,
    fuse_channels,
    init_model_params,
    propagate,
    score,
)
from .enhancer import EnhancerParams, init_enhancer_params, meta_embed, self_attention, train_enhancer
from .reconstruction import GroundTruthTable, reconstruction_loss, ssl_loss, train_teacher
from .train import (
    TrainConfig,
    TrainHistory,
    bpr_loss,
    main_loss,
    total_loss,
    train_base,
    train_joint,
    train_pretrain_finetune,
)
from .evaluation import Metrics, evaluate, ndcg_at_k, recall_at_k, recommend_topk

__version__ = "0.1.0"
