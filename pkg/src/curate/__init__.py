"""Joint sub-batch selection for contrastive training, at desk scale.

Scores super-batches of image/text pairs with learner and reference models,
selects the most learnable sub-batch chunk by chunk, and trains a linear
dual encoder on the selection.  Includes validation oracles for the
samplers, a compute-cost model, and a synthetic-data experiment harness.
"""

from .contrastive import (
    ContrastiveParams,
    EmbeddingBatch,
    LossMatrix,
    grad_sigmoid_nll,
    grad_softmax_nll,
    pairwise_logits,
    sigmoid_nll,
    softmax_nll,
    unconditional_loss,
)
from .data import DatasetBundle, PairedDataset, SyntheticDatasetSpec, generate_dataset
from .flops import (
    FlopModel,
    cost_flexi,
    cost_iid,
    cost_jest,
    iso_flop_budget,
    multires_train_cost_fraction,
    ratio_flexi,
    ratio_jest,
)
from .sampling import (
    SelectionConfig,
    SubBatchSelection,
    enumerate_exact,
    gibbs_chains,
    gibbs_oracle,
    independent_sample,
    joint_score,
    jointly_sample_sigmoid,
    jointly_sample_softmax,
    uniform_sample,
)
from .scoring import (
    CacheFormatError,
    ReferenceCache,
    ScoreMatrix,
    build_scores,
    read_reference_cache,
    write_reference_cache,
)
from .training import (
    AdamState,
    DualEncoderParams,
    TrainConfig,
    TrainMetrics,
    TrainState,
    adam_update,
    encode,
    evaluate,
    init_dual_encoder,
    load_checkpoint,
    save_checkpoint,
    train_step,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "CacheFormatError",
    "ContrastiveParams",
    "DatasetBundle",
    "DualEncoderParams",
    "EmbeddingBatch",
    "FlopModel",
    "LossMatrix",
    "PairedDataset",
    "ReferenceCache",
    "ScoreMatrix",
    "SelectionConfig",
    "SubBatchSelection",
    "SyntheticDatasetSpec",
    "TrainConfig",
    "TrainMetrics",
    "TrainState",
    "adam_update",
    "build_scores",
    "cost_flexi",
    "cost_iid",
    "cost_jest",
    "encode",
    "enumerate_exact",
    "evaluate",
    "generate_dataset",
    "gibbs_chains",
    "gibbs_oracle",
    "grad_sigmoid_nll",
    "grad_softmax_nll",
    "independent_sample",
    "init_dual_encoder",
    "iso_flop_budget",
    "joint_score",
    "jointly_sample_sigmoid",
    "jointly_sample_softmax",
    "load_checkpoint",
    "multires_train_cost_fraction",
    "pairwise_logits",
    "ratio_flexi",
    "ratio_jest",
    "read_reference_cache",
    "save_checkpoint",
    "sigmoid_nll",
    "softmax_nll",
    "train_step",
    "unconditional_loss",
    "uniform_sample",
    "write_reference_cache",
]
