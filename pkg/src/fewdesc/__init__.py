"""Few-shot classification over local descriptors.

The pipeline: score every support descriptor by contrasting within-class
against cross-class similarity, keep the top fraction per class, then gate
query descriptors with a learned per-descriptor threshold before summing
their class similarities into posteriors. Training adjusts only the small
threshold network, episodically, with hand-derived gradients.
"""

from .core import (
    DegenerateClassError,
    DegenerateDescriptorError,
    DescriptorSet,
    Episode,
    FewdescError,
    InvalidConfigError,
    InvalidInputError,
    NumericalFailureError,
    PoolExhaustedError,
    cosine,
    mean_descriptorwise,
    sigmoid,
    softmax,
)
from .cds import (
    CdsComponents,
    CdsSelection,
    SupportPool,
    cds_components,
    contrastive_scores,
    inter_similarity,
    intra_similarity,
    select_top_k,
    top_k_count,
)
from .query import (
    QueryEvaluation,
    ThresholdMlp,
    class_similarity,
    episode_scores,
    pooled_context,
    predict_threshold,
    query_disc_score,
    weights_map,
)
from .train import (
    AdamState,
    EpisodePool,
    MlpGradients,
    TrainConfig,
    adam_update,
    evaluate,
    learning_rate_at,
    loss_and_gradients,
    meta_train,
    sample_episode,
)
from .harness.io import (
    Checkpoint,
    FormatError,
    load_checkpoint,
    load_descriptor_file,
    merge_pools,
    save_checkpoint,
    save_descriptor_file,
)
from .harness.synth import generate_synthetic_pool
from .harness.oracle import OracleReport, run_oracle_suite
from .harness.gradcheck import GradCheckReport, run_gradient_check

__version__ = "0.1.0"
