"""ccrk: one-to-K contrastive alignment lab.

Library + CLI for multilingual image-text embedding alignment: contrastive
objectives with analytic gradients, hard-sample mining, retrieval
consistency metrics (Recall@K and mean rank variance), alignment-geometry
sweeps, and a desk-scale trainer over seeded synthetic corpora.
"""

from .corpus import (
    MultilingualCorpus,
    SyntheticConfig,
    TokenCorpus,
    generate_synthetic,
    load_corpus,
    load_tokens,
    normalize_corpus,
    save_corpus,
    save_tokens,
)
from .geometry import (
    AngleSample,
    TripleConfig,
    lemma_sweep,
    omega_angle,
    theta_angle,
)
from .losses import (
    CmlmHead,
    LossConfig,
    LossReport,
    MitmHead,
    PretrainHeads,
    cl_1to1,
    cmlm_loss,
    combined_loss,
    kcl_i2t,
    kcl_t2i,
    mask_tokens,
    mitm_loss,
)
from .metrics import (
    MetricsReport,
    RankTable,
    RerankConfig,
    compute_ranks,
    metrics_report,
    mrv,
    oracle_scorer,
    recall_at_k,
    rerank_top_n,
)
from .mining import (
    MinedSamples,
    MiningDistribution,
    hard_negative_image_dist,
    hard_negative_text_dist,
    hard_positive_dist,
    sample,
)
from .numerics import Rng, finite_diff_grad, log_sum_exp, normalize_rows
from .trainer import (
    ComparisonReport,
    ToyModel,
    TrainConfig,
    TrainTrace,
    compare_modes,
    export_embeddings,
    train,
)

__version__ = "0.1.0"
