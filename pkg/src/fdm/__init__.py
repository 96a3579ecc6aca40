"""Topic modeling by fitting a full dependence mixture to token co-occurrence.

The pipeline: build a corpus, form its bias-corrected pair-probability
matrix, then fit topics and a topic-topic mixing matrix by stochastic
ascent on batches of token pairs sampled from that matrix.
"""

__version__ = "0.1.0"

from .corpus import (
    BowDocument,
    Corpus,
    PreprocessConfig,
    Vocabulary,
    build_corpus,
    corpus_from_lines,
    load_corpus,
    save_corpus,
    split_holdout,
    tokenize,
)
from .cooccurrence import (
    CoocMatrix,
    PairSampler,
    corpus_cooc,
    doc_cooc,
    load_cooc,
    sample_pairs,
    save_cooc,
    unbiasedness_probe,
)
from .evaluation import (
    EvalReport,
    TopicSet,
    anchor_check,
    holdout_loglik,
    kl_project,
    matching_error,
    smooth_topics,
)
from .model import (
    FdmDist,
    FdmParams,
    batch_gradient,
    batch_loss,
    dense_matrix,
    fdm_entry,
    full_loss,
    load_prob_matrix,
    params_from_probs,
    realize,
    save_prob_matrix,
)
from .synthetic import (
    DirichletPrior,
    FixedThetas,
    GroundTruth,
    expected_cooc,
    gen_corpus,
    interval_topics,
)
from .training import (
    AdamState,
    TrainConfig,
    TrainTrace,
    init_params,
    load_checkpoint,
    optimizer_step,
    save_checkpoint,
    train,
)
