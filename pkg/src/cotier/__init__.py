"""Co-teaching over confidence tiers for unsupervised domain adaptation.

A source-trained embedding encoder partitions unlabeled target data into
confidence tiers by recursive density peeling; a teacher and several student
models then co-teach each other across tiers, each shadowed by a temporally
averaged copy of itself. Everything runs at desk scale on synthetic identity
data.
"""

from .clustering import (
    ClusterResult,
    EpsSchedule,
    GranularityPartition,
    average_fscore,
    dbscan,
    pairwise_fscore,
    partition_granularity,
)
from .config import RunConfig
from .coteach import (
    MeanTeacherState,
    ModelState,
    ReliableSelection,
    TierView,
    ValidationProbe,
    ema_update,
    run_mcn,
    run_paradigm,
    select_reliable,
)
from .encoder import (
    Embedding,
    EncoderParams,
    backward,
    embed_batch,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
)
from .errors import (
    ConfigError,
    CotierError,
    InsufficientIdentitiesError,
    NoNegativesError,
    NumericError,
    ShapeError,
)
from .evalmetrics import MetricsReport, RetrievalSplit, evaluate
from .losses import PKBatch, pairwise_distances, sample_pk_batch, triplet_loss_batch_hard
from .pipeline import (
    ExperimentResult,
    adapt_finetune,
    build_partition,
    run_coteach,
    run_experiment,
    run_trend,
    sweep_granularity,
    train_source,
)
from .synthdata import DomainSpec, SyntheticDataset, generate, load_dataset, make_benchmark, save_dataset

__version__ = "0.1.0"
