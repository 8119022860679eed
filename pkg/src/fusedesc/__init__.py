"""Compact binary patch descriptors from fused convolutional and DCT features.

The pipeline: 64x64 grayscale patches run through a Siamese convolutional
subnetwork whose flattened features are fused with normalized low-frequency
DCT coefficients of the same patch, producing a B-element descriptor. Sign
quantization turns descriptors into B-bit strings compared by normalized
Hamming distance; evaluation reports the false positive rate at 95% true
positive rate.
"""

from .autodiff import (
    ParameterStore,
    Tape,
    Tensor,
    adagrad_step,
    load_checkpoint,
    save_checkpoint,
)
from .binary import (
    BinaryDescriptor,
    DescriptorSet,
    hamming,
    normalized_hamming,
    read_descriptors,
    sign_quantize,
    write_descriptors,
)
from .dataset import (
    PairSpec,
    PatchStore,
    SyntheticSpec,
    generate_synthetic,
    ingest_brown,
    load_store,
    sample_pairs,
    save_store,
)
from .dct import DctPlan, DctStats, ZigzagOrder, dct2, fit_dct_stats, normalize_coeffs, zigzag_select
from .evaluation import EvalReport, ScoredPair, error_overlap, evaluate, fpr_at_tpr, roc, top_k_errors
from .network import (
    NetworkConfig,
    extract_descriptors,
    feature_counts,
    forward,
    init_params,
    parameter_count,
    siamese_forward,
)
from .training import (
    PreprocStats,
    Sample,
    TrainingConfig,
    fit_preproc_stats,
    load_preproc_stats,
    make_batches,
    pair_loss,
    preprocess_patch,
    save_preproc_stats,
    train,
)

__version__ = "0.1.0"
