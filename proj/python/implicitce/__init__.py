# Copyright 2026 The ImplicitCE Authors
# SPDX-License-Identifier: Apache-2.0
"""Cross-domain user/item co-embeddings trained by sample correlation updates.

The heavy lifting lives in the compiled extension; this package re-exports
its public surface.
"""

from implicitce._core import (  # noqa: F401
    Checkpoint,
    ConvergenceSpec,
    Dataset,
    EvalReport,
    InteractionMatrix,
    Loss,
    MetricSummary,
    Optimizer,
    Preprocess,
    Similarity,
    Split,
    StepResult,
    SyntheticSpec,
    TrainConfig,
    TrainResult,
    Trainer,
    bpr_loss,
    err,
    evaluate,
    generate_synthetic,
    ingest_tsv,
    load_checkpoint,
    mse_loss,
    ndcg,
    pearson,
    per_user_corr_loss,
    recall_at_k,
    run_bias_decay,
    run_convergence,
    run_sample_error,
    sample_corr_loss,
    split_users,
    user_norm_mse_loss,
    write_canonical_tsv,
    write_split_file,
)

__version__ = "0.1.0"
