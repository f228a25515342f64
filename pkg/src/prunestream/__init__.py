"""Lifelong text classification with one shared encoder.

A single transformer encoder is trained over a stream of binary
classification tasks.  After each task the smallest-magnitude weights
(scaled by learned per-node uncertainty) are pruned and handed to the
next task, while a regularizer keeps the weights that earlier tasks
still depend on close to where those tasks left them.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    Example,
    TaskSpec,
    TaskStream,
    generate_synthetic_stream,
    generate_synthetic_texts,
    encode,
    load_tsv_task,
    split_arrays,
)
from .encoder import EncoderConfig, EncoderModel
from .meanfield import MeanFieldMatrix, RegConfig, total_reg
from .metrics import (
    TransferMatrix,
    ablation_suite,
    avg_accuracy_curve,
    backward_transfer,
    build_report,
    evaluate,
    forward_transfer_vs_reinit,
    ordering_study,
)
from .ownership import OwnershipMap, PruneSchedule, partition_check
from .training import TrainConfig, learn_task, run_stream

__version__ = "0.1.0"

__all__ = [
    "EncoderConfig",
    "EncoderModel",
    "Example",
    "MeanFieldMatrix",
    "OwnershipMap",
    "PruneSchedule",
    "RegConfig",
    "TaskSpec",
    "TaskStream",
    "TrainConfig",
    "TransferMatrix",
    "ablation_suite",
    "avg_accuracy_curve",
    "backward_transfer",
    "build_report",
    "encode",
    "evaluate",
    "forward_transfer_vs_reinit",
    "generate_synthetic_stream",
    "generate_synthetic_texts",
    "learn_task",
    "load_checkpoint",
    "load_tsv_task",
    "ordering_study",
    "partition_check",
    "run_stream",
    "save_checkpoint",
    "split_arrays",
    "total_reg",
]
