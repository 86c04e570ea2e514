"""Checkpointing strategies for FP-Growth (DFT, SMFT, AMFT) and KNN."""

from .amft import AMFTStrategy
from .base import (CTRL_SIZE, CTRL_WIN, TRANS_WIN, FPStrategy, RankStats, TransactionWindow,
                   resident_bytes)
from .disk import DFTStrategy, DiskCheckpoint, DiskCheckpointStore, IoError
from .knn import (KNN_STRATEGIES, AMFTKNNCheckpoint, DiskKNNCheckpoint, KNNCheckpoint,
                  SMFTKNNCheckpoint)
from .policy import (CheckpointKind, CheckpointPolicy, MetadataRecord, amft_decide,
                     should_checkpoint)
from .smft import SMFTStrategy

FT_MODES = ("none", "dft", "smft", "amft")

FP_STRATEGIES = {
    "none": FPStrategy,
    "dft": DFTStrategy,
    "smft": SMFTStrategy,
    "amft": AMFTStrategy,
}

__all__ = [
    "AMFTKNNCheckpoint",
    "AMFTStrategy",
    "CTRL_SIZE",
    "CTRL_WIN",
    "CheckpointKind",
    "CheckpointPolicy",
    "DFTStrategy",
    "DiskCheckpoint",
    "DiskCheckpointStore",
    "DiskKNNCheckpoint",
    "FPStrategy",
    "FP_STRATEGIES",
    "FT_MODES",
    "IoError",
    "KNNCheckpoint",
    "KNN_STRATEGIES",
    "MetadataRecord",
    "RankStats",
    "SMFTKNNCheckpoint",
    "SMFTStrategy",
    "TRANS_WIN",
    "TransactionWindow",
    "amft_decide",
    "resident_bytes",
    "should_checkpoint",
]
