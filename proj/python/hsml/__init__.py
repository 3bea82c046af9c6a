"""Episodic meta-learning over heterogeneous tabular tasks.

Thin wrapper over the C++ core. Arrays are float64 numpy arrays; labels are
one-hot rows for classification and real-valued columns for regression.
"""

from ._core import (
    CorpusSplit,
    Episode,
    Error,
    IngestionError,
    InvalidConfig,
    InvalidEpisode,
    InvalidShape,
    InvalidValue,
    IoError,
    Model,
    NumericalFailure,
    TaskDataset,
    UsageError,
    ablation_names,
    build_input_tensor,
    generate_corpus,
    ingest_tabular,
    read_corpus,
    selftest,
    train,
)

__all__ = [
    "CorpusSplit",
    "Episode",
    "Error",
    "IngestionError",
    "InvalidConfig",
    "InvalidEpisode",
    "InvalidShape",
    "InvalidValue",
    "IoError",
    "Model",
    "NumericalFailure",
    "TaskDataset",
    "UsageError",
    "ablation_names",
    "build_input_tensor",
    "generate_corpus",
    "ingest_tabular",
    "read_corpus",
    "selftest",
    "train",
]
