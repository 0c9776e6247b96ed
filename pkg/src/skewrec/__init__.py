"""skewrec: sequential recommendation with stochastic self-attention.

Attention logits are drawn from a multivariate skew-normal whose correlation
is a learned mixture of co-occurrence, item, and user kernels, trained
end-to-end (numpy, hand-written backward passes) for next-item prediction.
"""

from .config import RunConfig, TrainConfig
from .corpus import (Batch, CoocStats, InteractionLog, SplitDataset, UserSequence,
                     build_cooc, build_sequences, load_interactions, make_batches,
                     sample_negatives, split_leave_one_out)
from .errors import DataError, NumericalError, SkewrecError, UsageError

__version__ = "0.1.0"

__all__ = [
    "Batch", "CoocStats", "InteractionLog", "RunConfig", "SplitDataset",
    "TrainConfig", "UserSequence", "build_cooc", "build_sequences",
    "load_interactions", "make_batches", "sample_negatives",
    "split_leave_one_out", "DataError", "NumericalError", "SkewrecError",
    "UsageError", "__version__",
]
