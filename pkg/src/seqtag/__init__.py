"""Multi-task sequence tagging engine.

Trains stacked bidirectional recurrent networks with hard parameter
sharing across tasks and a softmax or linear-chain CRF head per task,
plus the surrounding tooling: CoNLL corpus handling, embedding
management, label-scheme utilities, evaluation metrics, and random
hyper-parameter search.
"""

__version__ = "0.1.0"

from seqtag.exceptions import ConfigError, DataError, NumericError, SeqtagError

__all__ = ["ConfigError", "DataError", "NumericError", "SeqtagError", "__version__"]
