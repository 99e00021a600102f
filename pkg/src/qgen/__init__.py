"""Robust answer-aware question generation.

Consistency-filtered synthetic augmentation of a QA training corpus, and
overgenerate-and-rank selection by perplexity or a distribution-matching
scorer trained against ROUGE-L targets.
"""

__version__ = "0.1.0"

from qgen.corpus import Dataset, QARecord, load_dataset, minority_subset  # noqa: E402
from qgen.metrics import lcs_length, rouge_1_f1, rouge_l_f1, tokenize  # noqa: E402

__all__ = [
    "Dataset",
    "QARecord",
    "__version__",
    "lcs_length",
    "load_dataset",
    "minority_subset",
    "rouge_1_f1",
    "rouge_l_f1",
    "tokenize",
]
