"""corpus-forge: verified speech-corpus construction from pseudo-labels.

Stages: text normalization, silence-based segmentation of timed token
streams, transcript retrieval (tf-idf sharding + local alignment + WER
filter), speaker/chapter partitioning with limited-supervision subsets,
LM-corpus decontamination, and n-gram language model training/evaluation.
"""

__version__ = "0.1.0"
