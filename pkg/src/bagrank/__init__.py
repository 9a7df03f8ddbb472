"""Rank bagging workflows for a new tabular dataset.

Offline: evaluate the 63-workflow grid on a corpus of datasets, extract
metafeatures, and train a gradient-boosted pairwise ranker. Online:
characterize an unseen dataset and return the workflows ranked by
predicted suitability.
"""

__version__ = "0.1.0"
