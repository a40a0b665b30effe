"""Domain-invariant network intrusion detection: DANN feature extraction + one-class SVM."""

__version__ = "0.1.0"
