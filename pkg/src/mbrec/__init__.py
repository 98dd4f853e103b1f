"""Multi-behavior graph recommender with contrastive learning and
meta-weighted bilevel training."""

__version__ = "0.1.0"
