"""Joint entity and relation extraction with adversarial training."""

__version__ = "0.1.0"
