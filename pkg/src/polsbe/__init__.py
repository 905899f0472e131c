"""Policy optimization with least-squares bonus exploration in adversarial linear MDPs."""

__version__ = "0.1.0"
