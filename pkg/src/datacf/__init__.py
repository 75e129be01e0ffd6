"""Per-sample causal effects of training-set interventions on classifier correctness."""

__version__ = "0.1.0"
