"""Value-directed belief approximation for factored POMDPs."""

__version__ = "0.1.0"
