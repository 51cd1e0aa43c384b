"""Error-based knockoff inference for controlled feature selection."""
__version__ = "0.1.0"
