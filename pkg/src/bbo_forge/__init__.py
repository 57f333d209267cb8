"""bbo-forge: trajectory generation, encoding, model training, and model-driven optimization."""

__version__ = "0.1.0"
