"""Neural operators trained with a learned surrogate of the governing physics."""
__version__ = "0.1.0"
