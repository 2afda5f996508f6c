"""Dictionary learning from random block-wise compressive measurements."""

__version__ = "0.1.0"
