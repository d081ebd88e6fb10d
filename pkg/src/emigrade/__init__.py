"""EMI noise grading for analog video test frames."""

__version__ = "0.1.0"
