"""Flow analysis, circuit extraction and qudit verification for weighted open graphs."""

__version__ = "0.1.0"
