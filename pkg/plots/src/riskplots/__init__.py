"""Figure rendering for defaultrisk trajectory CSVs."""

__version__ = "0.1.0"
