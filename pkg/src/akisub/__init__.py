"""ICU AKI risk representation learning and sub-phenotype discovery on synthetic cohorts."""

__version__ = "0.1.0"
