"""filtrank: learn per-image filter aesthetics from pairwise preference labels
and recommend the best-ranked filters for new photos."""

__version__ = "0.1.0"
