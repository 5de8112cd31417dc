"""Trajectory prediction from partially observed tracks.

The two-block encoder advances a detection cell on observed steps and a
hidden-only cell on missed ones, so no imputation is needed. Baselines fill
gaps (last, linear, zero) and use a single LSTM encoder.
"""

__version__ = "0.1.0"
