"""Continuous hand-gesture regression from multichannel emg-style signals.

Recurrent networks (vanilla RNN, GRU, SRU) with hand-derived
backpropagation through time, optional adversarial domain adaptation via a
gradient reversal layer, a signal preprocessing pipeline (alignment,
zero-phase low-pass filtering, sliding windows), intra-session /
inter-session / inter-subject evaluation protocols, and a deterministic
synthetic data generator.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, EmptyOverlapError, MyograspError, NumericError

__all__ = [
    "ConfigError",
    "DataError",
    "EmptyOverlapError",
    "MyograspError",
    "NumericError",
    "__version__",
]
