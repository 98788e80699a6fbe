"""Scrambled codes and HARQ on the AWGN wire-tap channel."""

from ._validation import ConfigurationError
from .analytic import CodeParams, Probability
from .gf2 import BitMatrix, Scrambler, ScramblerPair

__version__ = "0.1.0"

__all__ = ["BitMatrix", "CodeParams", "ConfigurationError", "Probability", "Scrambler", "ScramblerPair"]
