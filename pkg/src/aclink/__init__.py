"""Switch-level simulator and control toolbox for a partial-resonance AC-link rectifier."""

from __future__ import annotations

from .frames import DqPair, PllState, ThreePhase, abc_to_dq, dq_to_abc, pll_step
from .params import ConfigError, ConverterParams, DomainError

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ConverterParams", "DomainError", "DqPair", "PllState", "ThreePhase",
    "abc_to_dq", "dq_to_abc", "pll_step", "__version__",
]
