"""Numeric tolerances shared by every module."""

from dataclasses import dataclass


@dataclass(frozen=True)
class NumericPolicy:
    validation: float = 1e-9  # state invariants (trace, hermiticity, positivity)
    algebraic: float = 1e-12  # exact algebraic identities
    abort: float = 1e-6  # propagate() gives up beyond this
    leakage: float = 1e-4  # top-two-level population flagged unreliable
    singular_gap: float = 1e-8  # second-smallest singular value for a unique steady state
    kossakowski: float = 1e-9  # PSD threshold for the Lindblad-form check


DEFAULT_POLICY = NumericPolicy()
