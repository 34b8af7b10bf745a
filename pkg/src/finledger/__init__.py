"""Grounded financial fact-ledger toolchain.

Deterministic core of a verifiable financial question-answering stack:
typed fact ledger, double-lock quote grounding, lexically gated retrieval,
adversarial dataset sabotage with family-safe splitting, and the verdict
model's evaluation and loss mathematics. Every model interaction sits behind
a pluggable gateway so the whole pipeline runs offline.
"""

__version__ = "0.1.0"
