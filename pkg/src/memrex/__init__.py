"""Memory-graph conversational recommendation lab.

Builds and updates a typed user memory graph over structured dialogs,
trains a relational graph-convolution policy on simulator self-play, and
evaluates it offline and online against rule-based and embedding baselines.
"""

__version__ = "0.1.0"
