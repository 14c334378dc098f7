"""vilco: a query-incremental video-language continual-learning engine.

Operates on precomputed clip features (or a synthetic stream with known
ground truth) and implements dual episodic memory, narration-alignment SSL,
the usual regularization/replay baselines, and the forgetting-metrics
evaluation protocol.
"""

__version__ = "0.1.0"
