"""Evaluation engine for robust semantic segmentation.

Fuses exported decoder logits into class and confidence maps, streams them
through integer accumulators, and reports the semantic, OOD and BRAVO
summary metrics.
"""

__version__ = "0.1.0"
