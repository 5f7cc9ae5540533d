"""Unsupervised traffic accident detection on optical-flow fields and box tracks.

The pipeline jointly reconstructs per-frame optical flow and predicts future
object bounding boxes, augments both motion representations with a learned
memory of normal traffic patterns, and fuses reconstruction error with
prediction variance into a per-frame anomaly score.
"""

from tad.config import TrainConfig

__version__ = "0.1.0"

__all__ = ["TrainConfig", "__version__"]
