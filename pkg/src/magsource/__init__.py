"""Source attribution of synthetic face videos via motion magnification.

Two magnified streams of each aligned face window (a learned deep magnifier
and a phase-based Eulerian one) are fused into a 4-channel tensor and
classified by a 3-D CNN; per-window votes are aggregated per video.
"""

__version__ = "0.1.0"
