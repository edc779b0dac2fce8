"""PeCAS: pedestrian collision avoidance from two tiny CNNs and a fused alarm."""

__version__ = "0.1.0"
