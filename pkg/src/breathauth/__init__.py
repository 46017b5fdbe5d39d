"""Multimodal breath biometrics: preprocessing, sequence models, and
centroid/EER verification on synthetic breath cohorts."""

__version__ = "0.1.0"
