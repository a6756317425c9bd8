"""Plug-in defense for ML malware detectors.

The defense revisits only what the base detector already called benign: a
pair of encoders embeds the perturbable and imperturbable halves of a feature
vector, and a large distance between the two embeddings flips the verdict to
malicious. Detector-malicious verdicts are never touched, so plugging the
defense in can only trade false negatives for false positives, never the
other way.
"""

from malguard.data import (
    BENIGN,
    MALICIOUS,
    Dataset,
    FeatureSpace,
    FeatureVector,
    Sample,
)
from malguard.pipeline import DefenseBundle, DefenseConfig, build, detect
from malguard.quantify import SpacePartition

__all__ = [
    "BENIGN",
    "MALICIOUS",
    "Dataset",
    "DefenseBundle",
    "DefenseConfig",
    "FeatureSpace",
    "FeatureVector",
    "Sample",
    "SpacePartition",
    "build",
    "detect",
]
