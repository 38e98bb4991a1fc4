"""Rectal MRI EVI/MFI classification pipeline at desk scale.

Patch extraction, frequency-domain harmonization, slice-feature fusion,
shallow classifiers, a toy-scale SE-ResNet and bootstrap evaluation.
"""

__version__ = "0.1.0"
