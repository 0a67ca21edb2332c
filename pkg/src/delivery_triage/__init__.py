"""Delivery-issue triage engine.

Classifies customer feedback comments into delivery-issue categories,
verifies package-damage claims from uploaded images with a two-stage
classifier plus a gradient-weighted activation heatmap, and fuses both
signals into auto-resolve / escalate decisions for human analysts.
"""

__version__ = "0.1.0"
