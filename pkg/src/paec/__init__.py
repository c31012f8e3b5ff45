"""Personalized acoustic echo cancellation laboratory.

Hybrid pipeline: delay estimation and subband NLMS linear echo cancellation
followed by a two-stage neural post-filter with speaker conditioning.
"""

__version__ = "0.1.0"
