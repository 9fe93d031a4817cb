"""Measure a learner's propensity to forget by simulating its own futures."""
__version__ = "0.1.0"
