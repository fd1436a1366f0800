"""Quantitative MRI parameter identification from undersampled k-space data."""
__version__ = "0.1.0"
