"""Toolkit for predicting scholarly document quality from full-text embeddings."""

__version__ = "0.1.0"
