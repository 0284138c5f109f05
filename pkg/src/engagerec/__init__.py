"""Engagement recognition toolkit.

Builds binary engaged/disengaged classifiers for 48x48 grayscale face
images: dataset ingest and splitting, a two-dimension human annotation
pipeline (service + aggregation), preprocessing, CNN models with
expression-pretraining transfer, a HOG+SVM baseline, and evaluation.
"""

__version__ = "0.1.0"
