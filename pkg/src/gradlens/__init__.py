"""gradlens: desk-scale diagnostics for gradient imbalance in multi-task
policy-gradient training.

Small analytic policies trained with group-relative advantages on synthetic
task suites, instrumented with an unbiased squared-gradient-norm probe,
gradient-proportional task scheduling, learning-gain metrics, and a convex
quadratic bench where the norm/progress bounds are exact.
"""

__version__ = "0.1.0"
