"""K-means against ground-truth categories under Euclidean, learned
Mahalanobis and random-forest diffusion representations."""

__version__ = "0.1.0"
