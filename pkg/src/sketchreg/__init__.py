"""Sketched horseshoe regression: compress (y, X) with a Gaussian sketch, then
sample the horseshoe posterior with an O(m^3 + m^2 p) beta update."""

__version__ = "0.1.0"
