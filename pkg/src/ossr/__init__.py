"""Open-set fault diagnosis with a deep variational encoder-classifier (DVEC).

Vibration records are fused into time and frequency features, classified by
a variational encoder with a linear softmax head, and screened for unknown
fault types by either an extreme-value (Weibull) or an entropy discriminator.
"""

__version__ = "0.1.0"
