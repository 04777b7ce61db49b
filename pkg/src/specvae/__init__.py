"""Frequency-domain variational autoencoder for compact semantic audio codes."""

__version__ = "0.1.0"

from .tensor import Tensor, no_grad  # noqa: F401
