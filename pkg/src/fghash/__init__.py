"""Fine-grained image hashing: attention-guided erasing augmentation, a
from-scratch convolutional encoder with a tanh hash layer, alternating
discrete optimization of database codes, and exact Hamming retrieval with
MAP evaluation.
"""

from ._kernels import BACKEND

__all__ = ["BACKEND"]
__version__ = "0.1.0"
