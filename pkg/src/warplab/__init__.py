"""warplab: a desk-scale lab for motion-field triggers hidden in augmentation.

The package trains small CNNs whose augmentation pipeline quietly warps a
slice of each mini-batch with per-class flow fields, then measures the
resulting any-to-any backdoor and how standard defenses respond to it.
Everything runs on a self-contained numpy compute core with hand-written
gradients and counter-based randomness.
"""

from .errors import ContractError, DivergenceError, FormatError
from .rng import RngStream

__version__ = "0.1.0"

__all__ = [
    "ContractError",
    "DivergenceError",
    "FormatError",
    "RngStream",
    "__version__",
]
