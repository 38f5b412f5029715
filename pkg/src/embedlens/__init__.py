"""embedlens: local analysis of a toy vision-language embedding space.

A small dual-encoder transformer with exact reverse-mode gradients, an
embedding-matching optimizer, linear-lens noise analysis of the
representation map, and a noise-based detector of embedding-aligned images,
all reproducible from seeds.
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    autodiff,
    classifier,
    encoder,
    errors,
    harness,
    linear_lens,
    matcher,
    noise_detect,
    numerics,
)
