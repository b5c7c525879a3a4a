"""Self-contained PPO-driven encoder-decoder denoising at desk scale.

The package bundles a minimal differentiable tensor core, an
encoder-decoder denoiser, a five-action denoising environment, a PPO/GAE
agent, a synthetic low-dose phantom pipeline, and a trainer/ablation
harness, all on top of numpy in double precision.
"""

__version__ = "0.1.0"

from rldenoise.exceptions import FormatError, InsufficientDataError, NumericError

__all__ = ["FormatError", "InsufficientDataError", "NumericError", "__version__"]
