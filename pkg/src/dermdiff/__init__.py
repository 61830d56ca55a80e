"""dermdiff: desk-scale prompt-conditioned diffusion for toy dermatoscopy data.

Subpackages cover the full pipeline: procedural toy data (toyderm), hair
removal and resizing (preprocess), a tape-autodiff tensor core (tensor,
kernels), the variance-exploding noise schedule (scheduler), prompt
conditioning (conditioning), the U-shaped denoiser (denoiser), low-rank
adapters (lora), inference samplers with classifier-free guidance
(samplers), the training loop and checkpoints (trainer, checkpoint), and
the classifier-based evaluation harness (evalkit).  ``dermdiff.cli`` wires
everything into one command.
"""

__version__ = "0.1.0"

CHECKPOINT_FORMAT_VERSION = 1
MANIFEST_SCHEMA_VERSION = 1
