"""Block-factorized masked-diffusion transcription at desk scale."""

__version__ = "0.1.0"
