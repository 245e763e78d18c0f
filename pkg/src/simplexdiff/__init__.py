"""Text-to-text diffusion on the vocabulary logit simplex, at desk scale."""

__version__ = "0.1.0"
