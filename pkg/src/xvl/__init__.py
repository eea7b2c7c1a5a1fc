"""xvl - desk-scale cross-attention vision-language pre-training and zero-shot oversight."""

__version__ = "0.1.0"
