"""Desk-scale workbench for non-uniform masked-denoising fine-tuning."""

__version__ = "0.1.0"
