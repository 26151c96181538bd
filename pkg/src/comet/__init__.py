"""Explains x86 basic-block cost-model predictions via feature-preserving
randomized perturbation: which instructions, data dependencies, or the
instruction count keep the model's prediction inside a target band."""

__version__ = "0.1.0"
