"""Channel DropBlock lab: a small from-scratch CNN training stack built around
correlation-guided channel dropping, with baseline regularizers, ablation
runners, and inspection tooling."""

__version__ = "0.1.0"
